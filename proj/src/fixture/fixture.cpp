#include "styleforge/fixture.hpp"

#include <cctype>
#include <set>

#include "styleforge/error.hpp"
#include "styleforge/io.hpp"

namespace styleforge::fixture {

using synfeat::ParseTree;
using Words = std::vector<std::string>;

namespace {

// Word lists and habits of one imitation author. Every slot draws from the
// author's own list with probability `own`, otherwise from the shared list.
struct Grammar {
  std::string title;
  Words names;  // may hold "Mr. Bumble" style multi-word names
  Words nouns;
  Words plurals;
  Words adjectives;
  Words intransitive;
  Words transitive;
  Words speech;
  Words cognition;
  Words adverbs;
  Words interjections;
  double own = 0.6;
  double dialogue = 0.2;
  double exclaim = 0.1;
  double first_person = 0.1;
  double name_subject = 0.3;
  double intro = 0.2;
  double pp = 0.4;
  double adjective = 0.4;
  double coordinate = 0.15;
  double semicolon = 0.0;
  double complement = 0.15;
  double vp_coordinate = 0.1;
  double adverb = 0.2;
};

struct Shared {
  Words determiners = {"the", "the", "the", "a", "his", "her", "their", "this", "that", "no"};
  Words nouns = {"man", "woman", "day", "night", "door", "room", "hand", "face", "voice", "house",
                 "moment", "world", "heart", "head", "friend", "place", "word", "morning", "evening", "window",
                 "table", "letter", "road", "light", "fire", "child", "life", "mind", "silence", "hour"};
  Words plurals = {"eyes", "hands", "people", "friends", "years", "words", "doors", "thoughts", "steps", "tears"};
  Words adjectives = {"old", "young", "great", "little", "long", "small", "good", "poor", "strange", "dark",
                      "cold", "quiet", "bright", "heavy", "last"};
  Words intransitive = {"stood", "waited", "smiled", "turned", "paused", "returned", "listened", "rose", "sat",
                        "went", "came", "laughed", "hesitated", "wept"};
  Words transitive = {"saw", "took", "found", "heard", "knew", "left", "opened", "held", "met", "followed",
                      "watched", "remembered"};
  Words speech = {"said", "replied", "answered", "cried"};
  Words cognition = {"thought", "knew", "felt", "believed", "said"};
  Words adverbs = {"slowly", "quietly", "again", "then", "never", "still", "suddenly", "softly", "once"};
  Words prepositions = {"in", "on", "with", "to", "from", "at", "by", "of", "into", "upon", "through", "under",
                        "across", "toward", "near", "behind"};
  Words subordinators = {"when", "as", "though", "while", "because", "before", "after", "if"};
  Words degree = {"very", "so", "quite", "rather", "too"};
  Words conjunctions = {"and", "but", "and", "yet"};
};

const Shared& shared() {
  static const Shared s;
  return s;
}

const std::vector<Grammar>& grammars() {
  static const std::vector<Grammar> g = [] {
    std::vector<Grammar> out(5);

    auto& dickens = out[0];
    dickens.title = "The Parish Boy";
    dickens.names = {"Oliver", "Pip", "Joe", "Fagin", "Mr. Bumble", "Mr. Pickwick", "Mrs. Gamp", "Scrooge",
                     "Mr. Micawber", "Sam Weller", "the beadle", "the Dodger"};
    dickens.nouns = {"street", "fog", "coach", "parish", "gentleman", "lamp", "shilling", "workhouse", "clerk",
                     "chimney", "court", "lodging", "bundle", "kettle", "gruel", "tavern", "pocket", "counting-house",
                     "beadle", "coffin", "gin", "alley", "magistrate", "orphan"};
    dickens.plurals = {"streets", "shillings", "clerks", "lamps", "gentlemen", "orphans", "chimneys", "debts"};
    dickens.adjectives = {"dismal", "wretched", "dingy", "jolly", "shabby", "respectable", "miserable",
                          "ghostly", "greasy", "foggy", "benevolent", "snug"};
    dickens.intransitive = {"shivered", "chuckled", "sighed", "trudged", "nodded", "winked", "sneezed"};
    dickens.transitive = {"rubbed", "grasped", "pocketed", "clutched", "begged", "pitied"};
    dickens.speech = {"said", "observed", "remarked", "cried"};
    dickens.cognition = {"supposed", "remarked", "observed"};
    dickens.adverbs = {"dismally", "heartily", "uncommonly", "cheerily", "timidly"};
    dickens.interjections = {"Lord bless you", "Please, sir", "Oh, sir"};
    dickens.own = 0.65;
    dickens.dialogue = 0.3;
    dickens.name_subject = 0.45;
    dickens.pp = 0.55;
    dickens.adjective = 0.55;
    dickens.intro = 0.15;
    dickens.coordinate = 0.2;

    auto& austen = out[1];
    austen.title = "Sense and Manners";
    austen.names = {"Elizabeth", "Darcy", "Jane", "Mr. Bennet", "Mrs. Bennet", "Bingley", "Emma", "Mr. Knightley",
                    "Lady Catherine", "Mr. Collins", "Harriet", "Anne"};
    austen.nouns = {"manners", "fortune", "ball", "sister", "marriage", "opinion", "family", "acquaintance",
                    "neighbourhood", "estate", "visit", "attention", "regard", "conduct", "character", "engagement",
                    "carriage", "drawing-room", "sentiment", "gentleman", "evening", "compliment"};
    austen.plurals = {"sisters", "manners", "feelings", "spirits", "civilities", "daughters", "attentions"};
    austen.adjectives = {"agreeable", "amiable", "handsome", "civil", "sensible", "proud", "tolerable", "elegant",
                         "indifferent", "charming", "unreserved", "respectable"};
    austen.intransitive = {"danced", "coloured", "smiled", "curtseyed", "hesitated", "conversed"};
    austen.transitive = {"admired", "assured", "esteemed", "perceived", "addressed", "acknowledged"};
    austen.speech = {"replied", "observed", "said", "returned"};
    austen.cognition = {"believed", "perceived", "supposed", "imagined", "suspected", "felt"};
    austen.adverbs = {"exceedingly", "tolerably", "perfectly", "certainly", "indeed"};
    austen.interjections = {"Indeed", "My dear", "Upon my word"};
    austen.own = 0.6;
    austen.dialogue = 0.2;
    austen.name_subject = 0.45;
    austen.complement = 0.4;
    austen.intro = 0.3;
    austen.pp = 0.3;
    austen.coordinate = 0.25;

    auto& twain = out[2];
    twain.title = "Down the River";
    twain.names = {"Tom", "Huck", "Jim", "Becky", "Aunt Polly", "Sid", "Injun Joe", "the widow", "Ben Rogers",
                   "the duke", "the king"};
    twain.nouns = {"raft", "river", "island", "cave", "fence", "town", "canoe", "skiff", "woods", "catfish",
                   "steamboat", "graveyard", "pipe", "hat", "shore", "sandbar", "candle", "bank", "cabin",
                   "pap", "gang", "towhead"};
    twain.plurals = {"boys", "dollars", "woods", "snakes", "rags", "frogs", "stars"};
    twain.adjectives = {"lonesome", "powerful", "mighty", "ornery", "dreadful", "comfortable", "considerable",
                        "awful", "glad", "lazy", "muddy"};
    twain.intransitive = {"hollered", "slid", "fished", "snoozed", "paddled", "drifted", "skipped"};
    twain.transitive = {"grabbed", "whittled", "traded", "swiped", "hid", "struck"};
    twain.speech = {"says", "said", "hollered", "allowed"};
    twain.cognition = {"reckoned", "allowed", "judged", "reckoned"};
    twain.adverbs = {"mighty", "awful", "right", "pretty", "plumb"};
    twain.interjections = {"Well", "Shucks", "Gracious"};
    twain.own = 0.65;
    twain.dialogue = 0.15;
    twain.first_person = 0.45;
    twain.name_subject = 0.25;
    twain.pp = 0.2;
    twain.adjective = 0.25;
    twain.intro = 0.1;
    twain.coordinate = 0.2;
    twain.vp_coordinate = 0.25;

    auto& alcott = out[3];
    alcott.title = "Four Sisters";
    alcott.names = {"Amy", "Meg", "Jo", "Beth", "Laurie", "Marmee", "Hannah", "Mr. Laurence", "Aunt March",
                    "John Brooke", "Mrs. March"};
    alcott.nouns = {"piano", "bonnet", "garden", "kitten", "apron", "parlor", "play", "cottage", "dress",
                    "basket", "lesson", "present", "hearth", "sofa", "doll", "pudding", "party", "sister",
                    "mother", "Christmas"};
    alcott.plurals = {"sisters", "letters", "gloves", "slippers", "roses", "lessons", "pickles", "girls"};
    alcott.adjectives = {"merry", "kind", "pretty", "cheerful", "tender", "happy", "rosy", "dear", "cozy",
                         "brave", "little", "lovely"};
    alcott.intransitive = {"laughed", "sewed", "sang", "blushed", "giggled", "danced", "cried"};
    alcott.transitive = {"hugged", "kissed", "mended", "baked", "thanked", "comforted"};
    alcott.speech = {"cried", "said", "exclaimed", "laughed"};
    alcott.cognition = {"hoped", "wished", "thought", "felt"};
    alcott.adverbs = {"merrily", "tenderly", "softly", "cheerfully", "gaily"};
    alcott.interjections = {"Oh, Marmee", "Christopher Columbus", "Dear me"};
    alcott.own = 0.6;
    alcott.dialogue = 0.35;
    alcott.exclaim = 0.3;
    alcott.name_subject = 0.5;
    alcott.pp = 0.3;
    alcott.adjective = 0.45;
    alcott.intro = 0.15;

    auto& melville = out[4];
    melville.title = "The Whale";
    melville.names = {"Captain Ahab", "Ishmael", "Queequeg", "Starbuck", "Stubb", "Pierre", "Flask", "the captain",
                      "the harpooneer"};
    melville.nouns = {"whale", "sea", "ship", "deck", "harpoon", "mast", "ocean", "leviathan", "boat", "line",
                      "blubber", "forecastle", "fin", "spout", "tempest", "crew", "hull", "horizon", "captain",
                      "chase", "wake"};
    melville.plurals = {"whales", "waves", "seas", "harpoons", "mariners", "boats", "oars", "depths"};
    melville.adjectives = {"vast", "grand", "mighty", "mysterious", "boundless", "terrible", "ancient", "wild",
                           "unearthly", "watery", "inscrutable", "mortal"};
    melville.intransitive = {"brooded", "gazed", "sailed", "plunged", "lowered", "breached", "sounded"};
    melville.transitive = {"beheld", "hurled", "darted", "pursued", "harpooned", "struck"};
    melville.speech = {"cried", "shouted", "said", "muttered"};
    melville.cognition = {"pondered", "deemed", "thought", "felt"};
    melville.adverbs = {"forever", "wildly", "silently", "solemnly", "ever"};
    melville.interjections = {"Lower away", "There she blows", "Aye, aye"};
    melville.own = 0.65;
    melville.dialogue = 0.1;
    melville.exclaim = 0.35;
    melville.first_person = 0.25;
    melville.name_subject = 0.3;
    melville.pp = 0.6;
    melville.adjective = 0.55;
    melville.intro = 0.25;
    melville.coordinate = 0.3;
    melville.semicolon = 0.6;
    return out;
  }();
  return g;
}

ParseTree leaf(const std::string& pos, const std::string& word) {
  return ParseTree::node(pos, {ParseTree::terminal(word)});
}

bool starts_with_vowel(const std::string& w) {
  return !w.empty() && std::string("aeiouAEIOU").find(w.front()) != std::string::npos;
}

struct Subject {
  ParseTree tree;
  bool plural = false;
  bool first_person = false;
};

class Sampler {
 public:
  Sampler(const Grammar& g, Rng& rng) : g_(g), s_(shared()), rng_(rng) {}

  ParseTree sentence() {
    if (chance(g_.dialogue)) return dialogue();
    ParseTree s = clause(0, true);
    if (chance(g_.coordinate)) {
      ParseTree second = clause(1, false);
      if (chance(g_.semicolon)) {
        s = ParseTree::node("S", {std::move(s), leaf(":", ";"), std::move(second)});
      } else {
        s = ParseTree::node("S", {std::move(s), leaf(",", ","), leaf("CC", pick(s_.conjunctions)),
                                  std::move(second)});
      }
    }
    s.children.push_back(leaf(".", chance(g_.exclaim * 0.3) ? "!" : "."));
    return s;
  }

 private:
  bool chance(double p) { return rng_.uniform() < p; }

  const std::string& pick(const Words& w) { return w[rng_.below(w.size())]; }

  const std::string& either(const Words& own, const Words& common) {
    if (own.empty() || (!common.empty() && !chance(g_.own))) return pick(common);
    return pick(own);
  }

  ParseTree name() {
    const std::string& n = pick(g_.names);
    std::vector<ParseTree> parts;
    std::size_t start = 0;
    while (start <= n.size()) {
      const auto end = n.find(' ', start);
      const std::string word = n.substr(start, end == std::string::npos ? std::string::npos : end - start);
      parts.push_back(word == "the" ? leaf("DT", word) : leaf("NNP", word));
      if (end == std::string::npos) break;
      start = end + 1;
    }
    return ParseTree::node("NP", std::move(parts));
  }

  ParseTree adjective_phrase() {
    if (chance(0.25)) {
      return ParseTree::node("ADJP", {leaf("RB", pick(s_.degree)), leaf("JJ", either(g_.adjectives, s_.adjectives))});
    }
    return leaf("JJ", either(g_.adjectives, s_.adjectives));
  }

  ParseTree common_np(int depth, bool& plural) {
    plural = chance(0.25);
    std::vector<ParseTree> parts;
    std::optional<ParseTree> adj;
    if (chance(g_.adjective)) adj = adjective_phrase();
    const std::string noun = plural ? either(g_.plurals, s_.plurals) : either(g_.nouns, s_.nouns);
    std::string det = pick(s_.determiners);
    if (plural && (det == "a" || det == "this")) det = "the";
    if (det == "a") {
      const std::string next = adj ? synfeat::leaves(*adj).front() : noun;
      if (starts_with_vowel(next)) det = "an";
    }
    parts.push_back(leaf("DT", det));
    if (adj) parts.push_back(std::move(*adj));
    parts.push_back(leaf(plural ? "NNS" : "NN", noun));
    ParseTree np = ParseTree::node("NP", std::move(parts));
    if (depth < 2 && chance(g_.pp * 0.5)) {
      np = ParseTree::node("NP", {std::move(np), prepositional(depth + 1)});
    }
    return np;
  }

  ParseTree object_np(int depth) {
    const double u = rng_.uniform();
    if (u < 0.15) {
      static const Words objects = {"him", "her", "them", "it", "me", "us"};
      return ParseTree::node("NP", {leaf("PRP", pick(objects))});
    }
    if (u < 0.15 + g_.name_subject * 0.5) return name();
    bool plural = false;
    return common_np(depth, plural);
  }

  ParseTree prepositional(int depth) {
    const std::string& p = pick(s_.prepositions);
    bool plural = false;
    ParseTree obj = chance(0.2) ? name() : common_np(depth + 1, plural);
    return ParseTree::node("PP", {leaf("IN", p), std::move(obj)});
  }

  Subject subject() {
    Subject sub;
    const double u = rng_.uniform();
    if (u < g_.first_person) {
      const bool we = chance(0.2);
      sub.tree = ParseTree::node("NP", {leaf("PRP", we ? "we" : "I")});
      sub.plural = we;
      sub.first_person = true;
    } else if (u < g_.first_person + g_.name_subject) {
      sub.tree = name();
    } else if (u < g_.first_person + g_.name_subject + 0.2) {
      static const Words pronouns = {"he", "she", "they", "he", "she", "it"};
      const std::string& p = pick(pronouns);
      sub.tree = ParseTree::node("NP", {leaf("PRP", p)});
      sub.plural = p == "they";
    } else {
      sub.tree = common_np(1, sub.plural);
    }
    return sub;
  }

  ParseTree verb_phrase(int depth, const Subject& sub) {
    std::vector<ParseTree> parts;
    const double u = rng_.uniform();
    if (depth < 2 && u < g_.complement) {
      parts.push_back(leaf("VBD", either(g_.cognition, s_.cognition)));
      ParseTree inner = clause(depth + 1, false);
      parts.push_back(ParseTree::node("SBAR", {leaf("IN", "that"), std::move(inner)}));
    } else if (u < g_.complement + 0.2) {
      parts.push_back(leaf("VBD", sub.plural ? "were" : "was"));
      ParseTree adj = adjective_phrase();
      parts.push_back(adj.label == "ADJP" ? std::move(adj) : ParseTree::node("ADJP", {std::move(adj)}));
    } else if (u < g_.complement + 0.55) {
      parts.push_back(leaf("VBD", either(g_.transitive, s_.transitive)));
      parts.push_back(object_np(depth));
    } else {
      parts.push_back(leaf("VBD", either(g_.intransitive, s_.intransitive)));
    }
    if (chance(g_.adverb)) parts.push_back(ParseTree::node("ADVP", {leaf("RB", either(g_.adverbs, s_.adverbs))}));
    int pps = 0;
    while (pps < 3 && chance(g_.pp * (pps == 0 ? 1.0 : 0.5))) {
      parts.push_back(prepositional(depth));
      ++pps;
    }
    ParseTree vp = ParseTree::node("VP", std::move(parts));
    if (depth == 0 && chance(g_.vp_coordinate)) {
      std::vector<ParseTree> second = {leaf("VBD", either(g_.intransitive, s_.intransitive))};
      if (chance(g_.pp)) second.push_back(prepositional(depth + 1));
      vp = ParseTree::node("VP", {std::move(vp), leaf("CC", "and"), ParseTree::node("VP", std::move(second))});
    }
    return vp;
  }

  ParseTree clause(int depth, bool allow_intro) {
    std::vector<ParseTree> parts;
    if (allow_intro && chance(g_.intro)) {
      if (chance(0.6)) {
        Subject inner_sub = subject();
        ParseTree inner = ParseTree::node("S", {std::move(inner_sub.tree), verb_phrase(2, inner_sub)});
        parts.push_back(ParseTree::node("SBAR", {leaf("IN", pick(s_.subordinators)), std::move(inner)}));
      } else {
        parts.push_back(ParseTree::node("ADVP", {leaf("RB", either(g_.adverbs, s_.adverbs))}));
      }
      parts.push_back(leaf(",", ","));
    }
    Subject sub = subject();
    parts.push_back(std::move(sub.tree));
    parts.push_back(verb_phrase(depth, sub));
    return ParseTree::node("S", std::move(parts));
  }

  ParseTree dialogue() {
    std::vector<ParseTree> parts;
    parts.push_back(leaf("``", "\""));
    ParseTree inner = clause(1, false);
    if (!g_.interjections.empty() && chance(0.25)) {
      const std::string& interj = pick(g_.interjections);
      std::vector<ParseTree> words;
      std::string w;
      for (char c : interj + " ") {
        if (c == ' ') {
          if (!w.empty()) {
            if (w.back() == ',') {
              w.pop_back();
              words.push_back(leaf("UH", w));
              words.push_back(leaf(",", ","));
            } else {
              words.push_back(leaf("UH", w));
            }
          }
          w.clear();
        } else {
          w += c;
        }
      }
      ParseTree intj = ParseTree::node("INTJ", std::move(words));
      inner = ParseTree::node("S", {std::move(intj), leaf(",", ","), std::move(inner)});
    }
    parts.push_back(std::move(inner));
    const bool exclaim = chance(g_.exclaim);
    parts.push_back(exclaim ? leaf(".", "!") : leaf(",", ","));
    parts.push_back(leaf("''", "\""));
    parts.push_back(ParseTree::node("VP", {leaf("VBD", either(g_.speech, s_.speech))}));
    parts.push_back(name());
    parts.push_back(leaf(".", "."));
    return ParseTree::node("SINV", std::move(parts));
  }

  const Grammar& g_;
  const Shared& s_;
  Rng& rng_;
};

// Upper-cases the first letter of the first word leaf at or after `index`
// (in leaf order) and returns whether one was found.
bool capitalize_from(ParseTree& t, int& seen, int index) {
  if (t.is_terminal()) {
    if (seen++ < index) return false;
    if (t.token.empty() || !std::isalpha(static_cast<unsigned char>(t.token.front()))) return false;
    t.token.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(t.token.front())));
    return true;
  }
  for (auto& c : t.children) {
    if (capitalize_from(c, seen, index)) return true;
  }
  return false;
}

void capitalize_first_word(ParseTree& t) {
  int seen = 0;
  capitalize_from(t, seen, 0);
}

struct Preterminal {
  std::string label;
  std::string token;
};

void collect_preterminals(const ParseTree& t, std::vector<Preterminal>& out) {
  if (t.is_terminal()) return;
  if (t.is_preterminal()) {
    for (const auto& c : t.children) out.push_back({t.label, c.token});
    return;
  }
  for (const auto& c : t.children) collect_preterminals(c, out);
}

std::string wrap(const std::string& paragraph, std::size_t width) {
  std::string out;
  std::size_t line = 0;
  std::size_t start = 0;
  while (start < paragraph.size()) {
    auto end = paragraph.find(' ', start);
    if (end == std::string::npos) end = paragraph.size();
    const std::string word = paragraph.substr(start, end - start);
    if (line > 0 && line + 1 + word.size() > width) {
      out += '\n';
      line = 0;
    } else if (line > 0) {
      out += ' ';
      ++line;
    }
    out += word;
    line += word.size();
    start = end + 1;
  }
  return out;
}

std::string roman(int n) {
  static const std::pair<int, const char*> table[] = {{50, "L"}, {40, "XL"}, {10, "X"}, {9, "IX"},
                                                      {5, "V"},  {4, "IV"},  {1, "I"}};
  std::string out;
  for (const auto& [v, s] : table) {
    while (n >= v) {
      out += s;
      n -= v;
    }
  }
  return out;
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

nlohmann::json FixtureConfig::to_json() const {
  return {{"sentences_per_author", sentences_per_author},
          {"documents_per_author", documents_per_author},
          {"max_tokens", max_tokens},
          {"seed", seed}};
}

FixtureConfig FixtureConfig::from_json(const nlohmann::json& j) {
  FixtureConfig c;
  c.sentences_per_author = j.value("sentences_per_author", c.sentences_per_author);
  c.documents_per_author = j.value("documents_per_author", c.documents_per_author);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.seed = j.value("seed", c.seed);
  if (c.sentences_per_author < 1 || c.documents_per_author < 1 || c.max_tokens < 4) {
    throw Error(ErrorKind::kConfig, "fixture sizes must be positive (max_tokens >= 4)");
  }
  return c;
}

int grammar_count() { return static_cast<int>(grammars().size()); }

ParseTree sample_tree(int author, Rng& rng) {
  if (author < 0 || author >= grammar_count()) {
    throw Error(ErrorKind::kInvalidArgument, "no fixture grammar for author " + std::to_string(author));
  }
  Sampler sampler(grammars()[static_cast<std::size_t>(author)], rng);
  ParseTree tree = sampler.sentence();
  capitalize_first_word(tree);
  // Inside dialogue the quoted clause starts the sentence proper.
  if (tree.label == "SINV") capitalize_first_word(tree.children[1]);
  return tree;
}

std::string render(const ParseTree& tree) {
  std::vector<Preterminal> pts;
  collect_preterminals(tree, pts);
  std::string out;
  bool glue_next = false;
  for (const auto& p : pts) {
    const bool closing = p.label == "," || p.label == "." || p.label == ":" || p.label == "''";
    if (!out.empty() && !closing && !glue_next) out += ' ';
    out += p.token;
    glue_next = p.label == "``";
  }
  return out;
}

FixtureCorpus make_fixture(const FixtureConfig& config, const corpus::TagScheme& scheme) {
  if (scheme.author_count() > grammar_count()) {
    throw Error(ErrorKind::kInvalidArgument, "fixture has only " + std::to_string(grammar_count()) + " grammars");
  }
  FixtureCorpus fx;
  for (int a = 0; a < scheme.author_count(); ++a) {
    Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(a));
    const auto& g = grammars()[static_cast<std::size_t>(a)];
    std::vector<FixtureSentence> sentences;
    while (static_cast<int>(sentences.size()) < config.sentences_per_author) {
      ParseTree tree = sample_tree(a, rng);
      const auto leaf_count = static_cast<int>(synfeat::leaves(tree).size());
      if (leaf_count > config.max_tokens) continue;
      std::string text = render(tree);
      if (corpus::word_count(text) < 3) continue;
      sentences.push_back({a, std::move(text), synfeat::serialize(tree)});
    }

    const int docs = config.documents_per_author;
    for (int d = 0; d < docs; ++d) {
      const std::size_t lo = sentences.size() * static_cast<std::size_t>(d) / static_cast<std::size_t>(docs);
      const std::size_t hi = sentences.size() * static_cast<std::size_t>(d + 1) / static_cast<std::size_t>(docs);
      const std::string title = g.title + ", Volume " + roman(d + 1);
      const std::string& author_name = scheme.author(a).name;
      std::string raw;
      raw += "The Project Gutenberg EBook of " + title + ", by " + author_name + "\n\n";
      raw += "This eBook is for the use of anyone anywhere at no cost and with\nalmost no restrictions whatsoever.\n\n";
      raw += "Title: " + title + "\n\nAuthor: " + author_name + "\n\n";
      raw += "*** START OF THIS PROJECT GUTENBERG EBOOK " + upper(title) + " ***\n\n\n";
      int chapter = 0;
      int paragraphs_in_chapter = 1000;
      std::size_t i = lo;
      while (i < hi) {
        if (paragraphs_in_chapter >= 12) {
          raw += "CHAPTER " + roman(++chapter) + ".\n\n";
          paragraphs_in_chapter = 0;
        }
        const std::size_t n = std::min<std::size_t>(hi - i, 2 + rng.below(6));
        std::string paragraph;
        for (std::size_t k = 0; k < n; ++k, ++i) {
          if (!paragraph.empty()) paragraph += ' ';
          paragraph += sentences[i].text;
        }
        raw += wrap(paragraph, 72) + "\n\n";
        ++paragraphs_in_chapter;
      }
      raw += "*** END OF THIS PROJECT GUTENBERG EBOOK " + upper(title) + " ***\n\n";
      raw += "End of the Project Gutenberg EBook of " + title + "\n";
      std::string id = author_name + "_" + std::to_string(d + 1);
      for (auto& c : id) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      fx.documents.push_back({a, id, std::move(raw)});
    }
    for (auto& s : sentences) fx.sentences.push_back(std::move(s));
  }
  return fx;
}

void write_fixture(const FixtureCorpus& fixture, const corpus::TagScheme& scheme, const std::filesystem::path& dir) {
  for (const auto& doc : fixture.documents) {
    io::write_file(dir / scheme.author(doc.author).name / (doc.source_doc + ".txt"), doc.raw);
  }
  std::vector<nlohmann::json> rows;
  std::set<std::string> seen;
  for (const auto& s : fixture.sentences) {
    if (!seen.insert(s.text).second) continue;
    rows.push_back({{"text", s.text}, {"parse", s.parse}});
  }
  io::write_jsonl(dir / "parses.jsonl", rows);
}

nlohmann::json fixture_manifest(const FixtureCorpus& fixture, const corpus::TagScheme& scheme) {
  nlohmann::json authors = nlohmann::json::array();
  for (int a = 0; a < scheme.author_count(); ++a) {
    std::string all;
    std::int64_t n = 0;
    for (const auto& s : fixture.sentences) {
      if (s.author != a) continue;
      all += s.text;
      all += '\n';
      ++n;
    }
    authors.push_back({{"author", scheme.author(a).name}, {"sentences", n}, {"sha256", io::sha256_hex(all)}});
  }
  return {{"authors", authors}};
}

}  // namespace styleforge::fixture
