#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "styleforge/error.hpp"
#include "styleforge/generation.hpp"
#include "styleforge/rng.hpp"

using namespace styleforge;
using namespace styleforge::generation;
using corpus::SentenceRecord;
using corpus::TagScheme;

namespace {

const TagScheme kScheme = TagScheme::default_scheme();

// Five sentences per author over disjoint vocabularies, so the tag alone
// decides which sentences are plausible continuations.
std::vector<SentenceRecord> toy_corpus() {
  const std::vector<std::vector<std::string>> by_author = {
      {"The fog crept over the river.", "The clerk wrote slowly.", "The beadle frowned at the boy.",
       "The fog was thick tonight.", "The clerk sighed."},
      {"Emma smiled at her sister.", "Emma walked to the rectory.", "Her sister was very agreeable.",
       "Emma thought of the ball.", "The ball was delightful."},
      {"Tom ran down to the river.", "Huck lit his pipe.", "Tom and Huck fished all day.",
       "Huck was mighty lazy.", "Tom grinned."},
      {"Jo wrote a little play.", "Meg sewed by the fire.", "Jo laughed at Meg.", "Beth played softly.",
       "Meg was tired."},
      {"Ahab paced the deck.", "The whale rose from the sea.", "Ahab cursed the whale.",
       "The sea was grey and vast.", "Ishmael watched the sea."}};
  std::vector<SentenceRecord> out;
  for (int a = 0; a < 5; ++a) {
    for (const auto& text : by_author[static_cast<std::size_t>(a)]) {
      SentenceRecord r;
      r.text = text;
      r.author = a;
      r.word_count = corpus::word_count(text);
      out.push_back(r);
    }
  }
  return out;
}

backend::Tokenizer toy_tokenizer(const std::vector<SentenceRecord>& records) {
  std::vector<std::string> texts;
  for (const auto& r : records) texts.push_back(" " + r.text);
  return backend::extend_tokenizer(backend::Tokenizer::train(texts, 500, 1), kScheme);
}

backend::ModelConfig toy_model_config(int vocab) {
  backend::ModelConfig c;
  c.embed_dim = 32;
  c.layers = 2;
  c.heads = 2;
  c.context = 32;
  c.vocab = vocab;
  c.seed = 4;
  return c;
}

struct Memorized {
  std::vector<SentenceRecord> train = toy_corpus();
  backend::Tokenizer tokenizer = toy_tokenizer(train);
  std::unique_ptr<backend::Model> model;
  TrainingReport report;

  Memorized() {
    model = backend::make_reference_model(toy_model_config(tokenizer.vocab_size()));
    FineTuneConfig cfg;
    cfg.train.batch_size = 5;
    cfg.train.epochs = 40;  // 25 sentences / 5 per batch * 40 = 200 steps
    cfg.train.lr = 3e-3;
    cfg.train.seed = 2;
    report = fine_tune(*model, train, tokenizer, kScheme, Method::kFft, cfg);
  }
};

const Memorized& memorized() {
  static const Memorized m;
  return m;
}

std::vector<std::string> words_of(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

TEST_CASE("postprocess examples") {
  auto a = postprocess("<0> I left. <end> <end> the the the", kScheme);
  REQUIRE(a.accepted());
  CHECK(*a.sentence == "I left.");

  auto b = postprocess("<1> She walked and walked and", kScheme);
  CHECK_FALSE(b.accepted());
  CHECK(b.rejection == "incomplete");

  auto c = postprocess("<2> He ran ran ran ran home.", kScheme);
  REQUIRE(c.accepted());
  CHECK(*c.sentence == "He ran home.");
}

TEST_CASE("postprocess rejection reasons") {
  CHECK(postprocess("<3> <end> Jo laughed.", kScheme).rejection == "empty_after_strip");
  CHECK(postprocess("<3>", kScheme).rejection == "empty_after_strip");
  CHECK(postprocess("<4> Ahab saw <2> the whale.", kScheme).rejection == "contains_tag");
  CHECK(*postprocess("<4> \"Call me Ishmael.\" <end>", kScheme).sentence == "\"Call me Ishmael.\"");
  CHECK(*postprocess("<4> Is it the whale? <end>", kScheme).sentence == "Is it the whale?");
  CHECK(postprocess("<0> Jo \xe2 ran.", kScheme).rejection == "malformed_text");
  CHECK(postprocess("<0> Jo \xc0\xaf ran.", kScheme).rejection == "malformed_text");
  CHECK(*postprocess("<0> Caf\xc3\xa9 \xe2\x80\x94 closed.", kScheme).sentence == "Caf\xc3\xa9 \xe2\x80\x94 closed.");
  CHECK_THROWS_AS(postprocess("no tag here.", kScheme), Error);
}

TEST_CASE("collapse_repeats handles bigrams and trigrams") {
  using V = std::vector<std::string>;
  CHECK(collapse_repeats(V{"a", "b", "a", "b", "a", "b", "c"}) == V{"a", "b", "c"});
  CHECK(collapse_repeats(V{"x", "y", "z", "x", "y", "z", "x", "y", "z"}) == V{"x", "y", "z"});
  // Two repeats are left alone.
  CHECK(collapse_repeats(V{"very", "very", "good"}) == V{"very", "very", "good"});
  CHECK(collapse_repeats(V{}).empty());
}

TEST_CASE("postprocess is idempotent on 1000 random strings") {
  const std::vector<std::string> pieces = {"the", "the", "sea", "was", "grey", "and", "and", "vast", ",", ".",
                                           "!",   "?",   "\"",  "<end>", "<0>", "Tom", "ran", "ran", "  "};
  Rng rng(99);
  int accepted = 0;
  std::set<std::string> reasons;
  for (int i = 0; i < 1000; ++i) {
    std::string raw = kScheme.tag_for(static_cast<int>(rng.below(5)));
    const auto n = rng.below(14);
    for (std::uint64_t k = 0; k < n; ++k) raw += " " + pieces[rng.below(pieces.size())];
    if (rng.uniform() < 0.5) raw += rng.uniform() < 0.5 ? " ." : " \" !";
    const auto once = postprocess(raw, kScheme);
    if (!once.accepted()) {
      reasons.insert(once.rejection);
      continue;
    }
    ++accepted;
    CHECK_FALSE(kScheme.contains_any_tag(*once.sentence));
    const auto twice = postprocess_text(*once.sentence, kScheme);
    REQUIRE(twice.accepted());
    CHECK(*twice.sentence == *once.sentence);
  }
  CHECK(accepted > 100);
  CHECK(reasons.size() == 3);
}

TEST_CASE("seed rendering and config validation") {
  CHECK(Seed{0, {"When"}}.render(kScheme) == "<0> When");
  CHECK(Seed{4, {}}.render(kScheme) == "<4>");
  GenerationConfig g;
  CHECK(g.temperature == doctest::Approx(0.9));
  CHECK(g.max_new_tokens == 64);
  CHECK(g.sample);
  CHECK_THROWS_AS(GenerationConfig::from_json({{"temperature", 0.0}}), Error);
  CHECK_THROWS_AS(GenerationConfig::from_json({{"max_new_tokens", 0}}), Error);
}

TEST_CASE("fine-tuning defaults to three epochs") { CHECK(FineTuneConfig{}.train.epochs == 3); }

TEST_CASE("LoRA trains under one percent of the reference model") {
  // Two layers, two heads, width 64 and an 8k vocabulary.
  backend::ModelConfig config;
  config.vocab = 8000;
  auto model = backend::make_reference_model(config);
  model->enable_lora(backend::LoraConfig{}, 1);
  const auto info = model->info();
  // Adapters A (d x r) and B (r x d) on four projections in every layer.
  const backend::LoraConfig lora;
  const std::int64_t expected = static_cast<std::int64_t>(config.layers) * 4 * 2 * lora.rank * config.embed_dim;
  CHECK(info.trainable_parameter_count == expected);
  CHECK(static_cast<double>(info.trainable_parameter_count) / static_cast<double>(info.parameter_count) < 0.01);
}

TEST_CASE("fine_tune preconditions") {
  auto train = toy_corpus();
  auto tok = toy_tokenizer(train);
  auto model = backend::make_reference_model(toy_model_config(tok.vocab_size()));
  FineTuneConfig cfg;
  cfg.train.epochs = 1;

  auto missing = train;
  std::erase_if(missing, [](const SentenceRecord& r) { return r.author == 3; });
  try {
    fine_tune(*model, missing, tok, kScheme, Method::kFft, cfg);
    FAIL("expected missing author");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kMissingAuthor);
  }

  std::vector<std::string> texts;
  for (const auto& r : train) texts.push_back(" " + r.text);
  const auto plain = backend::Tokenizer::train(texts, 500, 1);
  try {
    fine_tune(*model, train, plain, kScheme, Method::kFft, cfg);
    FAIL("expected unextended tokenizer to be rejected");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTagNotSingleToken);
  }
}

TEST_CASE("LoRA fine-tuning only moves adapters") {
  auto train = toy_corpus();
  auto tok = toy_tokenizer(train);
  auto model = backend::make_reference_model(toy_model_config(tok.vocab_size()));
  const auto before = model->clone();
  FineTuneConfig cfg;
  cfg.train.epochs = 2;
  cfg.train.lr = 1e-2;
  const auto report = fine_tune(*model, train, tok, kScheme, Method::kLora, cfg);
  CHECK(report.method == "lora");
  CHECK(report.trainable_parameter_count < report.parameter_count);
  int moved_adapters = 0;
  for (const auto& p : model->parameters()) {
    const bool adapter = p.name.find("lora") != std::string::npos;
    if (adapter) {
      CHECK(p.trainable);
      moved_adapters += 1;
      continue;
    }
    for (const auto& q : before->parameters()) {
      if (q.name == p.name) CHECK(q.value == p.value);
    }
  }
  CHECK(moved_adapters > 0);
}

TEST_CASE("memorization smoke test") {
  const auto& m = memorized();
  CHECK(m.report.steps == 200);
  CHECK(m.report.epoch_losses.back() < m.report.epoch_losses.front());
  GenerationConfig greedy;
  greedy.sample = false;
  for (int a = 0; a < 5; ++a) {
    const auto raw = generate(*m.model, m.tokenizer, kScheme, Seed{a, {}}, greedy);
    CHECK(raw.text.rfind(kScheme.tag_for(a), 0) == 0);
    const auto pp = postprocess(raw, kScheme);
    REQUIRE_MESSAGE(pp.accepted(), raw.text);
    const auto got = words_of(*pp.sentence);
    bool prefix = false;
    for (const auto& r : m.train) {
      if (r.author != a) continue;
      const auto want = words_of(r.text);
      const std::size_t n = std::min<std::size_t>(3, want.size());
      prefix = prefix || (got.size() >= n && std::equal(want.begin(), want.begin() + static_cast<std::ptrdiff_t>(n),
                                                        got.begin()));
    }
    CHECK_MESSAGE(prefix, raw.text);
  }
}

TEST_CASE("greedy decoding is deterministic and stops at the end tag") {
  const auto& m = memorized();
  GenerationConfig greedy;
  greedy.sample = false;
  const int end_id = *m.tokenizer.id_of(kScheme.end_tag());
  for (int a = 0; a < 5; ++a) {
    greedy.rng_seed = static_cast<std::uint64_t>(a);
    const auto x = generate(*m.model, m.tokenizer, kScheme, Seed{a, {}}, greedy);
    greedy.rng_seed = 1000;  // the seed is irrelevant when greedy
    const auto y = generate(*m.model, m.tokenizer, kScheme, Seed{a, {}}, greedy);
    CHECK(x.token_ids == y.token_ids);
    REQUIRE(x.hit_end_tag);
    CHECK(x.token_ids.back() == end_id);
    CHECK(std::count(x.token_ids.begin(), x.token_ids.end(), end_id) == 1);
    CHECK(x.generated_count() <= greedy.max_new_tokens);
  }

  GenerationConfig capped = greedy;
  capped.max_new_tokens = 2;
  const auto c = generate(*m.model, m.tokenizer, kScheme, Seed{0, {}}, capped, true);
  CHECK(c.generated_count() <= 2);
  REQUIRE(c.trace.has_value());
  CHECK(c.trace->valid_len == static_cast<int>(c.token_ids.size()));
  CHECK(c.trace->attentions.size() == 2);
}

TEST_CASE("sampling is reproducible from the rng seed") {
  const auto& m = memorized();
  GenerationConfig g;
  g.rng_seed = 17;
  const auto x = generate(*m.model, m.tokenizer, kScheme, Seed{2, {"Tom"}}, g);
  const auto y = generate(*m.model, m.tokenizer, kScheme, Seed{2, {"Tom"}}, g);
  CHECK(x.token_ids == y.token_ids);
  CHECK(x.text.rfind("<2> Tom", 0) == 0);
}

TEST_CASE("seed vocabulary ranks by frequency") {
  auto train = toy_corpus();
  const auto v = build_seed_vocabulary(train, 3);
  REQUIRE(v.first.size() == 3);
  CHECK(v.first[0] == "The");  // 8 sentences start with "The"
  CHECK(v.first[1] == "Emma");
  REQUIRE(!v.second.empty());
  CHECK(v.second.size() <= 3);
  const auto back = SeedVocabulary::from_json(v.to_json());
  CHECK(back.first == v.first);
  CHECK(back.second == v.second);
}

TEST_CASE("batch generation meets the plan") {
  const auto& m = memorized();
  const auto vocab = build_seed_vocabulary(m.train);
  GenerationConfig g;
  g.rng_seed = 5;
  const auto set = generate_batch(*m.model, m.tokenizer, kScheme, std::vector<std::int64_t>(5, 10), vocab, g, "fft");
  CHECK(set.items.size() == 50);
  CHECK(set.per_author_counts() == std::vector<std::int64_t>(5, 10));
  CHECK(set.warnings.empty());
  for (const auto& item : set.items) {
    CHECK_FALSE(kScheme.contains_any_tag(item.text));
    CHECK(static_cast<int>(item.seed.extra_tokens.size()) == static_cast<int>(item.index % 3));
    CHECK(static_cast<int>(m.tokenizer.encode(" " + item.text).size()) <= g.max_new_tokens + 2);
    if (!item.seed.extra_tokens.empty()) CHECK(item.text.rfind(item.seed.extra_tokens[0], 0) == 0);
  }
  const auto report = set.report(kScheme);
  REQUIRE(report["authors"].size() == 5);
  for (const auto& a : report["authors"]) {
    CHECK(a["accepted"] == 10);
    CHECK(a.contains("retries"));
    CHECK(a.contains("acceptance_rate"));
  }

  const auto again = generate_batch(*m.model, m.tokenizer, kScheme, std::vector<std::int64_t>(5, 10), vocab, g, "fft");
  REQUIRE(again.items.size() == set.items.size());
  for (std::size_t i = 0; i < set.items.size(); ++i) CHECK(again.items[i].text == set.items[i].text);

  const auto dir = std::filesystem::temp_directory_path() / "styleforge_test_generation";
  std::filesystem::create_directories(dir);
  save_generated(set, kScheme, dir / "generated.jsonl");
  const auto loaded = load_generated(dir / "generated.jsonl", kScheme);
  CHECK(loaded.method == "fft");
  REQUIRE(loaded.items.size() == set.items.size());
  CHECK(loaded.items[7].text == set.items[7].text);
  CHECK(loaded.items[7].seed.extra_tokens == set.items[7].seed.extra_tokens);
  CHECK(loaded.per_author_counts() == set.per_author_counts());
  std::filesystem::remove_all(dir);
}

TEST_CASE("retry budget exhaustion returns a partial set with a warning") {
  // An untrained model almost never emits a terminated sentence under greedy decoding.
  const auto& m = memorized();
  auto untrained = backend::make_reference_model(toy_model_config(m.tokenizer.vocab_size()));
  GenerationConfig g;
  g.sample = false;
  g.max_new_tokens = 4;
  const auto set = generate_batch(*untrained, m.tokenizer, kScheme, {1, 1, 1, 1, 1}, build_seed_vocabulary(m.train), g,
                                  "fft");
  for (const auto& s : set.per_author) CHECK(s.attempts <= 10);
  if (set.items.size() < 5) CHECK_FALSE(set.warnings.empty());
}
