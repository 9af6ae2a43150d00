#include "styleforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "styleforge/detector.hpp"
#include "styleforge/fixture.hpp"
#include "styleforge/generation.hpp"
#include "styleforge/io.hpp"
#include "styleforge/model.hpp"
#include "styleforge/synfeat.hpp"
#include "styleforge/tokenizer.hpp"
#include "styleforge/xai.hpp"

namespace styleforge::cli {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

json section(const Context& ctx, const char* name) { return ctx.config.value(name, json::object()); }

// Seeds of the individual stages are fixed offsets of the master seed so a
// manifest can list them and a rerun reproduces them.
struct Seeds {
  std::uint64_t fixture, split, model, pretrain, fft, lora, detector, generation;

  explicit Seeds(std::uint64_t s)
      : fixture(s), split(s), model(s), pretrain(s), fft(s + 1), lora(s + 2), detector(s + 3), generation(s + 4) {}
};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json strip_wall(json report) {
  report.erase("wall_seconds");
  return report;
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error(ErrorKind::kIo, what + " not found: " + p.string());
}

backend::Tokenizer train_tokenizer(const Context& ctx, const std::vector<corpus::SentenceRecord>& train,
                                   const corpus::TagScheme& scheme) {
  const json t = section(ctx, "tokenizer");
  std::vector<std::string> texts;
  texts.reserve(train.size());
  for (const auto& r : train) texts.push_back(" " + r.text);
  auto base = backend::Tokenizer::train(texts, t.value("max_pieces", 4000), t.value("min_count", 2));
  return backend::extend_tokenizer(base, scheme);
}

backend::ModelConfig generator_model_config(const Context& ctx, int vocab) {
  auto mc = backend::ModelConfig::from_json(section(ctx, "generator").value("model", json::object()));
  mc.kind = backend::ModelKind::kCausalLm;
  mc.vocab = vocab;
  mc.seed = Seeds(ctx.seed).model;
  return mc;
}

struct Base {
  std::unique_ptr<backend::Model> model;
  backend::Tokenizer tokenizer;
  json report;
};

Base pretrain_base(const Context& ctx, const std::vector<corpus::SentenceRecord>& train,
                   const corpus::TagScheme& scheme) {
  Base b;
  b.tokenizer = train_tokenizer(ctx, train, scheme);
  b.model = backend::make_model(generator_model_config(ctx, b.tokenizer.vocab_size()), ctx.backend);
  backend::TrainConfig tc;
  tc.lr = 3e-3;
  tc = backend::TrainConfig::from_json(section(ctx, "generator").value("pretrain", json::object()), tc);
  tc.seed = Seeds(ctx.seed).pretrain;
  b.report = generation::pretrain(*b.model, train, b.tokenizer, scheme, tc).to_json();
  return b;
}

struct LoadedCorpus {
  corpus::TagScheme scheme = corpus::TagScheme::default_scheme();
  std::vector<corpus::SentenceRecord> records;
};

// A corpus directory or a bare corpus.jsonl file.
LoadedCorpus load_records(const Context& ctx, const fs::path& in) {
  require_exists(in, "corpus");
  LoadedCorpus out;
  if (fs::is_directory(in)) {
    auto c = corpus::load_corpus(in);
    out.scheme = c.scheme;
    out.records = std::move(c.records);
    return out;
  }
  out.scheme = ctx.scheme();
  const auto scheme_file = in.parent_path() / "scheme.json";
  if (fs::exists(scheme_file)) out.scheme = corpus::TagScheme::from_json(io::read_json(scheme_file));
  for (const auto& row : io::read_jsonl(in)) out.records.push_back(corpus::record_from_json(row));
  return out;
}

std::vector<corpus::SentenceRecord> held_out(const std::vector<corpus::SentenceRecord>& records) {
  std::vector<corpus::SentenceRecord> test;
  for (const auto& r : records) {
    if (r.split == corpus::Split::kTest) test.push_back(r);
  }
  return test.empty() ? records : test;
}

// Up to `n` items, interleaved across authors in file order.
std::vector<const generation::GeneratedItem*> pick_items(const generation::GeneratedSet& set, int authors,
                                                         std::size_t n) {
  std::vector<std::vector<const generation::GeneratedItem*>> by_author(static_cast<std::size_t>(authors));
  for (const auto& it : set.items) by_author.at(static_cast<std::size_t>(it.seed.author)).push_back(&it);
  std::vector<const generation::GeneratedItem*> out;
  for (std::size_t k = 0; out.size() < n; ++k) {
    bool any = false;
    for (auto& list : by_author) {
      if (k < list.size() && out.size() < n) {
        out.push_back(list[k]);
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

struct Rebuilt {
  generation::RawGeneration raw;
  bool prompt_matched = true;
};

// Accepted sentences are stored as text. The token sequence the generator
// produced is rebuilt as "<tag> text <end>" with the encoded seed as prompt.
Rebuilt rebuild(const generation::GeneratedItem& item, const backend::Tokenizer& tok, const corpus::TagScheme& scheme,
                int context) {
  Rebuilt r;
  r.raw.seed = item.seed;
  r.raw.text = item.text;
  const auto prompt = tok.encode(item.seed.render(scheme));
  auto ids = tok.encode(scheme.tag_for(item.seed.author) + " " + item.text + " " + scheme.end_tag());
  if (static_cast<int>(ids.size()) > context) ids.resize(static_cast<std::size_t>(context));
  r.raw.hit_end_tag = tok.id_of(scheme.end_tag()) == ids.back();
  r.prompt_matched = prompt.size() < ids.size() && std::equal(prompt.begin(), prompt.end(), ids.begin());
  r.raw.prompt_length = r.prompt_matched ? static_cast<int>(prompt.size()) : 1;
  r.raw.token_ids = std::move(ids);
  return r;
}

std::vector<std::string> feature_names(const Context& ctx) {
  const json f = section(ctx, "synfeat").value("features", json("all"));
  std::vector<std::string> out;
  if (f.is_string() && f.get<std::string>() == "all") {
    for (const auto& spec : synfeat::feature_registry()) out.push_back(spec.name);
    return out;
  }
  for (const auto& name : f) out.push_back(name.get<std::string>());
  return out;
}

// ---------------------------------------------------------------------------
// Plot data emitters. Each reads one report and writes plain files.

std::vector<fs::path> find_files(const fs::path& in, const std::string& name) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(in)) {
    out.push_back(in);
    return out;
  }
  if (fs::is_directory(in)) {
    for (const auto& e : fs::recursive_directory_iterator(in)) {
      if (e.is_regular_file() && e.path().filename() == name) out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string source_label(const fs::path& file, const fs::path& in) {
  if (fs::is_regular_file(in)) return file.parent_path().filename().string();
  auto rel = fs::relative(file.parent_path(), in).generic_string();
  return rel == "." ? in.filename().string() : rel;
}

json emit_agreement(const fs::path& in, const fs::path& out) {
  const auto files = find_files(in, "agreement.json");
  if (files.empty()) throw Error(ErrorKind::kIo, "no agreement.json under " + in.string());
  std::string csv = "source,expected,predicted,count\n";
  for (const auto& f : files) {
    const auto j = io::read_json(f);
    const auto& authors = j.at("labels");
    const auto& counts = j.at("counts");
    for (std::size_t e = 0; e < counts.size(); ++e) {
      for (std::size_t p = 0; p < counts[e].size(); ++p) {
        csv += csv_field(source_label(f, in)) + "," + csv_field(authors[e].get<std::string>()) + "," +
               csv_field(authors[p].get<std::string>()) + "," + std::to_string(counts[e][p].get<std::int64_t>()) +
               "\n";
      }
    }
  }
  io::write_file(out / "agreement_long.csv", csv);
  return {{"files", {"agreement_long.csv"}}, {"sources", files.size()}};
}

json emit_histograms(const fs::path& in, const fs::path& out) {
  const auto files = find_files(in, "histograms.json");
  if (files.empty()) throw Error(ErrorKind::kIo, "no histograms.json under " + in.string());
  std::string csv = "method,author,feature,population,population_size,bin,lo,hi,count\n";
  std::int64_t rows = 0;
  for (const auto& f : files) {
    const json report = io::read_json(f);
    for (const auto& h : report.at("histograms")) {
      for (const char* pop : {"real", "generated"}) {
        const auto& hist = h.at(pop);
        const auto& edges = hist.at("edges");
        const auto& counts = hist.at("counts");
        std::int64_t total = 0;
        for (const auto& c : counts) total += c.get<std::int64_t>();
        const std::string head = csv_field(h.at("method").get<std::string>()) + "," +
                                 csv_field(h.at("author").get<std::string>()) + "," +
                                 h.at("feature").get<std::string>() + "," + pop + "," + std::to_string(total) + ",";
        for (std::size_t b = 0; b < counts.size(); ++b) {
          csv += head + std::to_string(b) + "," + num(edges[b].get<double>()) + "," + num(edges[b + 1].get<double>()) +
                 "," + std::to_string(counts[b].get<std::int64_t>()) + "\n";
          ++rows;
        }
      }
    }
  }
  io::write_file(out / "histograms.csv", csv);
  return {{"files", {"histograms.csv"}}, {"rows", rows}};
}

std::string table_cell(double mass, double enrichment) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f (x%.1f)", mass, enrichment);
  return buf;
}

json emit_enrichment(const fs::path& in, const fs::path& out) {
  const auto files = find_files(in, "enrichment.json");
  if (files.empty()) throw Error(ErrorKind::kIo, "no enrichment.json under " + in.string());
  json written = json::array();
  for (const auto& f : files) {
    const auto j = io::read_json(f);
    const auto& tags = j.at("per_tag");
    std::size_t layers = 0;
    for (const auto& t : tags) layers = std::max(layers, t.at("profile").at("layers").size());
    std::string table = "layer";
    for (const auto& t : tags) table += "," + csv_field(t.at("tag").get<std::string>());
    table += "\n";
    std::string long_form = "layer,tag,author,mass,enrichment,samples\n";
    for (std::size_t l = 0; l < layers; ++l) {
      char label[32];
      std::snprintf(label, sizeof label, "%02zu", l);
      table += label;
      for (const auto& t : tags) {
        const auto& p = t.at("profile");
        const auto& row = p.at("layers");
        if (l < row.size()) {
          const double m = row[l].at("mass").get<double>();
          const double e = row[l].at("enrichment").get<double>();
          table += "," + csv_field(table_cell(m, e));
          long_form += std::to_string(l) + "," + csv_field(t.at("tag").get<std::string>()) + "," +
                       csv_field(t.at("author").get<std::string>()) + "," + num(m) + "," + num(e) + "," +
                       std::to_string(p.at("samples").get<std::int64_t>()) + "\n";
        } else {
          table += ",";
        }
      }
      table += "\n";
    }
    std::string prefix = source_label(f, in);
    std::replace(prefix.begin(), prefix.end(), '/', '_');
    io::write_file(out / ("enrichment_table_" + prefix + ".csv"), table);
    io::write_file(out / ("enrichment_long_" + prefix + ".csv"), long_form);
    written.push_back("enrichment_table_" + prefix + ".csv");
    written.push_back("enrichment_long_" + prefix + ".csv");
  }
  return {{"files", written}};
}

json emit_heatmaps(const fs::path& in, const fs::path& out) {
  const auto files = find_files(in, "ig_heatmaps.json");
  if (files.empty()) throw Error(ErrorKind::kIo, "no ig_heatmaps.json under " + in.string());
  json written = json::array();
  for (const auto& f : files) {
    const json report = io::read_json(f);
    for (const auto& h : report.at("heatmaps")) {
      const auto& m = h.at("heatmap");
      std::string csv = "prompt_token";
      for (const auto& g : m.at("generated_tokens")) csv += "," + csv_field(g.get<std::string>());
      csv += "\n";
      const auto& rows = m.at("values");
      const auto& prompt = m.at("prompt_tokens");
      for (std::size_t i = 0; i < rows.size(); ++i) {
        csv += csv_field(prompt[i].get<std::string>());
        for (const auto& v : rows[i]) csv += "," + num(v.get<double>());
        csv += "\n";
      }
      const std::string name = "ig_heatmap_" + std::to_string(h.at("index").get<std::int64_t>()) + ".csv";
      io::write_file(out / name, csv);
      written.push_back(name);
    }
  }
  return {{"files", written}};
}

json emit_top_tokens(const fs::path& in, const fs::path& out) {
  const auto files = find_files(in, "top_tokens.json");
  if (files.empty()) throw Error(ErrorKind::kIo, "no top_tokens.json under " + in.string());
  std::string csv = "author,rank,token,mean,mean_magnitude,support\n";
  for (const auto& f : files) {
    const json report = io::read_json(f);
    for (const auto& a : report.at("rankings")) {
      int rank = 1;
      for (const auto& t : a.at("tokens")) {
        csv += csv_field(a.at("author").get<std::string>()) + "," + std::to_string(rank++) + "," +
               csv_field(t.at("token").get<std::string>()) + "," + num(t.at("mean").get<double>()) + "," +
               num(t.at("mean_magnitude").get<double>()) + "," + std::to_string(t.at("support").get<std::int64_t>()) +
               "\n";
      }
    }
  }
  io::write_file(out / "top_tokens.csv", csv);
  return {{"files", {"top_tokens.csv"}}};
}

json emit(const std::string& kind, const fs::path& in, const fs::path& out) {
  if (kind == "agreement_bubbles") return emit_agreement(in, out);
  if (kind == "histograms") return emit_histograms(in, out);
  if (kind == "enrichment_table") return emit_enrichment(in, out);
  if (kind == "ig_heatmap") return emit_heatmaps(in, out);
  if (kind == "top_tokens") return emit_top_tokens(in, out);
  throw Error(ErrorKind::kConfig, "unknown plot kind '" + kind + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

json default_config() {
  return json::parse(R"({
    "seed": 1,
    "backend": "reference",
    "scheme": null,
    "fixture": {"sentences_per_author": 2200, "documents_per_author": 3, "max_tokens": 60},
    "corpus": {"source": "fixture", "in": null, "parses": null, "abbreviations": null,
               "test_fraction": 0.2, "min_words": 3, "max_words": 128, "strict": false},
    "tokenizer": {"max_pieces": 4000, "min_count": 2},
    "generator": {
      "model": {"layers": 2, "heads": 2, "embed_dim": 64, "context": 96},
      "pretrain": {"epochs": 3, "batch_size": 16, "lr": 0.003},
      "fft": {"train": {"epochs": 3, "batch_size": 16, "lr": 0.001}},
      "lora": {"train": {"epochs": 3, "batch_size": 16, "lr": 0.005}, "rank": 8, "alpha": 16}
    },
    "generation": {"per_author": 100, "temperature": 0.9, "max_new_tokens": 64, "sample": true,
                   "seed_vocabulary": 500},
    "detector": {"model": {"layers": 2, "heads": 2, "embed_dim": 64, "context": 96},
                 "train": {"epochs": 9, "batch_size": 16, "lr": 0.001}, "patience": 3},
    "evaluate": {"threshold": 0.93},
    "synfeat": {"bins": 20, "features": "all"},
    "explain": {"steps": 64, "ae_generations": 100, "ig_generations": 10, "top_k": 20,
                "ranking_sentences": 50, "min_support": 3}
  })");
}

json load_config(const fs::path& path) {
  require_exists(path, "config file");
  json user;
  try {
    user = json::parse(io::read_file(path), nullptr, true, true);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, "cannot parse " + path.string() + ": " + e.what());
  }
  if (!user.is_object()) throw Error(ErrorKind::kConfig, "config must be a JSON object");
  json config = default_config();
  config.merge_patch(user);
  validate_config(config);
  return config;
}

void validate_config(const json& config) {
  static const std::set<std::string> known = {"seed",       "backend",  "scheme",   "fixture",  "corpus",
                                              "tokenizer",  "generator", "generation", "detector", "evaluate",
                                              "synfeat",    "explain"};
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, msg); };
  try {
    for (const auto& [key, value] : config.items()) {
      if (!known.count(key)) fail("unknown config section '" + key + "'");
    }
    const json d = default_config();
    auto sec = [&](const char* name) { return config.value(name, d.at(name)); };
    if (!config.value("scheme", json()).is_null()) corpus::TagScheme::from_json(config["scheme"]);
    fixture::FixtureConfig::from_json(sec("fixture"));

    const json c = sec("corpus");
    const std::string source = c.value("source", "fixture");
    if (source != "fixture" && source != "directory") fail("corpus.source must be 'fixture' or 'directory'");
    if (source == "directory" && c.value("in", json()).is_null()) fail("corpus.in is required for source 'directory'");
    const double frac = c.value("test_fraction", 0.2);
    if (!(frac > 0.0 && frac < 1.0)) fail("corpus.test_fraction must lie in (0, 1)");
    if (c.value("min_words", 3) < 1 || c.value("max_words", 128) < c.value("min_words", 3)) {
      fail("corpus needs 1 <= min_words <= max_words");
    }

    const json t = sec("tokenizer");
    if (t.value("max_pieces", 4000) < 0 || t.value("min_count", 2) < 1) fail("tokenizer sizes out of range");

    const json g = sec("generator");
    backend::ModelConfig::from_json(g.value("model", json::object()));
    backend::TrainConfig::from_json(g.value("pretrain", json::object()));
    backend::TrainConfig::from_json(g.value("fft", json::object()).value("train", json::object()));
    const json lora = g.value("lora", json::object());
    backend::TrainConfig::from_json(lora.value("train", json::object()));
    if (lora.value("rank", 8) < 1 || !(lora.value("alpha", 16.0) > 0.0)) fail("lora rank and alpha must be positive");

    const json gen = sec("generation");
    generation::GenerationConfig::from_json(gen).validate();
    if (gen.value("per_author", 100) < 1) fail("generation.per_author must be >= 1");
    if (gen.value("seed_vocabulary", 500) < 1) fail("generation.seed_vocabulary must be >= 1");

    detector::DetectorConfig::from_json(sec("detector"));

    const double threshold = sec("evaluate").value("threshold", 0.93);
    if (!(threshold >= 0.0 && threshold <= 1.0)) fail("evaluate.threshold must lie in [0, 1]");

    const json s = sec("synfeat");
    if (s.value("bins", 20) < 1) fail("synfeat.bins must be >= 1");
    const json feats = s.value("features", json("all"));
    if (feats.is_array()) {
      for (const auto& f : feats) {
        if (!synfeat::feature_index(f.get<std::string>())) fail("unknown feature '" + f.get<std::string>() + "'");
      }
    } else if (!(feats.is_string() && feats.get<std::string>() == "all")) {
      fail("synfeat.features must be \"all\" or a list of feature names");
    }

    const json x = sec("explain");
    if (x.value("steps", 64) < 1) fail("explain.steps must be >= 1");
    if (x.value("ae_generations", 100) < 1 || x.value("ig_generations", 10) < 1) {
      fail("explain generation counts must be >= 1");
    }
    if (x.value("top_k", 20) < 1 || x.value("min_support", 3) < 1 || x.value("ranking_sentences", 50) < 0) {
      fail("explain ranking sizes out of range");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("config value has the wrong type: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfig) throw;
    throw Error(ErrorKind::kConfig, e.what());
  }
}

Context Context::from_config(json config, std::optional<std::uint64_t> seed, std::optional<std::string> backend) {
  if (seed) config["seed"] = *seed;
  if (backend) config["backend"] = *backend;
  validate_config(config);
  Context ctx;
  ctx.seed = config.value("seed", std::uint64_t{1});
  ctx.backend = config.value("backend", std::string("reference"));
  backend::make_model(backend::ModelConfig{}, ctx.backend);  // rejects unknown backends up front
  ctx.config = std::move(config);
  return ctx;
}

corpus::TagScheme Context::scheme() const {
  const json s = config.value("scheme", json());
  return s.is_null() ? corpus::TagScheme::default_scheme() : corpus::TagScheme::from_json(s);
}

// ---------------------------------------------------------------------------
// Stage runs

json hash_tree(const fs::path& dir, const std::vector<std::string>& skip) {
  json out = json::object();
  if (!fs::exists(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (std::find(skip.begin(), skip.end(), e.path().filename().string()) != skip.end()) continue;
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = io::sha256_file(f);
  return out;
}

StageRun::StageRun(std::string stage, fs::path out, const Context& ctx, json stage_config)
    : stage_(std::move(stage)), out_(std::move(out)), started_(now_seconds()) {
  tmp_ = out_;
  tmp_ += ".tmp";
  fs::remove_all(tmp_);
  fs::create_directories(tmp_);
  const Seeds s(ctx.seed);
  manifest_ = {{"stage", stage_},
               {"config", std::move(stage_config)},
               {"backend", ctx.backend},
               {"seed", ctx.seed},
               {"seeds",
                {{"fixture", s.fixture},
                 {"split", s.split},
                 {"model", s.model},
                 {"pretrain", s.pretrain},
                 {"fft", s.fft},
                 {"lora", s.lora},
                 {"detector", s.detector},
                 {"generation", s.generation}}},
               {"inputs", json::object()}};
}

StageRun::~StageRun() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(tmp_, ec);
  }
}

void StageRun::add_input(const fs::path& path) {
  require_exists(path, "input");
  auto& inputs = manifest_["inputs"];
  if (fs::is_directory(path)) {
    const json tree = hash_tree(path);
    for (const auto& [rel, hash] : tree.items()) inputs[(path / rel).generic_string()] = hash;
  } else {
    inputs[path.generic_string()] = io::sha256_file(path);
  }
}

json StageRun::commit() {
  manifest_["outputs"] = hash_tree(tmp_);
  manifest_["wall_seconds"] = now_seconds() - started_;
  if (!extra_.empty()) manifest_["notes"] = extra_;
  io::write_json(tmp_ / "run_manifest.json", manifest_);
  if (!out_.parent_path().empty()) fs::create_directories(out_.parent_path());
  fs::remove_all(out_);
  fs::rename(tmp_, out_);
  committed_ = true;
  return manifest_;
}

// ---------------------------------------------------------------------------
// Stages

json stage_fixture(const Context& ctx, const fs::path& out) {
  auto fc = fixture::FixtureConfig::from_json(section(ctx, "fixture"));
  fc.seed = Seeds(ctx.seed).fixture;
  StageRun run("fixture", out, ctx, fc.to_json());
  const auto scheme = ctx.scheme();
  const auto fx = fixture::make_fixture(fc, scheme);
  fixture::write_fixture(fx, scheme, run.dir());
  run.note("fixture", fixture::fixture_manifest(fx, scheme));
  return run.commit();
}

json stage_corpus(const Context& ctx, const fs::path& in, const std::optional<fs::path>& parses,
                  const std::optional<fs::path>& scheme_file, const fs::path& out) {
  const json c = section(ctx, "corpus");
  require_exists(in, "corpus input");
  if (parses) require_exists(*parses, "parse sidecar");
  if (scheme_file) require_exists(*scheme_file, "scheme file");
  StageRun run("corpus", out, ctx, c);
  run.add_input(in);
  if (parses && !fs::equivalent(parses->parent_path(), in)) run.add_input(*parses);
  if (scheme_file) run.add_input(*scheme_file);

  const auto scheme = scheme_file ? corpus::TagScheme::from_json(io::read_json(*scheme_file)) : ctx.scheme();
  corpus::CorpusConfig cc;
  cc.min_words = c.value("min_words", cc.min_words);
  cc.max_words = c.value("max_words", cc.max_words);
  cc.clean.strict = c.value("strict", cc.clean.strict);
  const json abbrev = c.value("abbreviations", json());
  const auto segmenter = abbrev.is_null() ? corpus::Segmenter() : corpus::Segmenter::from_file(abbrev.get<std::string>());

  corpus::SidecarParseProvider provider;
  if (parses) provider = corpus::SidecarParseProvider::from_file(*parses);
  const auto docs = corpus::read_documents(in, scheme);
  auto built = corpus::build_corpus(docs, scheme, cc, segmenter, parses ? &provider : nullptr);
  const auto split = corpus::split_corpus(built, c.value("test_fraction", 0.2), Seeds(ctx.seed).split);
  corpus::save_corpus(split, run.dir());
  run.note("documents", docs.size());
  run.note("records", split.records.size());
  return run.commit();
}

json stage_finetune(const Context& ctx, const fs::path& corpus_dir, const std::string& task,
                    const std::optional<fs::path>& base, const fs::path& out) {
  if (task != "base" && task != "fft" && task != "lora" && task != "detector") {
    throw Error(ErrorKind::kConfig, "unknown finetune task '" + task + "' (base, fft, lora, detector)");
  }
  require_exists(corpus_dir, "corpus");
  if (base) require_exists(*base, "base checkpoint");
  json stage_config = {{"task", task},
                       {"tokenizer", section(ctx, "tokenizer")},
                       {task == "detector" ? "detector" : "generator",
                        section(ctx, task == "detector" ? "detector" : "generator")}};
  StageRun run("finetune", out, ctx, stage_config);
  run.add_input(corpus_dir);
  if (base) run.add_input(*base);

  const auto data = corpus::load_corpus(corpus_dir);
  const auto& scheme = data.scheme;
  const auto train = data.subset(corpus::Split::kTrain);
  const auto test = data.subset(corpus::Split::kTest);

  std::optional<backend::Checkpoint> base_ck;
  if (base) {
    base_ck = backend::load_checkpoint(*base);
    if (base_ck->meta.value("task", "") != "base") {
      throw Error(ErrorKind::kConfig, "checkpoint at " + base->string() + " is not a base model");
    }
    if (base_ck->meta.value("scheme_hash", "") != scheme.hash()) {
      throw Error(ErrorKind::kConfig, "base checkpoint was built for a different tag scheme");
    }
  }

  if (task == "detector") {
    const auto tok = base_ck ? base_ck->tokenizer : train_tokenizer(ctx, train, scheme);
    auto dc = detector::DetectorConfig::from_json(section(ctx, "detector"));
    dc.model.seed = Seeds(ctx.seed).detector;
    dc.train.seed = Seeds(ctx.seed).detector;
    dc.backend_name = ctx.backend;
    const auto det = detector::train_detector(train, test, tok, scheme, dc);
    detector::save_detector(det, run.dir());
    io::write_json(run.dir() / "report.json", det.report());
    return run.commit();
  }

  const auto seeds = generation::build_seed_vocabulary(
      train, static_cast<std::size_t>(section(ctx, "generation").value("seed_vocabulary", 500)));
  json meta = {{"scheme", scheme.to_json()},
               {"scheme_hash", scheme.hash()},
               {"seed_vocabulary", seeds.to_json()},
               {"backend", ctx.backend}};

  std::unique_ptr<backend::Model> model;
  backend::Tokenizer tok;
  json base_report;
  if (base_ck) {
    model = std::move(base_ck->model);
    tok = base_ck->tokenizer;
  } else {
    auto b = pretrain_base(ctx, train, scheme);
    model = std::move(b.model);
    tok = std::move(b.tokenizer);
    run.note("pretrain_wall_seconds", b.report.value("wall_seconds", 0.0));
    base_report = strip_wall(b.report);
  }

  if (task == "base") {
    meta["task"] = "base";
    meta["report"] = base_report;
    backend::save_checkpoint(*model, tok, meta, run.dir());
    io::write_json(run.dir() / "report.json", base_report);
    return run.commit();
  }

  const json g = section(ctx, "generator");
  const auto method = generation::method_from_string(task);
  generation::FineTuneConfig ft;
  if (method == generation::Method::kFft) {
    ft.train = backend::TrainConfig::from_json(g.value("fft", json::object()).value("train", json::object()));
    ft.train.seed = Seeds(ctx.seed).fft;
  } else {
    const json l = g.value("lora", json::object());
    backend::TrainConfig tc;
    tc.lr = 5e-3;
    ft.train = backend::TrainConfig::from_json(l.value("train", json::object()), tc);
    ft.train.seed = Seeds(ctx.seed).lora;
    ft.lora.rank = l.value("rank", ft.lora.rank);
    ft.lora.alpha = l.value("alpha", ft.lora.alpha);
  }
  const auto report = generation::fine_tune(*model, train, tok, scheme, method, ft).to_json();
  run.note("wall_seconds_training", report.value("wall_seconds", 0.0));
  meta["task"] = "generator";
  meta["method"] = task;
  meta["report"] = strip_wall(report);
  if (!base_report.is_null()) meta["base_report"] = base_report;
  backend::save_checkpoint(*model, tok, meta, run.dir());
  io::write_json(run.dir() / "report.json", meta["report"]);
  return run.commit();
}

json stage_generate(const Context& ctx, const fs::path& model_dir, const fs::path& out) {
  require_exists(model_dir, "generator checkpoint");
  const json g = section(ctx, "generation");
  StageRun run("generate", out, ctx, g);
  run.add_input(model_dir);
  auto ck = backend::load_checkpoint(model_dir);
  if (ck.meta.value("task", "") != "generator") {
    throw Error(ErrorKind::kConfig, "checkpoint at " + model_dir.string() + " is not a fine-tuned generator");
  }
  const auto scheme = corpus::TagScheme::from_json(ck.meta.at("scheme"));
  const auto vocab = generation::SeedVocabulary::from_json(ck.meta.at("seed_vocabulary"));
  auto gc = generation::GenerationConfig::from_json(g);
  gc.rng_seed = Seeds(ctx.seed).generation;
  const std::vector<std::int64_t> plan(static_cast<std::size_t>(scheme.author_count()),
                                       g.value("per_author", std::int64_t{100}));
  const auto set = generation::generate_batch(*ck.model, ck.tokenizer, scheme, plan, vocab, gc,
                                              ck.meta.value("method", "fft"));
  generation::save_generated(set, scheme, run.dir() / "generated.jsonl");
  json report = set.report(scheme);
  report["config"] = gc.to_json();
  io::write_json(run.dir() / "report.json", report);
  io::write_json(run.dir() / "scheme.json", scheme.to_json());
  if (!set.warnings.empty()) run.note("warnings", set.warnings);
  return run.commit();
}

json stage_evaluate(const Context& ctx, const fs::path& detector_dir, const std::optional<fs::path>& generated,
                    const std::optional<fs::path>& corpus_dir, const fs::path& out) {
  if (generated.has_value() == corpus_dir.has_value()) {
    throw Error(ErrorKind::kConfig, "evaluate takes exactly one of --generated or --corpus");
  }
  require_exists(detector_dir, "detector checkpoint");
  if (generated) require_exists(*generated, "generated sentences");
  if (corpus_dir) require_exists(*corpus_dir, "corpus");
  const double threshold = section(ctx, "evaluate").value("threshold", 0.93);
  StageRun run("evaluate", out, ctx, section(ctx, "evaluate"));
  run.add_input(detector_dir);
  const auto det = detector::load_detector(detector_dir);
  std::vector<detector::Prediction> preds;
  json extra;
  if (generated) {
    run.add_input(*generated);
    const auto set = generation::load_generated(*generated, det.scheme);
    preds = detector::classify_generated(det, set);
    extra = {{"source", "generated"}, {"method", set.method}};
  } else {
    run.add_input(*corpus_dir);
    const auto data = load_records(ctx, *corpus_dir);
    if (data.scheme.hash() != det.scheme.hash()) {
      throw Error(ErrorKind::kConfig, "corpus and detector use different tag schemes");
    }
    preds = detector::classify_records(det, held_out(data.records));
    extra = {{"source", "real_test"}};
  }
  detector::write_evaluation(preds, det.scheme, threshold, run.dir(), extra);
  return run.commit();
}

json stage_synfeat(const Context& ctx, const fs::path& real, const std::vector<fs::path>& generated,
                   const fs::path& out) {
  if (generated.empty()) throw Error(ErrorKind::kConfig, "synfeat needs at least one generated file");
  require_exists(real, "real corpus");
  for (const auto& g : generated) require_exists(g, "generated sentences");
  const json s = section(ctx, "synfeat");
  const int bins = s.value("bins", 20);
  const auto names = feature_names(ctx);
  StageRun run("synfeat", out, ctx, s);
  run.add_input(real);
  for (const auto& g : generated) run.add_input(g);

  const auto data = load_records(ctx, real);
  const auto& scheme = data.scheme;
  const auto authors = static_cast<std::size_t>(scheme.author_count());

  std::vector<json> feature_rows;
  std::vector<std::vector<synfeat::FeatureVector>> real_by_author(authors);
  std::vector<synfeat::FeatureVector> real_all;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    const auto fv = synfeat::feature_vector(r);
    real_by_author.at(static_cast<std::size_t>(r.author)).push_back(fv);
    real_all.push_back(fv);
    feature_rows.push_back({{"population", "real"},
                            {"method", nullptr},
                            {"author", scheme.author(r.author).name},
                            {"index", i},
                            {"features", fv.to_json()}});
  }

  json histograms = json::array();
  json skipped = json::array();
  std::string csv = "method,author,feature,divergence,real_n,generated_n\n";
  for (const auto& file : generated) {
    const auto set = generation::load_generated(file, scheme);
    const std::string method = set.method.empty() ? file.parent_path().filename().string() : set.method;
    std::vector<std::vector<synfeat::FeatureVector>> gen_by_author(authors);
    std::vector<synfeat::FeatureVector> gen_all;
    for (const auto& item : set.items) {
      // Generated sentences have no parse, so only text features are present.
      const auto fv = synfeat::feature_vector(item.text, nullptr);
      gen_by_author.at(static_cast<std::size_t>(item.seed.author)).push_back(fv);
      gen_all.push_back(fv);
      feature_rows.push_back({{"population", "generated"},
                              {"method", method},
                              {"author", scheme.author(item.seed.author).name},
                              {"index", item.index},
                              {"features", fv.to_json()}});
    }
    for (std::size_t a = 0; a <= authors; ++a) {
      const bool all = a == authors;
      const std::string author = all ? "all" : scheme.author(static_cast<int>(a)).name;
      const auto& rp = all ? real_all : real_by_author[a];
      const auto& gp = all ? gen_all : gen_by_author[a];
      for (const auto& name : names) {
        synfeat::Comparison cmp;
        try {
          cmp = synfeat::compare(rp, gp, name, bins);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kInvalidArgument) throw;
          skipped.push_back({{"method", method}, {"author", author}, {"feature", name}, {"reason", e.what()}});
          continue;
        }
        cmp.real.author = author;
        cmp.generated.author = author;
        histograms.push_back({{"method", method},
                              {"author", author},
                              {"feature", name},
                              {"real", cmp.real.to_json()},
                              {"generated", cmp.generated.to_json()},
                              {"divergence", cmp.divergence}});
        csv += csv_field(method) + "," + csv_field(author) + "," + name + "," + num(cmp.divergence) + "," +
               std::to_string(cmp.real.total()) + "," + std::to_string(cmp.generated.total()) + "\n";
      }
    }
  }
  io::write_jsonl(run.dir() / "features.jsonl", feature_rows);
  io::write_json(run.dir() / "histograms.json",
                 {{"bins", bins}, {"registry_hash", synfeat::registry_hash()}, {"histograms", histograms}});
  io::write_file(run.dir() / "divergence.csv", csv);
  io::write_json(run.dir() / "summary.json", {{"compared", histograms.size()}, {"skipped", skipped}});
  return run.commit();
}

json stage_explain(const Context& ctx, const std::string& mode, const fs::path& model_dir, const fs::path& input,
                   const fs::path& out) {
  if (mode != "ae" && mode != "ig-gen" && mode != "ig-cls") {
    throw Error(ErrorKind::kConfig, "unknown explain mode '" + mode + "' (ae, ig-gen, ig-cls)");
  }
  require_exists(model_dir, "model checkpoint");
  require_exists(input, "explain input");
  const json x = section(ctx, "explain");
  const int steps = x.value("steps", 64);
  StageRun run("explain", out, ctx, {{"mode", mode}, {"explain", x}});
  run.add_input(model_dir);
  run.add_input(input);

  if (mode == "ig-cls") {
    const auto det = detector::load_detector(model_dir);
    const auto data = load_records(ctx, input);
    const auto records = held_out(data.records);
    xai::RankingConfig rc;
    rc.steps = steps;
    rc.top_k = static_cast<std::size_t>(x.value("top_k", 20));
    rc.min_support = x.value("min_support", std::int64_t{3});
    rc.max_sentences = static_cast<std::size_t>(x.value("ranking_sentences", 50));
    json rankings = json::array();
    for (int a = 0; a < det.scheme.author_count(); ++a) {
      rankings.push_back(xai::classifier_token_ranking(det, records, a, rc).to_json(det.scheme));
    }
    io::write_json(run.dir() / "top_tokens.json", {{"steps", steps}, {"rankings", rankings}});
    return run.commit();
  }

  auto ck = backend::load_checkpoint(model_dir);
  if (ck.meta.value("task", "") != "generator") {
    throw Error(ErrorKind::kConfig, "checkpoint at " + model_dir.string() + " is not a fine-tuned generator");
  }
  const auto scheme = corpus::TagScheme::from_json(ck.meta.at("scheme"));
  const auto set = generation::load_generated(input, scheme);
  const int context = ck.model->config().context;
  std::int64_t unmatched = 0;

  if (mode == "ae") {
    const auto items = pick_items(set, scheme.author_count(), static_cast<std::size_t>(x.value("ae_generations", 100)));
    std::vector<std::vector<xai::EnrichmentProfile>> per_tag(static_cast<std::size_t>(scheme.author_count()));
    std::vector<xai::EnrichmentProfile> all;
    json per_generation = json::array();
    std::int64_t above = 0;
    for (const auto* item : items) {
      const auto rb = rebuild(*item, ck.tokenizer, scheme, context);
      if (!rb.prompt_matched) ++unmatched;
      const auto trace = ck.model->forward(rb.raw.token_ids, backend::kCaptureAttentions);
      const auto span = xai::find_tag_span(rb.raw.token_ids, ck.tokenizer, scheme);
      if (!span) throw Error(ErrorKind::kInvalidArgument, "generation has no author tag");
      const auto p = xai::generation_profile(trace, *span, rb.raw.prompt_length);
      per_tag[static_cast<std::size_t>(item->seed.author)].push_back(p);
      all.push_back(p);
      if (p.max_enrichment() > 1.0) ++above;
      json layers = json::array();
      for (const auto& l : p.layers) layers.push_back(l.enrichment);
      per_generation.push_back({{"index", item->index},
                                {"author", scheme.author(item->seed.author).name},
                                {"max_enrichment", p.max_enrichment()},
                                {"enrichment", layers}});
    }
    std::vector<std::pair<std::string, xai::EnrichmentProfile>> by_tag;
    json tags = json::array();
    for (int a = 0; a < scheme.author_count(); ++a) {
      const auto& list = per_tag[static_cast<std::size_t>(a)];
      if (list.empty()) continue;
      const auto avg = xai::average_profiles(list);
      by_tag.emplace_back(scheme.tag_for(a), avg);
      tags.push_back({{"tag", scheme.tag_for(a)}, {"author", scheme.author(a).name}, {"profile", avg.to_json()}});
    }
    const double fraction = items.empty() ? 0.0 : static_cast<double>(above) / static_cast<double>(items.size());
    io::write_file(run.dir() / "enrichment.csv", xai::enrichment_csv(by_tag));
    io::write_json(run.dir() / "enrichment.json",
                   {{"method", set.method},
                    {"generations", items.size()},
                    {"above_one", above},
                    {"fraction_above_one", fraction},
                    {"prompt_rebuilt_as_tag_only", unmatched},
                    {"per_tag", tags},
                    {"all", all.empty() ? json() : xai::average_profiles(all).to_json()},
                    {"per_generation", per_generation}});
    return run.commit();
  }

  const auto items = pick_items(set, scheme.author_count(), static_cast<std::size_t>(x.value("ig_generations", 10)));
  json heatmaps = json::array();
  double tag_sum = 0.0, other_sum = 0.0, worst_gap = 0.0;
  std::int64_t compared = 0, tag_wins = 0;
  for (const auto* item : items) {
    const auto rb = rebuild(*item, ck.tokenizer, scheme, context);
    if (!rb.prompt_matched) ++unmatched;
    const auto m = xai::tag_attribution_heatmap(*ck.model, ck.tokenizer, rb.raw, steps);
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) worst_gap = std::max(worst_gap, m.relative_gap(static_cast<int>(j)));
    json row = {{"index", item->index},
                {"author", scheme.author(item->seed.author).name},
                {"text", item->text},
                {"heatmap", m.to_json()}};
    if (m.values.rows() > 1 && m.values.cols() > 0) {
      // Tag row against the mean of the other prompt rows.
      const double tag = m.values.row(0).mean();
      const double other = m.values.bottomRows(m.values.rows() - 1).mean();
      row["tag_mean"] = tag;
      row["other_prompt_mean"] = other;
      tag_sum += tag;
      other_sum += other;
      ++compared;
      if (tag > other) ++tag_wins;
    }
    heatmaps.push_back(std::move(row));
  }
  json summary = {{"generations", items.size()},
                  {"steps", steps},
                  {"worst_relative_gap", worst_gap},
                  {"prompt_rebuilt_as_tag_only", unmatched},
                  {"with_seed_words", compared},
                  {"tag_beats_seed_words", tag_wins}};
  if (compared > 0) {
    summary["mean_tag_attribution"] = tag_sum / static_cast<double>(compared);
    summary["mean_seed_word_attribution"] = other_sum / static_cast<double>(compared);
  }
  io::write_json(run.dir() / "ig_heatmaps.json", {{"summary", summary}, {"heatmaps", heatmaps}});
  return run.commit();
}

const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> kinds = {"agreement_bubbles", "histograms", "enrichment_table", "ig_heatmap",
                                                 "top_tokens"};
  return kinds;
}

json stage_plotdata(const Context& ctx, const std::string& kind, const fs::path& in, const fs::path& out) {
  const bool all = kind == "all";
  if (!all && std::find(plot_kinds().begin(), plot_kinds().end(), kind) == plot_kinds().end()) {
    throw Error(ErrorKind::kConfig, "unknown plot kind '" + kind + "'");
  }
  require_exists(in, "plot input");
  StageRun run("plotdata", out, ctx, {{"kind", kind}});
  run.add_input(in);
  json emitted = json::object();
  for (const auto& k : plot_kinds()) {
    if (all || k == kind) emitted[k] = emit(k, in, run.dir());
  }
  run.note("emitted", emitted);
  return run.commit();
}

// ---------------------------------------------------------------------------
// Pipeline

json run_pipeline(const Context& ctx, const fs::path& out, const std::function<void(const std::string&)>& log) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  json manifests = json::object();
  auto step = [&](const std::string& name, const fs::path& dir, const std::function<json()>& fn) {
    say("[" + name + "] -> " + dir.string());
    try {
      manifests[name] = {{"dir", fs::relative(dir, out).generic_string()}, {"outputs", fn().at("outputs")}};
    } catch (const Error& e) {
      throw Error(e.kind(), "stage " + name + " failed (manifest " + (dir / "run_manifest.json").string() +
                                " not written): " + e.what());
    }
  };
  fs::create_directories(out);
  const json c = section(ctx, "corpus");

  fs::path docs;
  std::optional<fs::path> parses;
  if (c.value("source", "fixture") == "fixture") {
    docs = out / "fixture";
    step("fixture", docs, [&] { return stage_fixture(ctx, docs); });
    parses = docs / "parses.jsonl";
  } else {
    docs = c.at("in").get<std::string>();
    if (!c.value("parses", json()).is_null()) parses = fs::path(c["parses"].get<std::string>());
  }
  const auto corpus_dir = out / "corpus";
  step("corpus", corpus_dir, [&] { return stage_corpus(ctx, docs, parses, std::nullopt, corpus_dir); });

  const auto ft = out / "finetune";
  step("finetune/base", ft / "base", [&] { return stage_finetune(ctx, corpus_dir, "base", std::nullopt, ft / "base"); });
  for (const char* m : {"fft", "lora"}) {
    step(std::string("finetune/") + m, ft / m, [&] { return stage_finetune(ctx, corpus_dir, m, ft / "base", ft / m); });
  }
  step("finetune/detector", ft / "detector",
       [&] { return stage_finetune(ctx, corpus_dir, "detector", ft / "base", ft / "detector"); });

  const auto gen = out / "generate";
  for (const char* m : {"fft", "lora"}) {
    step(std::string("generate/") + m, gen / m, [&] { return stage_generate(ctx, ft / m, gen / m); });
  }

  const auto ev = out / "evaluate";
  for (const char* m : {"fft", "lora"}) {
    step(std::string("evaluate/") + m, ev / m, [&] {
      return stage_evaluate(ctx, ft / "detector", gen / m / "generated.jsonl", std::nullopt, ev / m);
    });
  }
  step("evaluate/real", ev / "real",
       [&] { return stage_evaluate(ctx, ft / "detector", std::nullopt, corpus_dir, ev / "real"); });

  step("synfeat", out / "synfeat", [&] {
    return stage_synfeat(ctx, corpus_dir / "corpus.jsonl",
                         {gen / "fft" / "generated.jsonl", gen / "lora" / "generated.jsonl"}, out / "synfeat");
  });

  const auto ex = out / "explain";
  for (const char* m : {"fft", "lora"}) {
    step(std::string("explain/ae/") + m, ex / "ae" / m,
         [&] { return stage_explain(ctx, "ae", ft / m, gen / m / "generated.jsonl", ex / "ae" / m); });
  }
  step("explain/ig-gen", ex / "ig-gen",
       [&] { return stage_explain(ctx, "ig-gen", ft / "fft", gen / "fft" / "generated.jsonl", ex / "ig-gen"); });
  step("explain/ig-cls", ex / "ig-cls",
       [&] { return stage_explain(ctx, "ig-cls", ft / "detector", corpus_dir, ex / "ig-cls"); });

  step("plotdata", out / "plotdata", [&] { return stage_plotdata(ctx, "all", out, out / "plotdata"); });

  auto metric = [&](const fs::path& p) { return io::read_json(p); };
  json summary = {{"seed", ctx.seed}, {"backend", ctx.backend}, {"stages", manifests}};
  const auto det = metric(ft / "detector" / "report.json");
  summary["detector"] = {{"best_epoch", det.value("best_epoch", 0)}, {"epochs", det.at("epochs")}};
  for (const char* m : {"fft", "lora", "real"}) {
    const auto a = metric(ev / m / "agreement.json");
    const auto f = metric(ev / m / "filtered_report.json");
    summary["evaluate"][m] = {{"agreement", a.at("agreement_rate")},
                              {"binomial_p_value", a.at("binomial_p_value")},
                              {"total", a.at("total")},
                              {"filtered", f}};
  }
  for (const char* m : {"fft", "lora"}) {
    const auto e = metric(ex / "ae" / m / "enrichment.json");
    summary["explain"]["ae"][m] = {{"fraction_above_one", e.at("fraction_above_one")},
                                   {"generations", e.at("generations")}};
  }
  summary["explain"]["ig_gen"] = metric(ex / "ig-gen" / "ig_heatmaps.json").at("summary");
  say("[summary] -> " + (out / "summary").string());
  StageRun run("summary", out / "summary", ctx, json::object());
  io::write_json(run.dir() / "pipeline.json", summary);
  run.commit();
  say("pipeline complete: " + (out / "summary" / "pipeline.json").string());
  return summary;
}

int exit_code_for(ErrorKind kind) { return kind == ErrorKind::kConfig ? 2 : 3; }

}  // namespace styleforge::cli
