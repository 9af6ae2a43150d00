#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "styleforge/error.hpp"
#include "styleforge/io.hpp"
#include "styleforge/pipeline.hpp"

using namespace styleforge;
using namespace styleforge::cli;

namespace {

const fs::path kSource = STYLEFORGE_SOURCE_DIR;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("styleforge_cli_" + name);
  fs::remove_all(p);
  return p;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::kInvalidArgument;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STYLEFORGE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(io::read_file(p));
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) rows.push_back(split_csv_line(line));
  return rows;
}

std::map<std::string, json> manifests_under(const fs::path& root) {
  std::map<std::string, json> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.path().filename() == "run_manifest.json") {
      out[fs::relative(e.path().parent_path(), root).generic_string()] = io::read_json(e.path());
    }
  }
  return out;
}

// One small end-to-end run shared by the tests below.
const fs::path& small_run() {
  static const fs::path root = [] {
    const auto out = scratch("small_a");
    run_pipeline(Context::from_config(load_config(kSource / "data/small_pipeline.jsonc"), std::nullopt, std::nullopt),
                 out);
    return out;
  }();
  return root;
}

}  // namespace

TEST_CASE("shipped default config matches the built-in defaults") {
  const auto shipped = json::parse(io::read_file(kSource / "data/default_config.jsonc"), nullptr, true, true);
  CHECK(shipped == default_config());
  CHECK_NOTHROW(validate_config(default_config()));
}

TEST_CASE("config files merge over the defaults") {
  const auto dir = scratch("config");
  io::write_file(dir / "c.jsonc", "// comment\n{\"evaluate\": {\"threshold\": 0.5}, \"seed\": 9}\n");
  const auto c = load_config(dir / "c.jsonc");
  CHECK(c["evaluate"]["threshold"] == 0.5);
  CHECK(c["seed"] == 9);
  CHECK(c["detector"]["patience"] == 3);

  const auto ctx = Context::from_config(c, 4u, std::nullopt);
  CHECK(ctx.seed == 4);
  CHECK(ctx.config["seed"] == 4);
  CHECK(ctx.scheme().hash() == corpus::TagScheme::default_scheme().hash());
}

TEST_CASE("invalid configs are config errors") {
  auto with = [](const std::string& patch) {
    json c = default_config();
    c.merge_patch(json::parse(patch));
    return c;
  };
  CHECK(kind_of([&] { validate_config(with(R"({"bogus": 1})")); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { validate_config(with(R"({"evaluate": {"threshold": 1.5}})")); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { validate_config(with(R"({"corpus": {"test_fraction": 0}})")); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { validate_config(with(R"({"generation": {"temperature": 0}})")); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { validate_config(with(R"({"detector": {"patience": 0}})")); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { validate_config(with(R"({"synfeat": {"features": ["nope"]}})")); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { validate_config(with(R"({"synfeat": {"bins": "many"}})")); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { validate_config(with(R"({"corpus": {"source": "directory"}})")); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { Context::from_config(default_config(), std::nullopt, std::string("cuda")); }) ==
        ErrorKind::kConfig);

  const auto dir = scratch("badjson");
  io::write_file(dir / "c.json", "{ not json");
  CHECK(kind_of([&] { load_config(dir / "c.json"); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { load_config(dir / "missing.json"); }) == ErrorKind::kIo);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorKind::kConfig) == 2);
  for (auto k : {ErrorKind::kIo, ErrorKind::kDivergence, ErrorKind::kMissingAuthor, ErrorKind::kNumericalFailure}) {
    CHECK(exit_code_for(k) == 3);
  }
}

TEST_CASE("hash_tree lists files by relative path") {
  const auto dir = scratch("hash");
  io::write_file(dir / "a.txt", "abc");
  io::write_file(dir / "sub/b.txt", "");
  io::write_file(dir / "run_manifest.json", "{}");
  const auto h = hash_tree(dir);
  CHECK(h.size() == 2);
  CHECK(h["a.txt"] == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(h["sub/b.txt"] == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("a failing stage leaves no partial output and keeps earlier output") {
  const Context ctx;
  const auto out = scratch("atomic");
  {
    StageRun run("demo", out, ctx, json::object());
    io::write_file(run.dir() / "x.txt", "first");
    const auto m = run.commit();
    CHECK(m["outputs"].size() == 1);
    CHECK(m["stage"] == "demo");
  }
  try {
    StageRun run("demo", out, ctx, json::object());
    io::write_file(run.dir() / "x.txt", "second");
    throw Error(ErrorKind::kIo, "boom");
  } catch (const Error&) {
  }
  CHECK(io::read_file(out / "x.txt") == "first");
  CHECK_FALSE(fs::exists(fs::path(out.string() + ".tmp")));

  const auto missing = scratch("missing_out");
  CHECK(kind_of([&] { stage_generate(ctx, "/nonexistent/model", missing); }) == ErrorKind::kIo);
  CHECK(kind_of([&] { stage_evaluate(ctx, "/nonexistent/det", fs::path("/nonexistent/g.jsonl"), std::nullopt, missing); }) ==
        ErrorKind::kIo);
  CHECK(kind_of([&] { stage_corpus(ctx, "/nonexistent/books", std::nullopt, std::nullopt, missing); }) ==
        ErrorKind::kIo);
  CHECK_FALSE(fs::exists(missing));
  CHECK_FALSE(fs::exists(fs::path(missing.string() + ".tmp")));
}

TEST_CASE("small pipeline completes every stage") {
  const auto& root = small_run();
  const auto m = manifests_under(root);
  for (const char* stage : {"fixture", "corpus", "finetune/base", "finetune/fft", "finetune/lora",
                            "finetune/detector", "generate/fft", "generate/lora", "evaluate/fft", "evaluate/lora",
                            "evaluate/real", "synfeat", "explain/ae/fft", "explain/ae/lora", "explain/ig-gen",
                            "explain/ig-cls", "plotdata", "summary"}) {
    INFO(stage);
    REQUIRE(m.count(stage) == 1);
    CHECK(m.at(stage).contains("wall_seconds"));
    CHECK(m.at(stage)["backend"] == "reference");
  }
  const auto summary = io::read_json(root / "summary/pipeline.json");
  CHECK(summary["evaluate"]["fft"]["total"] == 20);
  CHECK(summary["evaluate"]["lora"]["total"] == 20);
}

TEST_CASE("every output file is listed in exactly one manifest") {
  const auto& root = small_run();
  std::map<std::string, int> listed;
  for (const auto& [dir, m] : manifests_under(root)) {
    for (const auto& [rel, hash] : m["outputs"].items()) {
      const auto path = (dir == "." ? fs::path(rel) : fs::path(dir) / rel).generic_string();
      ++listed[path];
      CHECK(io::sha256_file(root / path) == hash.get<std::string>());
    }
  }
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
    const auto rel = fs::relative(e.path(), root).generic_string();
    INFO(rel);
    CHECK(listed[rel] == 1);
  }
}

TEST_CASE("rerunning with the same inputs reproduces every output hash") {
  const auto& a = small_run();
  const auto b = scratch("small_b");
  run_pipeline(Context::from_config(load_config(kSource / "data/small_pipeline.jsonc"), std::nullopt, std::nullopt), b);
  const auto ma = manifests_under(a);
  const auto mb = manifests_under(b);
  REQUIRE(ma.size() == mb.size());
  for (const auto& [stage, m] : ma) {
    INFO(stage);
    CHECK(m["outputs"] == mb.at(stage)["outputs"]);
  }
}

TEST_CASE("a different seed changes the trained outputs") {
  const auto& a = small_run();
  const auto out = scratch("seeded");
  auto ctx = Context::from_config(load_config(kSource / "data/small_pipeline.jsonc"), 2u, std::nullopt);
  stage_fixture(ctx, out / "fixture");
  CHECK(hash_tree(out / "fixture") != hash_tree(a / "fixture"));
}

TEST_CASE("histogram plot data conserves counts") {
  const auto& root = small_run();
  const auto rows = read_csv(root / "plotdata/histograms.csv");
  REQUIRE(rows.size() > 1);
  CHECK(rows[0] == std::vector<std::string>{"method", "author", "feature", "population", "population_size", "bin",
                                            "lo", "hi", "count"});
  std::map<std::string, std::pair<long, long>> sums;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    auto& s = sums[r[0] + "|" + r[1] + "|" + r[2] + "|" + r[3]];
    s.first += std::stol(r[8]);
    s.second = std::stol(r[4]);
  }
  for (const auto& [key, s] : sums) {
    INFO(key);
    CHECK(s.first == s.second);
  }
  // The real words_per_sentence population is the whole corpus.
  const auto corpus_rows = io::read_jsonl(root / "corpus/corpus.jsonl");
  CHECK(sums.at("fft|all|words_per_sentence|real").second == static_cast<long>(corpus_rows.size()));
  CHECK(sums.at("fft|all|words_per_sentence|generated").second == 20);
}

TEST_CASE("agreement plot data is the long form of each matrix") {
  const auto& root = small_run();
  const auto rows = read_csv(root / "plotdata/agreement_long.csv");
  CHECK(rows[0] == std::vector<std::string>{"source", "expected", "predicted", "count"});
  std::map<std::string, long> totals;
  for (std::size_t i = 1; i < rows.size(); ++i) totals[rows[i][0]] += std::stol(rows[i][3]);
  for (const char* src : {"evaluate/fft", "evaluate/lora", "evaluate/real"}) {
    const auto a = io::read_json(root / src / "agreement.json");
    CHECK(totals.at(src) == a["total"].get<long>());
  }
  CHECK(rows.size() == 1 + 3 * 25);
}

TEST_CASE("enrichment table has layer rows, tag columns and mass (xenrichment) cells") {
  const auto dir = scratch("table");
  json profile = {{"layers",
                   {{{"layer", 0}, {"mass", 0.04}, {"enrichment", 0.62}},
                    {{"layer", 1}, {"mass", 0.0912}, {"enrichment", 1.46}}}},
                  {"T", 20.0},
                  {"tag_len", 1},
                  {"samples", 7}};
  io::write_json(dir / "in/enrichment.json",
                 {{"per_tag", {{{"tag", "<0>"}, {"author", "Dickens"}, {"profile", profile}},
                               {{"tag", "<1>"}, {"author", "Austen"}, {"profile", profile}}}}});
  stage_plotdata(Context{}, "enrichment_table", dir / "in/enrichment.json", dir / "out");
  CHECK(io::read_file(dir / "out/enrichment_table_in.csv") ==
        "layer,<0>,<1>\n"
        "00,0.04 (x0.6),0.04 (x0.6)\n"
        "01,0.09 (x1.5),0.09 (x1.5)\n");

  const auto& root = small_run();
  const std::regex cell(R"(^\d\d(,\d+\.\d\d \(x\d+\.\d\))+$)");
  const auto table = io::read_file(root / "plotdata/enrichment_table_explain_ae_fft.csv");
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,<0>,<1>,<2>,<3>,<4>");
  int layers = 0;
  while (std::getline(in, line)) {
    CHECK(std::regex_match(line, cell));
    ++layers;
  }
  CHECK(layers == 1);
}

TEST_CASE("unknown plot kinds are usage errors") {
  const auto dir = scratch("kind");
  CHECK(kind_of([&] { stage_plotdata(Context{}, "pie_chart", small_run(), dir); }) == ErrorKind::kConfig);
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("command line exit codes") {
  const auto dir = scratch("exit");
  CHECK(run_cli("--out " + (dir / "a").string() + " generate --model /nonexistent") == 3);
  CHECK_FALSE(fs::exists(dir / "a"));
  CHECK(run_cli("--out " + (dir / "b").string() + " plotdata pie_chart --in " + small_run().string()) == 2);
  CHECK(run_cli("--out " + (dir / "c").string() + " --config /nonexistent.json pipeline") == 3);
  io::write_file(dir / "bad.json", "{\"evaluate\": {\"threshold\": 2}}");
  CHECK(run_cli("--config " + (dir / "bad.json").string() + " --out " + (dir / "d").string() + " pipeline") == 2);
  CHECK(run_cli("--out " + (dir / "e").string() + " frobnicate") == 2);
  CHECK(run_cli("--out " + (dir / "f").string() + " finetune --corpus x --task nope") == 2);
  CHECK(run_cli("--out " + (dir / "g").string() + " --backend cuda corpus --fixture") == 2);
  CHECK_FALSE(fs::exists(dir / "d"));

  CHECK(run_cli("--out " + (dir / "plots").string() + " plotdata top_tokens --in " +
                (small_run() / "explain/ig-cls/top_tokens.json").string()) == 0);
  const auto rows = read_csv(dir / "plots/top_tokens.csv");
  CHECK(rows[0] == std::vector<std::string>{"author", "rank", "token", "mean", "mean_magnitude", "support"});
  CHECK(rows.size() > 5);
  CHECK(fs::exists(dir / "plots/run_manifest.json"));
}
