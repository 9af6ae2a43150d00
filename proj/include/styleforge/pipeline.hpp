#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "styleforge/corpus.hpp"
#include "styleforge/error.hpp"

namespace styleforge::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// Every hyperparameter with its default. User config files are merged over
// this (JSON merge patch); comments are allowed in config files.
json default_config();
json load_config(const fs::path& path);
// Throws kConfig on unknown sections or values out of range.
void validate_config(const json& config);

struct Context {
  json config = default_config();
  std::uint64_t seed = 1;
  std::string backend = "reference";

  // Applies the global --seed / --backend overrides.
  static Context from_config(json config, std::optional<std::uint64_t> seed, std::optional<std::string> backend);
  corpus::TagScheme scheme() const;
};

// One stage invocation. Outputs go to `<out>.tmp`, which is renamed onto
// `out` by commit() together with run_manifest.json. If the stage throws,
// the temporary directory is removed and any earlier `out` is untouched.
class StageRun {
 public:
  StageRun(std::string stage, fs::path out, const Context& ctx, json stage_config);
  ~StageRun();
  StageRun(const StageRun&) = delete;
  StageRun& operator=(const StageRun&) = delete;

  // Hashes an input file, or every file below an input directory.
  void add_input(const fs::path& path);
  const fs::path& dir() const { return tmp_; }
  void note(const std::string& key, json value) { extra_[key] = std::move(value); }
  json commit();

 private:
  std::string stage_;
  fs::path out_;
  fs::path tmp_;
  json manifest_;
  json extra_ = json::object();
  bool committed_ = false;
  double started_ = 0.0;
};

// sha256 of every regular file below `dir`, keyed by relative path.
json hash_tree(const fs::path& dir, const std::vector<std::string>& skip = {"run_manifest.json"});

// ---------------------------------------------------------------------------
// Stages. Each returns the committed run manifest.

json stage_fixture(const Context& ctx, const fs::path& out);
json stage_corpus(const Context& ctx, const fs::path& in, const std::optional<fs::path>& parses,
                  const std::optional<fs::path>& scheme_file, const fs::path& out);
// task: "base", "fft", "lora" or "detector". Generators start from `base`
// when given, otherwise a base model is pretrained first.
json stage_finetune(const Context& ctx, const fs::path& corpus_dir, const std::string& task,
                    const std::optional<fs::path>& base, const fs::path& out);
json stage_generate(const Context& ctx, const fs::path& model_dir, const fs::path& out);
json stage_evaluate(const Context& ctx, const fs::path& detector_dir, const std::optional<fs::path>& generated,
                    const std::optional<fs::path>& corpus_dir, const fs::path& out);
json stage_synfeat(const Context& ctx, const fs::path& real, const std::vector<fs::path>& generated,
                   const fs::path& out);
// mode: "ae", "ig-gen" or "ig-cls".
json stage_explain(const Context& ctx, const std::string& mode, const fs::path& model_dir, const fs::path& input,
                   const fs::path& out);

// kind: agreement_bubbles, histograms, enrichment_table, ig_heatmap, top_tokens.
const std::vector<std::string>& plot_kinds();
json stage_plotdata(const Context& ctx, const std::string& kind, const fs::path& in, const fs::path& out);

// All stages in dependency order under `out`, then summary/pipeline.json
// with the headline metrics. Stops at the first failing stage; completed
// stages keep their outputs.
json run_pipeline(const Context& ctx, const fs::path& out, const std::function<void(const std::string&)>& log = {});

// Error kind -> process exit code (0 ok, 2 config, 3 stage failure).
int exit_code_for(ErrorKind kind);

}  // namespace styleforge::cli
