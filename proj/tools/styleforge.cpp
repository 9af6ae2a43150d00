// styleforge: corpus build, fine-tuning, generation, evaluation, syntactic
// features and explanations from one entry point.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "styleforge/error.hpp"
#include "styleforge/pipeline.hpp"

namespace {

namespace cli = styleforge::cli;
using styleforge::Error;
using styleforge::ErrorKind;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::string out;
};

void print_manifest(const nlohmann::json& m) {
  std::cout << m.value("stage", "") << ": " << m.at("outputs").size() << " output file(s)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Authorial style generation, detection and explanation toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config (comments allowed) merged over the defaults");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--backend", g.backend, "model backend");
  app.add_option("--out", g.out, "output directory")->required();

  std::string corpus_in, parses, scheme_file;
  bool fixture = false;
  auto* corpus = app.add_subcommand("corpus", "build a cleaned, segmented, split corpus");
  corpus->add_flag("--fixture", fixture, "write the synthetic fixture books to --out instead");
  corpus->add_option("--in", corpus_in, "directory of <Author>/*.txt books");
  corpus->add_option("--parses", parses, "jsonl sidecar of {text, parse}");
  corpus->add_option("--scheme", scheme_file, "tag scheme JSON");

  std::string ft_corpus, task, base;
  auto* finetune = app.add_subcommand("finetune", "train a base model, a generator or the detector");
  finetune->add_option("--corpus", ft_corpus, "corpus directory")->required();
  finetune->add_option("--task", task, "base, fft, lora or detector")
      ->required()
      ->check(CLI::IsMember({"base", "fft", "lora", "detector"}));
  finetune->add_option("--base", base, "base checkpoint to start from");

  std::string model;
  auto* generate = app.add_subcommand("generate", "sample sentences from a fine-tuned generator");
  generate->add_option("--model", model, "generator checkpoint")->required();

  std::string detector, generated, eval_corpus;
  auto* evaluate = app.add_subcommand("evaluate", "classify sentences and report agreement");
  evaluate->add_option("--detector", detector, "detector checkpoint")->required();
  auto* gen_opt = evaluate->add_option("--generated", generated, "generated.jsonl");
  auto* corp_opt = evaluate->add_option("--corpus", eval_corpus, "corpus directory (test split is classified)");
  gen_opt->excludes(corp_opt);

  std::string real;
  std::vector<std::string> gen_files;
  auto* synfeat = app.add_subcommand("synfeat", "compare syntactic feature distributions");
  synfeat->add_option("--real", real, "corpus directory or corpus.jsonl")->required();
  synfeat->add_option("--generated", gen_files, "generated.jsonl files")->required();

  std::string mode, ex_model, ex_input;
  auto* explain = app.add_subcommand("explain", "attention enrichment and integrated gradients");
  explain->add_option("mode", mode, "ae, ig-gen or ig-cls")
      ->required()
      ->check(CLI::IsMember({"ae", "ig-gen", "ig-cls"}));
  explain->add_option("--model", ex_model, "generator (ae, ig-gen) or detector (ig-cls) checkpoint")->required();
  explain->add_option("--input", ex_input, "generated.jsonl (ae, ig-gen) or corpus (ig-cls)")->required();

  auto* pipeline = app.add_subcommand("pipeline", "run every stage in order under --out");

  std::string kind, plot_in;
  auto* plotdata = app.add_subcommand("plotdata", "emit plain CSV data for figures and tables");
  plotdata->add_option("kind", kind, "agreement_bubbles, histograms, enrichment_table, ig_heatmap, top_tokens or all")
      ->required();
  plotdata->add_option("--in", plot_in, "report file or directory to search")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto config = g.config.empty() ? cli::default_config() : cli::load_config(g.config);
    const auto ctx = cli::Context::from_config(std::move(config), g.seed, g.backend);
    const cli::fs::path out = g.out;
    auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<cli::fs::path>(s); };

    if (*corpus) {
      if (fixture) {
        print_manifest(cli::stage_fixture(ctx, out));
      } else {
        if (corpus_in.empty()) throw Error(ErrorKind::kConfig, "corpus needs --in or --fixture");
        print_manifest(cli::stage_corpus(ctx, corpus_in, opt(parses), opt(scheme_file), out));
      }
    } else if (*finetune) {
      print_manifest(cli::stage_finetune(ctx, ft_corpus, task, opt(base), out));
    } else if (*generate) {
      print_manifest(cli::stage_generate(ctx, model, out));
    } else if (*evaluate) {
      print_manifest(cli::stage_evaluate(ctx, detector, opt(generated), opt(eval_corpus), out));
    } else if (*synfeat) {
      std::vector<cli::fs::path> files(gen_files.begin(), gen_files.end());
      print_manifest(cli::stage_synfeat(ctx, real, files, out));
    } else if (*explain) {
      print_manifest(cli::stage_explain(ctx, mode, ex_model, ex_input, out));
    } else if (*pipeline) {
      cli::run_pipeline(ctx, out, [](const std::string& line) { std::cerr << line << "\n"; });
    } else if (*plotdata) {
      print_manifest(cli::stage_plotdata(ctx, kind, plot_in, out));
    }
  } catch (const Error& e) {
    std::cerr << "error (" << styleforge::to_string(e.kind()) << "): " << e.what() << "\n";
    return cli::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
