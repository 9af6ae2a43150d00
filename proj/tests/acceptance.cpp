// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.
//
//   acceptance [--run DIR]
//
// Criteria 5-7 read the outputs of a default `styleforge pipeline` run in
// DIR; without --run the pipeline is run in-process first.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "styleforge/detector.hpp"
#include "styleforge/error.hpp"
#include "styleforge/fixture.hpp"
#include "styleforge/generation.hpp"
#include "styleforge/io.hpp"
#include "styleforge/pipeline.hpp"
#include "styleforge/rng.hpp"
#include "styleforge/synfeat.hpp"
#include "styleforge/xai.hpp"

using namespace styleforge;
using backend::Matrix;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Matrix causal_uniform(int T) {
  Matrix a = Matrix::Zero(T, T);
  for (int q = 0; q < T; ++q) {
    for (int k = 0; k <= q; ++k) a(q, k) = 1.0 / (q + 1);
  }
  return a;
}

// 1. Enrichment calibration.
Outcome enrichment_calibration() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int T = 2; T <= 16; ++T) {
    for (int len = 1; len < T; ++len) {
      backend::ForwardTrace trace;
      trace.valid_len = T;
      trace.attentions.assign(4, std::vector<Matrix>(2, Matrix::Constant(T, T, 1.0 / T)));
      for (const auto& l : xai::enrichment_profile(trace, {0, len}).layers) {
        worst = std::max(worst, std::abs(l.enrichment - 1.0));
      }
    }
  }
  backend::ForwardTrace causal;
  causal.valid_len = 4;
  causal.attentions = {{causal_uniform(4), causal_uniform(4)}};
  const auto p = xai::enrichment_profile(causal, {0, 1});
  const double mass_err = std::abs(p.layers[0].mass - 13.0 / 36.0);
  const double enr_err = std::abs(p.layers[0].enrichment - 13.0 / 9.0);
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && mass_err <= 1e-12 && enr_err <= 1e-12 && secs < 1.0,
          "uniform max |E-1| " + fmt("%.2e", worst) + ", causal mass err " + fmt("%.2e", mass_err) +
              ", enrichment err " + fmt("%.2e", enr_err) + ", " + fmt("%.3f s", secs)};
}

// 2. Linear-target IG equals (e - e') * w.
Outcome linear_ig() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int T = 2 + static_cast<int>(rng.below(8));
    const int D = 1 + static_cast<int>(rng.below(16));
    Matrix w(T, D), e(T, D), b(T, D);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w.data()[i] = rng.normal();
      e.data()[i] = rng.normal();
      b.data()[i] = rng.uniform() < 0.5 ? 0.0 : rng.normal();
    }
    const xai::EmbeddingFunction f = [&](const Matrix& x, Matrix* g) {
      if (g) *g = w;
      return (w.array() * x.array()).sum() + 0.5;
    };
    for (int steps : {1, 2, 7, 64, 300}) {
      const auto ig = xai::integrated_gradients(f, e, b, steps);
      const Matrix expected = ((e - b).array() * w.array()).matrix();
      worst = std::max(worst, (ig.attributions - expected).cwiseAbs().maxCoeff());
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 1.0, "max abs error " + fmt("%.2e", worst) + ", " + fmt("%.3f s", secs)};
}

std::unique_ptr<backend::Model> reference_lm(const std::optional<fs::path>& run, std::string& origin) {
  if (run && fs::exists(*run / "finetune/fft/config.json")) {
    origin = "trained generator";
    return backend::load_checkpoint(*run / "finetune/fft").model;
  }
  origin = "initialized model";
  backend::ModelConfig c;
  c.vocab = 400;
  c.seed = 17;
  c.init_std = 0.2;
  return backend::make_model(c, "reference");
}

// 3. Completeness: per column |sum IG - delta| <= 1% of |delta| at 128 steps.
Outcome completeness(const std::optional<fs::path>& run) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string origin;
  const auto model = reference_lm(run, origin);
  const auto& cfg = model->config();
  Rng rng(11);
  double worst = 0.0;
  int checked = 0;
  for (int i = 0; i < 50; ++i) {
    const int T = 6 + static_cast<int>(rng.below(25));
    std::vector<int> ids(static_cast<std::size_t>(T));
    for (auto& id : ids) id = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab - 1)));
    const int prompt = 1 + static_cast<int>(rng.below(3));
    const int row = prompt - 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T - prompt)));
    const auto ig = xai::integrated_gradients(*model, ids, xai::BaselineSpec::zero_prefix(prompt),
                                              xai::log_prob_target(row, ids[static_cast<std::size_t>(row + 1)]), 128);
    worst = std::max(worst, ig.completeness_gap() / std::abs(ig.delta()));
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {worst <= 0.01 && secs < 120.0, std::to_string(checked) + " inputs on the " + origin +
                                             ", worst relative gap " + fmt("%.2e", worst) + ", " +
                                             fmt("%.1f s", secs)};
}

// 4. Embedding gradients against central differences, h = 1e-3.
Outcome gradients(const std::optional<fs::path>& run) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(5);
  double worst = 0.0;
  auto check = [&](const backend::Model& model, const std::vector<int>& ids, const backend::LogitTarget& target) {
    const Matrix e = model.token_embeddings(ids);
    Matrix grad;
    model.target_value(e, target, &grad);
    std::vector<double> analytic, numeric;
    for (int k = 0; k < 60; ++k) {
      const auto idx = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(e.size())));
      Matrix plus = e, minus = e;
      plus.data()[idx] += 1e-3;
      minus.data()[idx] -= 1e-3;
      numeric.push_back((model.target_value(plus, target, nullptr) - model.target_value(minus, target, nullptr)) / 2e-3);
      analytic.push_back(grad.data()[idx]);
    }
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      norm += numeric[i] * numeric[i];
    }
    worst = std::max(worst, std::sqrt(diff) / std::sqrt(norm));
  };
  std::string origin;
  const auto lm = reference_lm(run, origin);
  backend::ModelConfig cc;
  cc.kind = backend::ModelKind::kClassifier;
  cc.vocab = 400;
  cc.seed = 23;
  cc.init_std = 0.2;
  const auto cls = backend::make_model(cc, "reference");
  for (int i = 0; i < 6; ++i) {
    const int T = 4 + static_cast<int>(rng.below(12));
    for (const auto* model : {lm.get(), cls.get()}) {
      std::vector<int> ids(static_cast<std::size_t>(T));
      const auto vocab = static_cast<std::uint64_t>(model->config().vocab - 1);
      for (auto& id : ids) id = 1 + static_cast<int>(rng.below(vocab));
      check(*model, ids, model == lm.get() ? xai::log_prob_target(T - 2, ids.back()) : xai::class_logit_target(i % 5));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-3 && secs < 60.0,
          "worst relative error " + fmt("%.2e", worst) + " (causal " + origin + " and classifier), " +
              fmt("%.1f s", secs)};
}

double total_wall(const fs::path& run) {
  double total = 0.0;
  for (const auto& e : fs::recursive_directory_iterator(run)) {
    if (e.path().filename() == "run_manifest.json") total += io::read_json(e.path()).value("wall_seconds", 0.0);
  }
  return total;
}

// 5. Desk-scale end to end.
std::vector<Outcome> end_to_end(const fs::path& run) {
  const auto real = io::read_json(run / "evaluate/real/agreement.json");
  const auto fft = io::read_json(run / "evaluate/fft/agreement.json");
  const auto lora = io::read_json(run / "evaluate/lora/agreement.json");
  const auto filtered = io::read_json(run / "evaluate/fft/filtered_report.json");
  const auto fixture = io::read_json(run / "fixture/run_manifest.json");
  const int per_author = fixture["config"].value("sentences_per_author", 0);
  const double wall = total_wall(run);
  const std::string scale = "fixture " + std::to_string(per_author) + "/author, pipeline " + fmt("%.0f s", wall);

  std::vector<Outcome> out;
  const double acc = real.at("agreement_rate");
  out.push_back({acc >= 0.40 && per_author >= 2000, "detector test accuracy " + fmt("%.3f", acc) + ", " + scale});
  const double a = fft.at("agreement_rate");
  const double p = fft.at("binomial_p_value");
  out.push_back({a > 0.20 && p < 0.01, "FFT agreement " + fmt("%.3f", a) + " over " +
                                           std::to_string(fft.at("total").get<int>()) + ", p " + fmt("%.2e", p)});
  const double b = lora.at("agreement_rate");
  out.push_back({a >= b, "FFT " + fmt("%.3f", a) + " vs LoRA " + fmt("%.3f", b)});
  const bool defined = filtered.value("averages_defined", false);
  const double conf = defined ? filtered.at("avg_confidence").get<double>() : 0.0;
  const bool has_fraction = filtered.contains("retained_fraction");
  out.push_back({defined && conf > 0.93 && has_fraction && wall <= 7200.0,
                 defined ? "avg_confidence " + fmt("%.4f", conf) + ", retained_fraction " +
                               fmt("%.3f", filtered.at("retained_fraction").get<double>())
                         : "no prediction above the threshold"});
  return out;
}

// 6. Attention enrichment on the trained generator.
Outcome attention_trend(const fs::path& run) {
  const auto e = io::read_json(run / "explain/ae/fft/enrichment.json");
  const int n = e.at("generations");
  const int above = e.at("above_one");
  const double frac = e.at("fraction_above_one");
  return {n >= 100 && frac >= 0.70, std::to_string(above) + "/" + std::to_string(n) +
                                        " generations with max layer enrichment > 1"};
}

// Independent traversals for the syntactic oracles.
std::string plain_label(const std::string& label) {
  if (label.empty() || label[0] == '-') return label;
  std::size_t cut = 0;
  while (cut < label.size() && label[cut] != '-' && label[cut] != '=') ++cut;
  return label.substr(0, cut);
}

int brute_longest(const synfeat::ParseTree& root) {
  int best = 0;
  std::vector<std::pair<const synfeat::ParseTree*, int>> stack = {{&root, 0}};
  while (!stack.empty()) {
    auto [node, depth] = stack.back();
    stack.pop_back();
    if (node->children.empty()) best = std::max(best, depth);
    for (const auto& c : node->children) stack.push_back({&c, depth + 1});
  }
  return best;
}

double brute_pp(const synfeat::ParseTree& root) {
  int phrasal = 0, pp = 0;
  std::vector<const synfeat::ParseTree*> stack = {&root};
  while (!stack.empty()) {
    const auto* node = stack.back();
    stack.pop_back();
    bool has_nonterminal_child = false;
    for (const auto& c : node->children) {
      if (!c.children.empty()) has_nonterminal_child = true;
      stack.push_back(&c);
    }
    if (has_nonterminal_child) {
      ++phrasal;
      if (plain_label(node->label) == "PP") ++pp;
    }
  }
  return phrasal == 0 ? 0.0 : 100.0 * pp / phrasal;
}

synfeat::ParseTree random_tree(Rng& rng, int depth) {
  static const std::vector<std::string> labels = {"S", "NP", "VP", "PP", "PP-LOC", "NP-SBJ", "SBAR", "ADJP", "PP=2"};
  static const std::vector<std::string> tags = {"DT", "NN", "IN", "VB", "JJ", "-NONE-"};
  if (depth == 0 || rng.uniform() < 0.25) {
    return synfeat::ParseTree::node(tags[rng.below(tags.size())], {synfeat::ParseTree::terminal("w")});
  }
  std::vector<synfeat::ParseTree> kids;
  const int n = 1 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n; ++i) kids.push_back(random_tree(rng, depth - 1));
  return synfeat::ParseTree::node(labels[rng.below(labels.size())], std::move(kids));
}

// 7. Syntactic oracles.
Outcome syntactic(const fs::path& run) {
  Rng rng(29);
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const auto tree = i % 2 == 0 ? fixture::sample_tree(i % 5, rng) : random_tree(rng, 6);
    if (synfeat::longest_path(tree) != brute_longest(tree)) ++mismatches;
    if (std::abs(synfeat::pp_percentage(tree) - brute_pp(tree)) > 1e-12) ++mismatches;
  }

  // Every emitted histogram against the feature rows it was built from.
  std::map<std::string, std::int64_t> present;
  for (const auto& row : io::read_jsonl(run / "synfeat/features.jsonl")) {
    const std::string pop = row.at("population");
    const std::string method = row.at("method").is_null() ? "" : row.at("method").get<std::string>();
    for (const auto& [name, v] : row.at("features").items()) {
      if (v.is_null()) continue;
      for (const std::string& author : {row.at("author").get<std::string>(), std::string("all")}) {
        ++present[pop + "|" + method + "|" + author + "|" + name];
      }
    }
  }
  int histograms = 0, broken = 0;
  const json hist = io::read_json(run / "synfeat/histograms.json");
  for (const auto& h : hist.at("histograms")) {
    const std::string method = h.at("method"), author = h.at("author"), feature = h.at("feature");
    for (const char* pop : {"real", "generated"}) {
      std::int64_t sum = 0;
      for (const auto& c : h.at(pop).at("counts")) sum += c.get<std::int64_t>();
      const std::string key =
          std::string(pop) + "|" + (std::string(pop) == "real" ? "" : method) + "|" + author + "|" + feature;
      if (sum != h.at(pop).at("total").get<std::int64_t>() || sum != present[key]) ++broken;
      ++histograms;
    }
  }

  std::vector<std::int64_t> p = {3, 0, 7, 1, 9}, q = {0, 4, 0, 0, 0}, r = {0, 0, 0, 2, 0};
  double jsd_err = std::abs(synfeat::jensen_shannon(p, p));
  jsd_err = std::max(jsd_err, std::abs(synfeat::jensen_shannon({0, 5, 0}, {2, 0, 9}) - std::log(2.0)));
  jsd_err = std::max(jsd_err, std::abs(synfeat::jensen_shannon(q, r) - std::log(2.0)));
  return {mismatches == 0 && broken == 0 && histograms > 0 && jsd_err <= 1e-9,
          "100 trees, " + std::to_string(mismatches) + " traversal mismatches; " + std::to_string(histograms) +
              " histograms, " + std::to_string(broken) + " not conserved; JSD error " + fmt("%.1e", jsd_err)};
}

detector::Prediction pred(double conf, int predicted, int expected) {
  detector::Prediction p;
  p.probs.assign(5, (1.0 - conf) / 4.0);
  p.probs[static_cast<std::size_t>(predicted)] = conf;
  p.predicted = predicted;
  p.confidence = conf;
  p.expected = expected;
  return p;
}

// 8. Filter semantics.
Outcome filter_semantics() {
  const std::vector<detector::Prediction> preds = {pred(0.99, 0, 0), pred(0.97, 1, 1), pred(0.95, 2, 0),
                                                   pred(0.94, 3, 3), pred(0.93, 4, 4), pred(0.90, 0, 0),
                                                   pred(0.85, 1, 2), pred(0.70, 2, 2), pred(0.96, 4, 3),
                                                   pred(0.60, 3, 3)};
  const auto r = detector::confidence_filter(preds, 0.93, 5);
  const bool fixture_ok = r.retained == 5 && r.total == 10 && std::abs(*r.avg_accuracy - 0.6) < 1e-12 &&
                          std::abs(*r.avg_confidence - 0.962) < 1e-12 &&
                          std::abs(*detector::confidence_filter(preds, 0.5, 5).avg_accuracy - 0.7) < 1e-12;

  Rng rng(31);
  std::vector<detector::Prediction> many;
  for (int i = 0; i < 500; ++i) {
    many.push_back(pred(0.2 + 0.8 * rng.uniform(), static_cast<int>(rng.below(5)), static_cast<int>(rng.below(5))));
  }
  bool monotone = true;
  std::int64_t last = std::numeric_limits<std::int64_t>::max();
  for (int i = 0; i < 100; ++i) {
    const double t = i / 100.0;
    const auto f = detector::confidence_filter(many, t, 5);
    if (f.retained > last || (f.avg_confidence && !(*f.avg_confidence > t))) monotone = false;
    last = f.retained;
  }
  return {fixture_ok && monotone, std::string("fixture ") + (fixture_ok ? "matches" : "differs") +
                                      " (retained 5/10, accuracy 0.6); 100-threshold sweep " +
                                      (monotone ? "monotone" : "NOT monotone")};
}

// 9. Post-processing.
Outcome postprocessing() {
  const auto scheme = corpus::TagScheme::default_scheme();
  const auto a = generation::postprocess("<0> I left. <end> <end> the the the", scheme);
  const auto b = generation::postprocess("<1> She walked and walked and", scheme);
  const auto c = generation::postprocess("<2> He ran ran ran ran home.", scheme);
  const bool examples = a.sentence == std::optional<std::string>("I left.") && !b.accepted() &&
                        b.rejection == "incomplete" && c.sentence == std::optional<std::string>("He ran home.");

  Rng rng(37);
  const std::vector<std::string> words = {"the", "the", "a", "ran", "home", ",", "said", "he", ".", "!", "?",
                                          "<end>", "and", "so", "so", "she", "it"};
  int accepted = 0, unstable = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string s = "<" + std::to_string(rng.below(5)) + ">";
    const int n = 1 + static_cast<int>(rng.below(14));
    for (int k = 0; k < n; ++k) s += " " + words[rng.below(words.size())];
    const auto once = generation::postprocess(s, scheme);
    if (!once.accepted()) continue;
    ++accepted;
    const auto twice = generation::postprocess_text(*once.sentence, scheme);
    if (twice.sentence != once.sentence) ++unstable;
  }
  return {examples && unstable == 0 && accepted > 0,
          std::string("examples ") + (examples ? "match" : "differ") + "; " + std::to_string(accepted) +
              " of 1000 random outputs accepted, " + std::to_string(unstable) + " changed on a second pass"};
}

}  // namespace

int main(int argc, char** argv) {
  std::optional<fs::path> run;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--run" && i + 1 < argc) {
      run = fs::path(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--run DIR]\n";
      return 2;
    }
  }

  int failures = 0;
  auto report = [&](const std::string& id, const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << name << ": " << o.detail << std::endl;
    if (!o.pass) ++failures;
  };
  auto guarded = [&](const std::string& id, const std::string& name, const std::function<Outcome()>& fn) {
    try {
      report(id, name, fn());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("error: ") + e.what()});
    }
  };

  guarded("1", "enrichment calibration", enrichment_calibration);
  guarded("2", "integrated gradients exact for a linear target", linear_ig);

  if (!run || !fs::exists(*run / "summary/pipeline.json")) {
    const fs::path dir = run.value_or(fs::temp_directory_path() / "styleforge_acceptance_run");
    std::cout << "running the default pipeline into " << dir << std::endl;
    try {
      cli::run_pipeline(cli::Context{}, dir);
      run = dir;
    } catch (const std::exception& e) {
      std::cout << "pipeline failed: " << e.what() << std::endl;
      run.reset();
    }
  }

  guarded("3", "integrated gradients completeness", [&] { return completeness(run); });
  guarded("4", "embedding gradients match finite differences", [&] { return gradients(run); });
  if (run) {
    const char* names[] = {"5a detector accuracy above chance", "5b FFT seed-tag agreement",
                           "5c FFT agreement >= LoRA agreement", "5d confidence filter"};
    try {
      const auto parts = end_to_end(*run);
      for (std::size_t i = 0; i < parts.size(); ++i) {
        const std::string label = names[i];
        report(label.substr(0, 2), label.substr(3), parts[i]);
      }
    } catch (const std::exception& e) {
      report("5", "desk-scale end to end", {false, std::string("error: ") + e.what()});
    }
    guarded("6", "attention enrichment above one", [&] { return attention_trend(*run); });
    guarded("7", "syntactic oracles", [&] { return syntactic(*run); });
  } else {
    report("5", "desk-scale end to end", {false, "no pipeline run"});
    report("6", "attention enrichment above one", {false, "no pipeline run"});
    report("7", "syntactic oracles", {false, "no pipeline run"});
  }
  guarded("8", "confidence filter semantics", filter_semantics);
  guarded("9", "post-processing", postprocessing);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion line(s) failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
