// SPDX-License-Identifier: Apache-2.0
//
// csa: corpus generation, feature extraction, training, evaluation and model
// introspection from the command line.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csa/audio.hpp"
#include "csa/checkpoint.hpp"
#include "csa/config.hpp"
#include "csa/dataset.hpp"
#include "csa/error.hpp"
#include "csa/gradcheck.hpp"
#include "csa/metrics.hpp"
#include "csa/model.hpp"
#include "csa/objective.hpp"
#include "csa/ops.hpp"
#include "csa/param_count.hpp"
#include "csa/train.hpp"

namespace fs = std::filesystem;
using namespace csa;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::string reference_config;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::optional<std::size_t> blocks;
  std::optional<double> lambda2;
  std::vector<std::string> assignments;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "key=value configuration file");
    app->add_option("--arch", reference_config, "start from a named published architecture (see param-count --reference)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--variant", variant, "CSA attention variant, or PlainCNN / ResCNN");
    app->add_option("--blocks", blocks, "number of feature blocks (1..4)");
    app->add_option("--lambda2", lambda2, "orthogonality regularization weight");
    app->add_option("--set", assignments, "extra key=value overrides")->take_all();
  }

  ModelConfig resolve() const {
    ModelConfig c;
    if (!reference_config.empty()) {
      const auto named = find_reference_config(reference_config);
      if (!named) throw Error(ErrorKind::Config, "unknown named configuration '" + reference_config + "'");
      c = named->config;
    }
    if (!config_path.empty()) c = load_config(config_path);
    if (!variant.empty()) {
      bool block_name = true;
      try {
        c.block_type = parse_block_type(variant);
      } catch (const Error&) {
        block_name = false;
      }
      if (!block_name) {
        c.block_type = BlockType::CSA;
        c.attention.kind = parse_attention_kind(variant);
      }
    }
    if (seed) c.seed = *seed;
    if (blocks) c.num_blocks = *blocks;
    if (lambda2) c.lambda2 = *lambda2;
    for (const auto& a : assignments) {
      const auto eq = a.find('=');
      if (eq == std::string::npos) throw Error(ErrorKind::Config, "--set expects key=value, got '" + a + "'");
      set_config_value(c, a.substr(0, eq), a.substr(eq + 1));
    }
    return c;
  }
};

FeatureOptions feature_options(const ModelConfig& c) { return {c.standardize_input, c.allow_resample}; }

void print_report(const MetricsReport& r, const std::vector<std::string>& classes) {
  std::cout << report_to_json(r, classes) << "\n";
  if (r.micro) {
    for (const auto& w : r.micro->warnings) std::cerr << "warning: " << w << "\n";
  }
}

std::vector<std::size_t> read_label_file(const std::string& path, const std::vector<std::string>& classes) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::vector<std::size_t> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto it = std::find(classes.begin(), classes.end(), line);
    if (it != classes.end()) {
      out.push_back(static_cast<std::size_t>(it - classes.begin()));
      continue;
    }
    try {
      std::size_t pos = 0;
      const auto v = std::stoul(line, &pos);
      if (pos == line.size()) {
        out.push_back(v);
        continue;
      }
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::Parse, path + " line " + std::to_string(line_no) + ": '" + line + "' is neither a class name nor an index");
  }
  return out;
}

std::vector<std::size_t> predict_labels(Model& model, const std::vector<Clip>& clips) {
  const auto e = evaluate(model, clips);
  std::vector<std::size_t> out;
  for (const auto& s : e.scores) out.push_back(argmax(s));
  return out;
}

void check_classes(const std::vector<std::string>& ckpt, const std::vector<std::string>& manifest, const std::string& what) {
  if (ckpt != manifest) {
    std::string a, b;
    for (const auto& s : ckpt) a += (a.empty() ? "" : ",") + s;
    for (const auto& s : manifest) b += (b.empty() ? "" : ",") + s;
    throw Error(ErrorKind::Config, what + " was trained on classes [" + a + "] but the manifest declares [" + b + "]");
  }
}

int run_gradcheck(std::uint64_t seed, const ModelConfig& base) {
  ModelConfig c = base;
  c.channels = 4;
  c.bottleneck_ratio = 2;
  c.gru_hidden = 3;
  c.num_classes = 3;
  c.num_blocks = std::min<std::size_t>(c.num_blocks, 2);
  Model model(c);
  model.init(seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::size_t n = 2, f = 8, t = 8;
  std::vector<double> x(n * f * t);
  for (auto& v : x) v = g(rng);
  const Tensor input = Tensor::from({n, 1, f, t}, x);
  std::vector<double> y(n * c.num_classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) y[i * c.num_classes + i % c.num_classes] = 1.0;
  const Tensor target = Tensor::from({n, c.num_classes}, y);
  auto collected = model.parameters();
  std::vector<Tensor> params;
  for (const auto& p : collected.params()) params.push_back(p.tensor);
  // Evaluation-mode BN: in training mode stacked BNs cancel per-channel shifts,
  // leaving coordinates whose exact gradient is zero and whose difference
  // quotient is pure rounding. The orthogonality term is checked on its own so
  // its magnitude does not swamp the rounding floor of the classifier terms.
  ObjectiveConfig objective{c.lambda1, 0.0, c.label_mode};
  auto classification = [&] {
    const auto r = model.forward(input, false);
    return total_loss(cross_entropy(r.prediction.aggregated, target, c.label_mode), l2_reg(collected.params()),
                      Tensor::scalar(0.0), objective);
  };
  auto orthogonality = [&] { return ortho_reg_maps(model.forward(input, false).attention_maps); };
  GradCheckOptions opts;
  opts.max_coordinates_per_param = 16;
  bool ok = true;
  auto report = [&](const char* term, const GradCheckResult& res) {
    const bool pass = res.max_relative_error < 1e-4;
    ok = ok && pass;
    std::printf("gradcheck %s %s blocks=%zu seed=%llu %s: max relative error %.3e over %zu coordinates (worst %s[%zu]) %s\n",
                to_string(c.block_type).c_str(), to_string(c.attention.kind).c_str(), c.num_blocks,
                static_cast<unsigned long long>(seed), term, res.max_relative_error, res.coordinates_checked,
                collected.params()[res.worst_param].name.c_str(), res.worst_coordinate, pass ? "PASS" : "FAIL");
  };
  report("ce+l2", finite_difference_check(classification, params, opts));
  if (c.block_type == BlockType::CSA) {
    std::vector<Tensor> attention_params;
    for (const auto& p : collected.params()) {
      if (p.name.find(".attention.") != std::string::npos || p.name.rfind("blocks.0.", 0) == 0) attention_params.push_back(p.tensor);
    }
    const auto res = finite_difference_check(orthogonality, attention_params, opts);
    const bool pass = res.max_relative_error < 1e-4;
    ok = ok && pass;
    std::printf("gradcheck %s %s blocks=%zu seed=%llu ortho: max relative error %.3e over %zu coordinates %s\n",
                to_string(c.block_type).c_str(), to_string(c.attention.kind).c_str(), c.num_blocks,
                static_cast<unsigned long long>(seed), res.max_relative_error, res.coordinates_checked, pass ? "PASS" : "FAIL");
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-scale attention models for acoustic event classification"};
  app.require_subcommand(1);

  // gen-toy
  auto* gen = app.add_subcommand("gen-toy", "write the synthetic 4-archetype corpus and its manifest");
  ToySpec toy;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", toy.num_classes, "number of classes")->capture_default_str();
  gen->add_option("--clips", toy.clips_per_class, "clips per class")->capture_default_str();
  gen->add_option("--duration", toy.duration_s, "clip duration in seconds")->capture_default_str();
  gen->add_option("--seed", toy.seed, "corpus seed")->capture_default_str();

  // extract-features
  auto* extract = app.add_subcommand("extract-features", "cache log mel spectrograms and write a feature manifest");
  std::string ex_manifest, ex_out;
  bool ex_resample = false;
  extract->add_option("--manifest", ex_manifest, "input manifest")->required();
  extract->add_option("--out", ex_out, "output directory")->required();
  extract->add_flag("--allow-resample", ex_resample, "resample non-16 kHz audio instead of rejecting it");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model and keep the best-validation checkpoint");
  ConfigFlags train_flags;
  train_flags.add_to(train_cmd);
  std::string tr_manifest, tr_out;
  std::optional<std::size_t> tr_epochs;
  std::optional<double> tr_stop;
  bool tr_quiet = false;
  train_cmd->add_option("--manifest", tr_manifest, "training manifest")->required();
  train_cmd->add_option("--out", tr_out, "output directory")->required();
  train_cmd->add_option("--epochs", tr_epochs, "maximum epochs");
  train_cmd->add_option("--stop-at-train-acc", tr_stop, "stop once training accuracy reaches this value");
  train_cmd->add_flag("--quiet", tr_quiet, "do not echo epoch records to stdout");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string ev_ckpt, ev_manifest;
  std::optional<std::size_t> ev_fold;
  eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--manifest", ev_manifest, "manifest to evaluate")->required();
  eval_cmd->add_option("--fold", ev_fold, "restrict to one fold");

  // compare
  auto* compare = app.add_subcommand("compare", "corrected / degraded / kept fractions from model M1 to model M2");
  std::string cmp_m1, cmp_m2, cmp_manifest, cmp_p1, cmp_p2, cmp_truth;
  compare->add_option("--m1", cmp_m1, "baseline checkpoint");
  compare->add_option("--m2", cmp_m2, "comparison checkpoint");
  compare->add_option("--manifest", cmp_manifest, "manifest evaluated by both checkpoints");
  compare->add_option("--pred1", cmp_p1, "baseline predictions, one label per line");
  compare->add_option("--pred2", cmp_p2, "comparison predictions, one label per line");
  compare->add_option("--truth", cmp_truth, "reference labels, one per line");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full objective on a miniature model (evaluation-mode BN)");
  ConfigFlags grad_flags;
  grad_flags.add_to(grad);
  std::size_t grad_seeds = 3;
  grad->add_option("--seeds", grad_seeds, "number of seeds to check")->capture_default_str();

  // param-count
  auto* pc = app.add_subcommand("param-count", "count trainable parameters");
  ConfigFlags pc_flags;
  pc_flags.add_to(pc);
  bool pc_reference = false;
  pc->add_flag("--reference", pc_reference, "report every published architecture next to its table value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) {
      const auto m = generate_toy_dataset(toy, gen_out);
      std::printf("wrote %zu clips in %zu classes to %s\n", m.entries.size(), m.classes.size(),
                  (fs::path(gen_out) / "manifest.txt").c_str());
      return kExitOk;
    }

    if (extract->parsed()) {
      auto m = load_manifest(ex_manifest);
      FeatureOptions opts{false, ex_resample};
      const auto clips = load_clips(m, opts);
      fs::create_directories(fs::path(ex_out) / "features");
      DatasetManifest out = m;
      for (std::size_t i = 0; i < clips.size(); ++i) {
        const std::string rel = "features/" + std::to_string(i) + "_" + clips[i].id + ".msp";
        write_feature_cache((fs::path(ex_out) / rel).string(), clips[i].features);
        out.entries[i].path = rel;
      }
      write_manifest((fs::path(ex_out) / "manifest.txt").string(), out);
      std::printf("cached %zu feature files in %s\n", clips.size(), ex_out.c_str());
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      ModelConfig cfg = train_flags.resolve();
      const auto manifest = load_manifest(tr_manifest);
      cfg.num_classes = manifest.classes.size();
      cfg.label_mode = manifest.label_mode;
      if (tr_epochs) cfg.max_epochs = *tr_epochs;
      validate(cfg);
      const auto clips = load_clips(manifest, feature_options(cfg));
      fs::create_directories(tr_out);
      {
        std::ofstream cf(fs::path(tr_out) / "config.txt");
        cf << serialize(cfg);
      }
      Model model(cfg);
      model.init(cfg.seed);
      TrainOptions opts;
      opts.out_dir = tr_out;
      opts.log = tr_quiet ? nullptr : &std::cout;
      opts.stop_train_accuracy = tr_stop;
      const auto result = train(model, clips, manifest.classes, opts);
      std::cerr << "best epoch " << result.best_epoch << " score " << result.best_score << "; checkpoint "
                << result.best_checkpoint << "\n";
      if (!result.split.test.empty()) {
        auto best = model_from_checkpoint(load_checkpoint(result.best_checkpoint));
        const auto test = evaluate(*best, clips, result.split.test);
        std::cout << "{\"split\":\"test\",\"fold\":" << result.split.test_fold
                  << ",\"score\":" << selection_score(test.report) << "}\n";
      }
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      const auto ckpt = load_checkpoint(ev_ckpt);
      auto manifest = load_manifest(ev_manifest);
      check_classes(ckpt.classes, manifest.classes, ev_ckpt);
      if (manifest.label_mode != ckpt.config.label_mode) {
        throw Error(ErrorKind::Config, "manifest label mode " + to_string(manifest.label_mode) + " differs from the checkpoint's " +
                                           to_string(ckpt.config.label_mode));
      }
      if (ev_fold) {
        std::erase_if(manifest.entries, [&](const ManifestEntry& e) { return e.fold != *ev_fold; });
        if (manifest.entries.empty()) throw Error(ErrorKind::Data, "fold " + std::to_string(*ev_fold) + " has no clips");
      }
      auto model = model_from_checkpoint(ckpt);
      const auto clips = load_clips(manifest, feature_options(ckpt.config));
      print_report(evaluate(*model, clips).report, manifest.classes);
      return kExitOk;
    }

    if (compare->parsed()) {
      std::vector<std::size_t> p1, p2, truth;
      if (!cmp_p1.empty() || !cmp_p2.empty() || !cmp_truth.empty()) {
        if (cmp_p1.empty() || cmp_p2.empty() || cmp_truth.empty()) {
          throw Error(ErrorKind::Config, "prediction-file mode needs --pred1, --pred2 and --truth");
        }
        std::vector<std::string> classes;
        if (!cmp_manifest.empty()) classes = load_manifest(cmp_manifest).classes;
        p1 = read_label_file(cmp_p1, classes);
        p2 = read_label_file(cmp_p2, classes);
        truth = read_label_file(cmp_truth, classes);
      } else {
        if (cmp_m1.empty() || cmp_m2.empty() || cmp_manifest.empty()) {
          throw Error(ErrorKind::Config, "compare needs --m1, --m2 and --manifest (or --pred1, --pred2 and --truth)");
        }
        const auto manifest = load_manifest(cmp_manifest);
        if (manifest.label_mode != LabelMode::OneHot) throw Error(ErrorKind::Config, "compare needs a single-label manifest");
        const auto c1 = load_checkpoint(cmp_m1), c2 = load_checkpoint(cmp_m2);
        check_classes(c1.classes, manifest.classes, cmp_m1);
        check_classes(c2.classes, manifest.classes, cmp_m2);
        const auto clips = load_clips(manifest, feature_options(c1.config));
        auto m1 = model_from_checkpoint(c1);
        p1 = predict_labels(*m1, clips);
        if (c2.config.standardize_input != c1.config.standardize_input) {
          throw Error(ErrorKind::Config, "checkpoints disagree on input standardization");
        }
        auto m2 = model_from_checkpoint(c2);
        p2 = predict_labels(*m2, clips);
        for (const auto& c : clips) truth.push_back(c.labels.at(0));
      }
      const auto r = corrected_degraded_kept(p1, p2, truth);
      std::printf("{\"clips\":%zu,\"corrected\":%.17g,\"degraded\":%.17g,\"kept\":%.17g,"
                  "\"accuracy_m1\":%.17g,\"accuracy_m2\":%.17g}\n",
                  r.total, r.corrected, r.degraded, r.kept, accuracy(truth, p1), accuracy(truth, p2));
      return kExitOk;
    }

    if (grad->parsed()) {
      const ModelConfig cfg = grad_flags.resolve();
      int status = kExitOk;
      for (std::size_t s = 0; s < grad_seeds; ++s) {
        if (run_gradcheck(cfg.seed + s, cfg) != kExitOk) status = kExitFailure;
      }
      return status;
    }

    if (pc->parsed()) {
      if (pc_reference) {
        const auto rows = reference_table_comparison();
        std::printf("%-20s %12s %10s %10s %s\n", "config", "count", "table(M)", "deviation", "within 20%");
        for (const auto& r : rows) {
          std::printf("%-20s %12zu %10.3f %+9.1f%% %s\n", r.name.c_str(), r.count, r.table_millions,
                      100.0 * r.relative_deviation, r.within_tolerance ? "yes" : "no");
        }
        std::printf("variant ordering matches table: %s\n", variant_ordering_matches(rows) ? "yes" : "no");
        return kExitOk;
      }
      const ModelConfig cfg = pc_flags.resolve();
      const auto b = param_count(cfg);
      for (const auto& [name, count] : b.modules) std::printf("%-28s %12zu\n", name.c_str(), count);
      std::printf("%-28s %12zu\n", "attention (all blocks)", b.attention);
      std::printf("%-28s %12zu\n", "total", b.total);
      if (!pc_flags.reference_config.empty()) {
        const auto named = find_reference_config(pc_flags.reference_config);
        if (named && named->config == cfg) {
          std::printf("%-28s %12.3f M (deviation %+.1f%%)\n", "table", named->table_millions,
                      100.0 * (static_cast<double>(b.total) - named->table_millions * 1e6) / (named->table_millions * 1e6));
        }
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
