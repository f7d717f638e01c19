// Command-line surface for the calcium-scoring engine: batch scoring, cohort
// evaluation, phantom generation, toy training and gradient verification.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cacs/config.hpp"
#include "cacs/gradcheck.hpp"
#include "cacs/metrics.hpp"
#include "cacs/nn.hpp"
#include "cacs/optim.hpp"
#include "cacs/phantom.hpp"
#include "cacs/preprocess.hpp"
#include "cacs/scoring.hpp"
#include "cacs/volume.hpp"

namespace fs = std::filesystem;
using namespace cacs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + out_path + " for writing");
  out << text;
}

void add_scoring_flags(CLI::App* cmd, Config& config, bool& no_size_filter,
                       std::string& connectivity) {
  cmd->add_option("--prob-threshold", config.prob_threshold,
                  "probability cutoff for foreground (default 0.5)");
  cmd->add_option("--hu-threshold", config.hu_threshold,
                  "HU cutoff for calcium candidates (default 130)");
  cmd->add_option("--min-lesion-mm2", config.min_lesion_mm2,
                  "minimum per-slice lesion area in mm^2 (default 1.0)");
  cmd->add_flag("--no-size-filter", no_size_filter, "disable the minimum-size filter");
  cmd->add_option("--connectivity", connectivity, "26 (3-D) or 8-2d (per slice)")
      ->check(CLI::IsMember({"26", "8-2d"}));
}

void apply_scoring_flags(Config& config, bool no_size_filter, const std::string& connectivity) {
  if (no_size_filter) config.min_lesion_mm2 = 0.0;
  config.connectivity = connectivity == "8-2d" ? Connectivity::c8_2d : Connectivity::c26;
}

int cmd_score(const std::string& volume_path, const std::string& input_path,
              const Config& config, const std::string& format, const std::string& out_path) {
  const CtVolume vol = read_volume(volume_path);
  const ProbVolume probs = read_prob_or_mask(input_path);
  const AgatstonResult result = score_pipeline(probs, vol, config.scoring_options());
  emit(format == "kv" ? format_score_kv(result) : format_score_report(result), out_path);
  return kExitOk;
}

struct ManifestEntry {
  std::string volume, gt_mask, probs;
  RiskCategory truth;
};

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry entry;
    std::string risk;
    if (!std::getline(ls, entry.volume, '\t') || !std::getline(ls, entry.gt_mask, '\t') ||
        !std::getline(ls, entry.probs, '\t') || !std::getline(ls, risk)) {
      throw ValidationError(path + ": manifest lines are volume<TAB>gt_mask<TAB>probs<TAB>risk");
    }
    entry.truth = parse_risk(risk);
    entries.push_back(std::move(entry));
  }
  if (entries.empty()) throw ValidationError(path + ": manifest is empty");
  return entries;
}

int cmd_eval(const std::string& manifest_path, const Config& config,
             const std::string& out_path) {
  const auto entries = read_manifest(manifest_path);

  ScoringOptions raw = config.scoring_options();
  raw.min_lesion_mm2 = 0.0;
  const ScoringOptions filtered = config.scoring_options();

  std::ostringstream report;
  report << "id,f1,true_risk,pred_risk_raw,pred_risk_filtered\n";
  std::vector<PatientRiskOutcome> outcomes;
  double f1_sum = 0.0;
  for (size_t i = 0; i < entries.size(); ++i) {
    const ManifestEntry& entry = entries[i];
    const CtVolume vol = read_volume(entry.volume);
    const MaskVolume gt = read_mask(entry.gt_mask, MaskRole::ground_truth);
    const ProbVolume probs = read_prob_or_mask(entry.probs);
    if (!vol.same_shape(gt) || !vol.same_shape(probs)) {
      throw ValidationError(entry.volume + ": volume/mask/probability shapes differ");
    }

    const F1Result f1 = f1_score(binarize(probs, config.prob_threshold), gt);
    f1_sum += f1.f1;

    PatientRiskOutcome outcome;
    outcome.id = std::to_string(i + 1);
    outcome.truth = entry.truth;
    outcome.raw = score_pipeline(probs, vol, raw).risk;
    outcome.filtered = score_pipeline(probs, vol, filtered).risk;
    outcomes.push_back(outcome);

    char f1_text[32];
    std::snprintf(f1_text, sizeof(f1_text), "%.4f", f1.f1);
    report << outcome.id << "," << f1_text << "," << risk_name(outcome.truth) << ","
           << risk_name(outcome.raw) << "," << risk_name(outcome.filtered) << "\n";
  }
  report << "cac_rate," << format_rate(cac_rate(outcomes, false)) << "\n";
  report << "cac_filter_rate," << format_rate(cac_rate(outcomes, true)) << "\n";
  char mean_text[32];
  std::snprintf(mean_text, sizeof(mean_text), "%.4f",
                f1_sum / static_cast<double>(entries.size()));
  report << "mean_f1," << mean_text << "\n";
  emit(report.str(), out_path);
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int n_seeds, double rtol, double atol) {
  const auto results = run_gradient_suite(seed, n_seeds, rtol, atol);
  bool all_pass = true;
  for (const GradCheckResult& r : results) {
    std::printf("%-18s seeds=%-3d elements=%-6ld max_err=%.3e violation=%.3e %s\n",
                r.block.c_str(), r.n_seeds, r.n_elements, r.max_abs_err, r.max_violation,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? kExitOk : kExitNumeric;
}

int cmd_phantom(const std::string& out_dir, int n, std::uint64_t seed, bool write_manifest,
                const PhantomRanges& ranges, const Config& config) {
  fs::create_directories(out_dir);
  const auto phantoms = make_training_set(n, ranges, seed);
  std::ostringstream manifest;
  for (size_t i = 0; i < phantoms.size(); ++i) {
    const fs::path vol_path = fs::path(out_dir) / ("phantom_" + std::to_string(i) + ".cacvol");
    const fs::path mask_path = fs::path(out_dir) / ("phantom_" + std::to_string(i) + ".cacmask");
    const fs::path score_path = fs::path(out_dir) / ("phantom_" + std::to_string(i) + ".score");
    write_volume(phantoms[i].volume, vol_path);
    write_mask(phantoms[i].mask, mask_path);
    const AgatstonResult& expected =
        config.min_lesion_mm2 > 0.0 ? phantoms[i].expected_filtered : phantoms[i].expected_raw;
    emit(format_score_kv(expected), score_path.string());
    manifest << vol_path.string() << "\t" << mask_path.string() << "\t" << mask_path.string()
             << "\t" << risk_name(expected.risk) << "\n";
  }
  if (write_manifest) {
    emit(manifest.str(), (fs::path(out_dir) / "manifest.tsv").string());
  }
  std::cout << "wrote " << phantoms.size() << " phantoms to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train_toy(const std::string& out_dir, int n_phantoms, Eigen::Index side, int epochs,
                  std::int64_t max_iterations, const Config& config) {
  fs::create_directories(out_dir);
  PhantomRanges ranges;
  ranges.min_slices = 6;
  ranges.max_slices = 9;
  ranges.min_side = side;
  ranges.max_side = side;
  ranges.min_lesions = 1;
  ranges.max_lesions = 3;
  ranges.min_radius = 1.0;
  ranges.max_radius = 3.0;
  ranges.min_hu = 200;
  ranges.max_hu = 900;
  const auto phantoms = make_training_set(n_phantoms, ranges, config.seed);

  std::vector<SliceStack> dataset;
  for (const GeneratedPhantom& phantom : phantoms) {
    for (Eigen::Index s = 0; s < phantom.volume.n_slices(); ++s) {
      dataset.push_back(make_stack(phantom.volume, phantom.mask, s, std::nullopt, side));
    }
  }

  std::mt19937_64 rng(config.seed + 1);
  nn::DenseRauNet net = nn::make_denseraunet(nn::NetConfig{}, rng);

  optim::TrainToyOptions options;
  options.loss_params = config.bootstrap;
  options.epochs = epochs;
  options.max_iterations = max_iterations;
  options.lr0 = config.lr0;
  options.momentum = config.momentum;
  options.seed = config.seed + 2;
  const auto curve = optim::train_toy(net, dataset, options);

  emit(optim::loss_curve_csv(curve), (fs::path(out_dir) / "loss.csv").string());
  nn::save_checkpoint(net, fs::path(out_dir) / "model.ckpt");
  if (!curve.empty()) {
    std::printf("iterations=%zu initial_total=%.4f final_total=%.4f\n", curve.size(),
                curve.front().total, curve.back().total);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coronary calcium scoring engine"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  Config config;
  bool show_config = false;
  app.add_flag("--show-config", show_config, "print the operating defaults and exit");
  app.add_option("--seed", config.seed, "seed for every stochastic choice");

  // score
  std::string volume_path, input_path, out_path, format = "text", connectivity = "26";
  bool no_size_filter = false;
  CLI::App* score = app.add_subcommand("score", "Agatston score for one volume");
  score->add_option("volume", volume_path, "CT volume (.cacvol)")->required();
  score->add_option("probs", input_path, "probability volume (float32) or mask (uint8)")
      ->required();
  add_scoring_flags(score, config, no_size_filter, connectivity);
  score->add_option("--format", format, "text or kv")->check(CLI::IsMember({"text", "kv"}));
  score->add_option("--out", out_path, "write the report here instead of stdout");

  // eval
  std::string manifest_path;
  CLI::App* eval = app.add_subcommand("eval", "cohort evaluation from a manifest");
  eval->add_option("manifest", manifest_path,
                   "per-patient lines: volume<TAB>gt_mask<TAB>probs<TAB>risk")
      ->required();
  add_scoring_flags(eval, config, no_size_filter, connectivity);
  eval->add_option("--out", out_path, "write the report here instead of stdout");

  // gradcheck
  int gc_seeds = 20;
  double gc_rtol = 1e-4, gc_atol = 1e-6;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seeds", gc_seeds, "random fixtures per block (default 20)");
  gradcheck->add_option("--rtol", gc_rtol, "relative tolerance (default 1e-4)");
  gradcheck->add_option("--atol", gc_atol, "absolute tolerance (default 1e-6)");

  // phantom; defaults guarantee at least one above-filter lesion per volume
  std::string out_dir;
  int n_phantoms = 8;
  bool write_manifest = false;
  PhantomRanges ranges;
  ranges.min_lesions = 1;
  ranges.min_radius = 1.2;
  CLI::App* phantom = app.add_subcommand("phantom", "generate synthetic volumes with known scores");
  phantom->add_option("--out-dir", out_dir, "output directory")->required();
  phantom->add_option("--n", n_phantoms, "number of phantoms (default 8)");
  phantom->add_option("--min-lesions", ranges.min_lesions, "lesions per volume, lower bound");
  phantom->add_option("--max-lesions", ranges.max_lesions, "lesions per volume, upper bound");
  phantom->add_option("--min-radius", ranges.min_radius, "lesion radius in pixels, lower bound");
  phantom->add_option("--max-radius", ranges.max_radius, "lesion radius in pixels, upper bound");
  phantom->add_flag("--manifest", write_manifest, "also write manifest.tsv for eval");

  // train-toy
  Eigen::Index side = 32;
  int epochs = 25;
  std::int64_t max_iterations = -1;
  CLI::App* train = app.add_subcommand("train-toy", "train the network on phantoms");
  train->add_option("--out-dir", out_dir, "output directory")->required();
  train->add_option("--phantoms", n_phantoms, "number of phantoms (default 8)");
  train->add_option("--size", side, "stack side in pixels, divisible by 8 (default 32)");
  train->add_option("--epochs", epochs, "training epochs (default 25)");
  train->add_option("--max-iters", max_iterations, "stop after this many iterations");
  train->add_option("--lr0", config.lr0, "initial learning rate (default 0.001)");
  train->add_option("--momentum", config.momentum, "SGD momentum (default 0.9)");
  train->add_option("--bootstrap-t", config.bootstrap.t, "hard-negative threshold (default 0.9)");
  train->add_option("--alpha", config.bootstrap.alpha, "negative-term weight (default 8)");
  train->add_option("--beta", config.bootstrap.beta, "positive-term weight (default 1)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (show_config) {
      std::cout << config.show();
      return kExitOk;
    }
    apply_scoring_flags(config, no_size_filter, connectivity);
    if (score->parsed()) return cmd_score(volume_path, input_path, config, format, out_path);
    if (eval->parsed()) return cmd_eval(manifest_path, config, out_path);
    if (gradcheck->parsed()) return cmd_gradcheck(config.seed, gc_seeds, gc_rtol, gc_atol);
    if (phantom->parsed()) {
      return cmd_phantom(out_dir, n_phantoms, config.seed, write_manifest, ranges, config);
    }
    if (train->parsed()) {
      return cmd_train_toy(out_dir, n_phantoms, side, epochs, max_iterations, config);
    }
    std::cout << app.help();
    return kExitOk;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  }
}
