// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Binds every tolerance in code; nothing is deferred to calibration.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cacs/gradcheck.hpp"
#include "cacs/loss.hpp"
#include "cacs/metrics.hpp"
#include "cacs/nn.hpp"
#include "cacs/optim.hpp"
#include "cacs/phantom.hpp"
#include "cacs/preprocess.hpp"
#include "cacs/scoring.hpp"
#include "cacs/volume.hpp"
#include "oracles.hpp"

using namespace cacs;
namespace fs = std::filesystem;

namespace {

struct Checker {
  int failures = 0;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      ++failures;
      if (detail.size() < 400) detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

ProbVolume mask_as_probs(const MaskVolume& mask) {
  ProbVolume probs(mask.n_slices(), mask.n_rows(), mask.n_cols(), mask.spacing());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    probs.voxels()[i] = static_cast<float>(mask.voxels()[i]);
  }
  return probs;
}

// --- criterion 1: gradient suite --------------------------------------------

void criterion_gradients(Checker& c) {
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_gradient_suite(20250809, 20, 1e-4, 1e-6);
  const std::vector<std::string> required = {
      "conv3x3_d2", "conv3x3_d4",     "conv3x3_d8", "conv_transpose2x2",
      "batchnorm_train", "dense_block", "rau",      "scse",
      "edb",        "decoder_module", "bootstrap_loss", "iou_loss"};
  for (const std::string& name : required) {
    bool found = false;
    for (const GradCheckResult& r : results) {
      if (r.block != name) continue;
      found = true;
      c.require(r.n_seeds >= 20, name + " ran fewer than 20 seeds");
      c.require(r.pass, name + " violation " + std::to_string(r.max_violation));
    }
    c.require(found, name + " missing from the suite");
  }
  const double elapsed = seconds_since(start);
  c.require(elapsed < 300.0, "suite took " + std::to_string(elapsed) + "s (budget 300s)");
  c.detail += c.detail.empty() ? "" : "; ";
  c.detail += std::to_string(results.size()) + " blocks x 20 seeds in " +
              std::to_string(elapsed).substr(0, 5) + "s";
}

// --- criterion 2: pinned loss values -----------------------------------------

void criterion_loss_values(Checker& c) {
  Tensor p = Tensor::from_values({5}, std::vector<double>{0.5, 0.5, 0.05, 0.2, 0.4});
  Tensor y = Tensor::from_values({5}, std::vector<double>{1, 1, 0, 0, 0});
  const double bootstrap = bootstrap_loss(p, y, BootstrapParams{0.9, 8.0, 1.0}).value();
  c.require(std::abs(bootstrap - 3.6289) <= 1e-3,
            "bootstrap example " + std::to_string(bootstrap) + " != 3.6289 +- 1e-3");

  const Index n = 64;
  Array pv = Array::Constant(n, 0.5);
  Array gv = Array::Zero(n);
  for (Index i = 0; i < n / 2; ++i) gv[i] = 1.0;
  const double iou = iou_loss(Tensor::from_array({n}, pv), Tensor::from_array({n}, gv)).value();
  c.require(std::abs(iou - std::log(3.0)) <= 1e-6,
            "iou example " + std::to_string(iou) + " != ln 3 +- 1e-6");

  Array bits(8);
  bits << 1, 0, 1, 1, 0, 0, 1, 0;
  const double perfect =
      iou_loss(Tensor::from_array({8}, bits), Tensor::from_array({8}, bits)).value();
  c.require(std::abs(perfect) <= 1e-6, "perfect-prediction iou " + std::to_string(perfect));
}

// --- criterion 3: oracle equivalence ------------------------------------------

void criterion_oracles(Checker& c) {
  const auto phantoms = make_training_set(500, PhantomRanges{}, 314159);
  double worst = 0.0;
  for (const GeneratedPhantom& phantom : phantoms) {
    ScoringOptions raw;
    raw.min_lesion_mm2 = 0;
    const double raw_diff =
        std::abs(score_pipeline(mask_as_probs(phantom.mask), phantom.volume, raw).total -
                 phantom.expected_raw.total);
    ScoringOptions filtered;  // default 1 mm^2 filter, matching the phantom spec default
    const double filtered_diff =
        std::abs(score_pipeline(mask_as_probs(phantom.mask), phantom.volume, filtered).total -
                 phantom.expected_filtered.total);
    worst = std::max({worst, raw_diff, filtered_diff});
  }
  c.require(worst <= 1e-9,
            "pipeline vs per-pixel oracle differs by " + std::to_string(worst));

  std::mt19937_64 rng(271828);
  ScoringOptions opts;
  opts.min_lesion_mm2 = 0;
  int component_mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::uniform_real_distribution<double> density(0.1, 0.7);
    std::bernoulli_distribution bit(density(rng));
    CtVolume vol(6, 6, 6, {2.0, 1.0, 1.0});
    vol.voxels().setConstant(500);
    MaskVolume mask(6, 6, 6, vol.spacing());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.voxels()[i] = bit(rng) ? 1 : 0;

    const auto lesions = connected_components(mask, vol, opts);
    const auto expected = cacs::test::flood_fill_components(mask);
    if (lesions.size() != expected.size()) {
      ++component_mismatches;
      continue;
    }
    for (size_t k = 0; k < lesions.size(); ++k) {
      std::vector<Eigen::Index> flat;
      for (const VoxelIndex& v : lesions[k].voxels) {
        flat.push_back(mask.flat(v.slice, v.row, v.col));
      }
      std::sort(flat.begin(), flat.end());
      if (flat != expected[k]) ++component_mismatches;
    }
  }
  c.require(component_mismatches == 0,
            std::to_string(component_mismatches) + " flood-fill mismatches");
  c.detail = "500 phantoms, 500 masks, worst score diff " + std::to_string(worst);
}

// --- criterion 4: score structure ---------------------------------------------

void criterion_score_structure(Checker& c) {
  // spacing x k scales the total exactly for power-of-two k
  std::mt19937_64 rng(42);
  std::bernoulli_distribution bit(0.25);
  CtVolume vol(4, 10, 10, {1.5, 0.7, 0.7});
  vol.voxels().setConstant(-50);
  ProbVolume probs(4, 10, 10, vol.spacing());
  for (Eigen::Index i = 0; i < vol.size(); ++i) {
    if (bit(rng)) {
      vol.voxels()[i] = 350;
      probs.voxels()[i] = 1.0f;
    }
  }
  ScoringOptions opts;
  opts.min_lesion_mm2 = 0;
  const double base = score_pipeline(probs, vol, opts).total;
  c.require(base > 0.0, "structure fixture scored zero");
  for (double k : {0.5, 2.0, 4.0}) {
    CtVolume scaled = vol;
    scaled.set_spacing({k * 1.5, 0.7, 0.7});
    ProbVolume sprobs = probs;
    sprobs.set_spacing(scaled.spacing());
    const double total = score_pipeline(sprobs, scaled, opts).total;
    c.require(total == k * base, "spacing x" + std::to_string(k) + " not exactly linear");
  }

  const std::vector<std::pair<double, int>> table = {
      {130, 1}, {199, 1}, {200, 2}, {299, 2}, {300, 3}, {399, 3}, {400, 4}};
  for (const auto& [hu, weight] : table) {
    c.require(agatston_weight(hu) == weight,
              "weight(" + std::to_string(hu) + ") != " + std::to_string(weight));
  }
}

// --- criterion 5: preprocessing ------------------------------------------------

void criterion_preprocessing(Checker& c) {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution bit(0.5);
  std::uniform_real_distribution<double> hu_dist(-1000, 3000);
  for (int trial = 0; trial < 200; ++trial) {
    LabelImage label(12, 12);
    Image hu(12, 12);
    for (Eigen::Index i = 0; i < label.size(); ++i) {
      label.data()[i] = bit(rng) ? 1 : 0;
      hu.data()[i] = hu_dist(rng);
    }
    const LabelImage once = apply_hu_label_floor(label, hu);
    const LabelImage twice = apply_hu_label_floor(once, hu);
    c.require((once == twice).all(), "floor not idempotent");
    c.require((once <= label).all(), "floor created positives");
  }

  CtVolume vol(20, 16, 16, {1.0, 1.0, 1.0});
  for (Eigen::Index s = 0; s < 20; ++s) {
    for (Eigen::Index r = 0; r < 16; ++r) {
      for (Eigen::Index col = 0; col < 16; ++col) vol(s, r, col) = static_cast<std::int16_t>(s);
    }
  }
  MaskVolume labels(20, 16, 16, vol.spacing());
  const auto expect_channels = [&](Eigen::Index center, const std::array<int, 9>& slices) {
    const SliceStack stack = make_stack(vol, labels, center, std::nullopt, 16);
    c.require(stack.channels.size() == 9, "stack is not 9 channels");
    for (int k = 0; k < 9; ++k) {
      const double got = stack.channels[static_cast<size_t>(k)](3, 3);
      const double want = (static_cast<double>(slices[static_cast<size_t>(k)]) + 1000.0) / 4000.0;
      c.require(got == want, "center " + std::to_string(center) + " channel " +
                                 std::to_string(k) + " wrong slice");
    }
  };
  expect_channels(0, {0, 0, 0, 0, 0, 1, 2, 3, 4});
  expect_channels(1, {0, 0, 0, 0, 1, 2, 3, 4, 5});
  expect_channels(19, {15, 16, 17, 18, 19, 19, 19, 19, 19});
}

// --- criterion 6: optimizer -----------------------------------------------------

void criterion_optimizer(Checker& c) {
  c.require(optim::lr_at(0, 0.001) == 0.001, "lr_at(0)");
  c.require(optim::lr_at(2000, 0.001) == 0.001 * std::pow(0.99, 1.0), "lr_at(2000)");
  c.require(std::abs(optim::lr_at(2000, 0.001) - 0.00099) < 1e-18, "lr_at(2000) value");
  c.require(optim::lr_at(4000, 0.001) == 0.001 * std::pow(0.99, 2.0), "lr_at(4000)");
  c.require(std::abs(optim::lr_at(4000, 0.001) - 0.0009801) < 1e-18, "lr_at(4000) value");

  Tensor p = Tensor::zeros({1}).set_requires_grad(true);
  std::vector<Tensor> params{p};
  optim::SgdState state;
  state.lr0 = 1.0;
  state.momentum = 0.9;
  for (int step = 0; step < 2; ++step) {
    p.zero_grad();
    backward(sum(p));
    optim::sgd_step(params, state);
  }
  c.require(std::abs(p.values()[0] - (-2.9)) < 1e-12,
            "two-step momentum landed on " + std::to_string(p.values()[0]));
}

// --- criterion 7: learnability ---------------------------------------------------

std::vector<optim::IterationRecord> run_toy_training() {
  PhantomRanges ranges;
  ranges.min_slices = 6;
  ranges.max_slices = 9;
  ranges.min_side = 32;
  ranges.max_side = 32;
  ranges.min_lesions = 1;
  ranges.max_lesions = 3;
  ranges.min_radius = 1.0;
  ranges.max_radius = 3.0;
  ranges.min_hu = 200;
  ranges.max_hu = 900;
  const auto phantoms = make_training_set(8, ranges, 2024);

  std::vector<SliceStack> dataset;
  for (const GeneratedPhantom& phantom : phantoms) {
    for (Eigen::Index s = 0; s < phantom.volume.n_slices(); ++s) {
      dataset.push_back(make_stack(phantom.volume, phantom.mask, s, std::nullopt, 32));
    }
  }

  std::mt19937_64 rng(99);
  nn::DenseRauNet net = nn::make_denseraunet(nn::NetConfig{}, rng);
  optim::TrainToyOptions options;
  options.epochs = 25;
  options.max_iterations = 200;
  options.seed = 7;
  return optim::train_toy(net, dataset, options);
}

void criterion_learnability(Checker& c) {
  const auto start = std::chrono::steady_clock::now();
  const auto curve = run_toy_training();
  c.require(curve.size() == 200, "expected 200 iterations, got " + std::to_string(curve.size()));
  if (curve.size() < 20) return;

  // batch size is 1, so smooth both ends of the curve over 10 samples
  double head = 0, tail = 0;
  for (size_t i = 0; i < 10; ++i) {
    head += curve[i].total;
    tail += curve[curve.size() - 10 + i].total;
  }
  head /= 10.0;
  tail /= 10.0;
  c.require(tail < 0.5 * head,
            "loss went " + std::to_string(head) + " -> " + std::to_string(tail) +
                ", less than a 50% reduction");
  for (const optim::IterationRecord& r : curve) {
    c.require(std::isfinite(r.total), "non-finite loss");
  }

  const auto replay = run_toy_training();
  bool identical = replay.size() == curve.size();
  for (size_t i = 0; identical && i < curve.size(); ++i) {
    identical = curve[i].total == replay[i].total && curve[i].bootstrap == replay[i].bootstrap &&
                curve[i].iou == replay[i].iou;
  }
  c.require(identical, "training is not deterministic under the seed");

  const double elapsed = seconds_since(start);
  c.require(elapsed < 600.0, "training took " + std::to_string(elapsed) + "s (budget 600s)");
  char buf[160];
  std::snprintf(buf, sizeof(buf), "mean total %.3f -> %.3f over 200 iters, two runs in %.1fs",
                head, tail, elapsed);
  c.detail = buf;
}

// --- criterion 8: metrics ---------------------------------------------------------

void criterion_metrics(Checker& c) {
  MaskVolume gt(1, 1, 4, {1, 1, 1});
  gt.voxels() << 1, 0, 1, 1;
  c.require(f1_score(gt, gt).f1 == 1.0, "perfect F1");
  MaskVolume empty(1, 1, 4, {1, 1, 1});
  const F1Result zero = f1_score(empty, gt);
  c.require(zero.precision == 0.0 && zero.recall == 0.0 && zero.f1 == 0.0, "empty-vs-nonempty F1");
  const F1Result mixed = f1_from_counts({3, 1, 1, 0});
  c.require(std::abs(mixed.f1 - 0.75) < 1e-12, "tp3/fp1/fn1 F1");
  c.require(mixed.precision == 0.75 && mixed.recall == 0.75, "tp3/fp1/fn1 precision/recall");

  std::vector<PatientRiskOutcome> outcomes(144);
  for (int i = 0; i < 144; ++i) {
    outcomes[static_cast<size_t>(i)].truth = RiskCategory::moderate;
    outcomes[static_cast<size_t>(i)].raw = i < 113 ? RiskCategory::moderate : RiskCategory::zero;
    outcomes[static_cast<size_t>(i)].filtered =
        i < 120 ? RiskCategory::moderate : RiskCategory::zero;
  }
  c.require(format_rate(cac_rate(outcomes, false)) == "0.78", "113/144 -> 0.78");
  c.require(format_rate(cac_rate(outcomes, true)) == "0.83", "120/144 -> 0.83");
}

// --- criterion 9: round trips -------------------------------------------------------

void criterion_round_trips(Checker& c) {
  const fs::path dir = fs::temp_directory_path() / "cacs_acceptance";
  fs::create_directories(dir);
  std::mt19937_64 rng(4096);
  std::uniform_int_distribution<Eigen::Index> dim(1, 7);
  std::uniform_real_distribution<double> sp(0.3, 3.5);
  std::uniform_int_distribution<int> hu(kHuMin, kHuMax);
  std::bernoulli_distribution bit(0.5);
  std::uniform_real_distribution<float> prob(0.0f, 1.0f);

  for (int trial = 0; trial < 100; ++trial) {
    const Spacing spacing{sp(rng), sp(rng), sp(rng)};
    CtVolume vol(dim(rng), dim(rng), dim(rng), spacing);
    for (Eigen::Index i = 0; i < vol.size(); ++i) {
      vol.voxels()[i] = static_cast<std::int16_t>(hu(rng));
    }
    const fs::path vp = dir / "vol.cacvol";
    write_volume(vol, vp);
    const CtVolume vol_back = read_volume(vp);
    bool ok = vol_back.same_shape(vol) && vol_back.spacing() == vol.spacing();
    for (Eigen::Index i = 0; ok && i < vol.size(); ++i) {
      ok = vol_back.voxels()[i] == vol.voxels()[i];
    }
    c.require(ok, "volume round trip " + std::to_string(trial));

    MaskVolume mask(vol.n_slices(), vol.n_rows(), vol.n_cols(), spacing);
    ProbVolume probs(vol.n_slices(), vol.n_rows(), vol.n_cols(), spacing);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.voxels()[i] = bit(rng) ? 1 : 0;
      probs.voxels()[i] = prob(rng);
    }
    const fs::path mp = dir / "mask.cacmask";
    const fs::path pp = dir / "probs.cacprob";
    write_mask(mask, mp);
    write_prob(probs, pp);
    const MaskVolume mask_back = read_mask(mp);
    const ProbVolume probs_back = read_prob(pp);
    bool mok = true, pok = true;
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mok = mok && mask_back.voxels()[i] == mask.voxels()[i];
      pok = pok && probs_back.voxels()[i] == probs.voxels()[i];
    }
    c.require(mok, "mask round trip " + std::to_string(trial));
    c.require(pok, "prob round trip " + std::to_string(trial));
  }

  std::mt19937_64 net_rng(11);
  nn::DenseRauNet net = nn::make_denseraunet(nn::NetConfig{}, net_rng);
  Tensor x = Tensor::rand_uniform({1, 9, 16, 16}, net_rng);
  nn::denseraunet_forward(net, x, nn::Mode::train);  // dirty the running buffers
  const fs::path ckpt = dir / "model.ckpt";
  nn::save_checkpoint(net, ckpt);
  nn::DenseRauNet other = nn::make_denseraunet(nn::NetConfig{}, net_rng);
  nn::load_checkpoint(other, ckpt);
  auto a = nn::named_parameters(net);
  auto b = nn::named_parameters(other);
  bool identical = a.size() == b.size();
  for (size_t i = 0; identical && i < a.size(); ++i) {
    identical = a[i].name == b[i].name && a[i].tensor.size() == b[i].tensor.size();
    for (Index j = 0; identical && j < a[i].tensor.size(); ++j) {
      identical = a[i].tensor.values()[j] == b[i].tensor.values()[j];
    }
  }
  c.require(identical, "checkpoint params not bit-identical");
}

struct Criterion {
  int number;
  std::string name;
  std::function<void(Checker&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient suite (all blocks, 20 seeds, rtol 1e-4)", criterion_gradients},
      {2, "pinned loss values (bootstrap 3.6289, iou ln 3)", criterion_loss_values},
      {3, "agatston pipeline vs per-pixel and flood-fill oracles", criterion_oracles},
      {4, "score structure (spacing linearity, weight table)", criterion_score_structure},
      {5, "preprocessing (hu floor, 9-channel edge replication)", criterion_preprocessing},
      {6, "optimizer schedule and momentum recurrence", criterion_optimizer},
      {7, "learnability (>=50% loss cut in 200 iters, deterministic)", criterion_learnability},
      {8, "metrics (f1 cases, cohort rate arithmetic)", criterion_metrics},
      {9, "file and checkpoint round trips", criterion_round_trips},
  };

  int failed = 0;
  for (const Criterion& criterion : criteria) {
    Checker checker;
    try {
      criterion.run(checker);
    } catch (const std::exception& e) {
      checker.require(false, std::string("exception: ") + e.what());
    }
    const bool pass = checker.failures == 0;
    failed += pass ? 0 : 1;
    std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion.number,
                criterion.name.c_str(), checker.detail.empty() ? "" : " -- ",
                checker.detail.c_str());
  }
  if (failed > 0) {
    std::printf("%d criterion(s) failed\n", failed);
    return 1;
  }
  std::printf("all %zu criteria passed\n", criteria.size());
  return 0;
}
