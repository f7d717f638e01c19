#include <doctest.h>

#include <random>

#include "cacs/scoring.hpp"
#include "oracles.hpp"

using namespace cacs;

TEST_SUITE_BEGIN("scoring");

namespace {

CtVolume uniform_volume(Eigen::Index ns, Eigen::Index nr, Eigen::Index nc, Spacing sp,
                        std::int16_t hu) {
  CtVolume vol(ns, nr, nc, sp);
  vol.voxels().setConstant(hu);
  return vol;
}

}  // namespace

TEST_CASE("binarize: ties go to foreground") {
  ProbVolume probs(1, 1, 3, {1, 1, 1});
  probs.voxels() << 0.49f, 0.5f, 0.51f;
  const MaskVolume mask = binarize(probs);
  CHECK(mask.voxels()[0] == 0);
  CHECK(mask.voxels()[1] == 1);
  CHECK(mask.voxels()[2] == 1);

  ProbVolume zeros(2, 2, 2, {1, 1, 1});
  CHECK(binarize(zeros).voxels().maxCoeff() == 0);
}

TEST_CASE("hu_gate removes sub-threshold voxels and is idempotent") {
  CtVolume vol = uniform_volume(1, 1, 3, {1, 1, 1}, 0);
  vol.voxels() << 129, 130, 400;
  MaskVolume mask(1, 1, 3, vol.spacing());
  mask.voxels().setConstant(1);
  const MaskVolume gated = hu_gate(mask, vol);
  CHECK(gated.voxels()[0] == 0);
  CHECK(gated.voxels()[1] == 1);
  CHECK(gated.voxels()[2] == 1);
  const MaskVolume twice = hu_gate(gated, vol);
  CHECK((twice.voxels() == gated.voxels()).all());

  CtVolume other(2, 1, 3, {1, 1, 1});
  CHECK_THROWS_AS(hu_gate(mask, other), ValidationError);
}

TEST_CASE("in-plane diagonal voxels join under 26-connectivity") {
  CtVolume vol = uniform_volume(1, 3, 3, {3, 1, 1}, 300);
  MaskVolume mask(1, 3, 3, vol.spacing());
  mask(0, 0, 0) = 1;
  mask(0, 1, 1) = 1;
  ScoringOptions opts;
  opts.min_lesion_mm2 = 0;
  const auto lesions = connected_components(mask, vol, opts);
  REQUIRE(lesions.size() == 1);
  CHECK(lesions[0].voxels.size() == 2);

  // separated by a gap: two components
  MaskVolume gapped(1, 3, 3, vol.spacing());
  gapped(0, 0, 0) = 1;
  gapped(0, 0, 2) = 1;
  CHECK(connected_components(gapped, vol, opts).size() == 2);
}

TEST_CASE("cross-slice components split in 2D mode") {
  CtVolume vol = uniform_volume(2, 2, 2, {3, 1, 1}, 300);
  MaskVolume mask(2, 2, 2, vol.spacing());
  mask(0, 0, 0) = 1;
  mask(1, 0, 0) = 1;
  ScoringOptions opts;
  opts.min_lesion_mm2 = 0;
  CHECK(connected_components(mask, vol, opts).size() == 1);
  opts.connectivity = Connectivity::c8_2d;
  CHECK(connected_components(mask, vol, opts).size() == 2);
}

TEST_CASE("connected components match the flood-fill oracle on random masks") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution bit(0.35);
  ScoringOptions opts;
  opts.min_lesion_mm2 = 0;
  for (int trial = 0; trial < 100; ++trial) {
    CtVolume vol = uniform_volume(6, 6, 6, {2, 1, 1}, 500);
    MaskVolume mask(6, 6, 6, vol.spacing());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.voxels()[i] = bit(rng) ? 1 : 0;

    const auto lesions = connected_components(mask, vol, opts);
    const auto expected = cacs::test::flood_fill_components(mask);
    REQUIRE(lesions.size() == expected.size());
    for (size_t k = 0; k < lesions.size(); ++k) {
      std::vector<Eigen::Index> flat;
      for (const VoxelIndex& v : lesions[k].voxels) flat.push_back(mask.flat(v.slice, v.row, v.col));
      std::sort(flat.begin(), flat.end());
      CHECK(flat == expected[k]);
    }
  }
}

TEST_CASE("per-slice stats carry pixel areas and peak HU") {
  CtVolume vol = uniform_volume(2, 4, 4, {3.0, 0.5, 0.5}, -50);
  MaskVolume mask(2, 4, 4, vol.spacing());
  vol(0, 1, 1) = 250;
  vol(0, 1, 2) = 180;
  vol(1, 1, 1) = 420;
  mask(0, 1, 1) = mask(0, 1, 2) = mask(1, 1, 1) = 1;
  ScoringOptions opts;
  opts.min_lesion_mm2 = 0;
  const auto lesions = connected_components(mask, vol, opts);
  REQUIRE(lesions.size() == 1);
  REQUIRE(lesions[0].per_slice.size() == 2);
  CHECK(lesions[0].per_slice[0].n_pixels == 2);
  CHECK(lesions[0].per_slice[0].area_mm2 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(lesions[0].per_slice[0].peak_hu == 250);
  CHECK(lesions[0].per_slice[1].peak_hu == 420);
  CHECK(lesions[0].total_volume_mm3 == doctest::Approx(3 * 0.25 * 3.0).epsilon(1e-12));
}

TEST_CASE("density weight bins") {
  CHECK(agatston_weight(130) == 1);
  CHECK(agatston_weight(199) == 1);
  CHECK(agatston_weight(200) == 2);
  CHECK(agatston_weight(299) == 2);
  CHECK(agatston_weight(300) == 3);
  CHECK(agatston_weight(399) == 3);
  CHECK(agatston_weight(400) == 4);
  CHECK(agatston_weight(2000) == 4);
  CHECK_THROWS_AS(agatston_weight(129.5), ValidationError);
}

TEST_CASE("hand-computed scores: 10 pixels at 250 HU") {
  // area 10 * 0.49 = 4.9 mm^2, weight 2, spacing 3 mm -> 2 * 4.9 * 1 = 9.8
  CtVolume vol = uniform_volume(1, 4, 8, {3.0, 0.7, 0.7}, -50);
  MaskVolume mask(1, 4, 8, vol.spacing());
  for (Eigen::Index c = 0; c < 5; ++c) {
    for (Eigen::Index r = 1; r < 3; ++r) {
      vol(0, r, c) = 250;
      mask(0, r, c) = 1;
    }
  }
  ScoringOptions opts;
  opts.min_lesion_mm2 = 0;
  const AgatstonResult result = agatston_score(connected_components(mask, vol, opts), vol);
  REQUIRE(result.lesions.size() == 1);
  CHECK(result.total == doctest::Approx(9.8).epsilon(1e-9));
  CHECK(result.risk == RiskCategory::minimal);

  // spacing 1 mm scales the same lesion by 1/3
  CtVolume thin = uniform_volume(1, 4, 8, {1.0, 0.7, 0.7}, -50);
  MaskVolume thin_mask(1, 4, 8, thin.spacing());
  for (Eigen::Index c = 0; c < 5; ++c) {
    for (Eigen::Index r = 1; r < 3; ++r) {
      thin(0, r, c) = 250;
      thin_mask(0, r, c) = 1;
    }
  }
  const AgatstonResult scaled = agatston_score(connected_components(thin_mask, thin, opts), thin);
  CHECK(scaled.total == doctest::Approx(9.8 / 3.0).epsilon(1e-9));

  const AgatstonResult empty = agatston_score({}, vol);
  CHECK(empty.total == 0.0);
  CHECK(empty.risk == RiskCategory::zero);
}

TEST_CASE("score scales linearly in slice spacing") {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution bit(0.2);
  for (double k : {0.5, 2.0, 3.0}) {
    CtVolume vol = uniform_volume(4, 8, 8, {1.0, 0.6, 0.6}, -50);
    MaskVolume mask(4, 8, 8, vol.spacing());
    for (Eigen::Index i = 0; i < vol.size(); ++i) {
      if (bit(rng)) {
        vol.voxels()[i] = 350;
        mask.voxels()[i] = 1;
      }
    }
    ScoringOptions opts;
    opts.min_lesion_mm2 = 0;
    const double base = agatston_score(connected_components(mask, vol, opts), vol).total;

    CtVolume scaled_vol = vol;
    scaled_vol.set_spacing({k * 1.0, 0.6, 0.6});
    MaskVolume scaled_mask = mask;
    scaled_mask.set_spacing(scaled_vol.spacing());
    const double scaled =
        agatston_score(connected_components(scaled_mask, scaled_vol, opts), scaled_vol).total;
    CHECK(scaled == doctest::Approx(k * base).epsilon(1e-12));
  }
}

TEST_CASE("minimum-size filter drops sub-millimeter lesions") {
  CtVolume vol = uniform_volume(1, 6, 6, {3.0, 0.7, 0.7}, -50);
  MaskVolume mask(1, 6, 6, vol.spacing());
  vol(0, 0, 0) = 300;  // single pixel: 0.49 mm^2 < 1
  mask(0, 0, 0) = 1;
  for (Eigen::Index r = 3; r < 5; ++r) {
    for (Eigen::Index c = 3; c < 5; ++c) {
      vol(0, r, c) = 300;  // 4 pixels: 1.96 mm^2
      mask(0, r, c) = 1;
    }
  }
  ScoringOptions filtered;  // defaults: 1 mm^2 filter on
  CHECK(connected_components(mask, vol, filtered).size() == 1);
  ScoringOptions raw;
  raw.min_lesion_mm2 = 0;
  CHECK(connected_components(mask, vol, raw).size() == 2);
}

TEST_CASE("pipeline composes and is idempotent under pre-binarization") {
  CtVolume vol = uniform_volume(2, 8, 8, {2.0, 0.8, 0.8}, -50);
  ProbVolume probs(2, 8, 8, vol.spacing());
  for (Eigen::Index r = 2; r < 5; ++r) {
    for (Eigen::Index c = 2; c < 5; ++c) {
      vol(0, r, c) = 450;
      probs(0, r, c) = 0.9f;
    }
  }
  probs(1, 7, 7) = 0.8f;  // above prob threshold but background HU: gated away

  const AgatstonResult direct = score_pipeline(probs, vol);
  CHECK(direct.total > 0.0);

  // feeding the binarized mask back as probabilities changes nothing
  const MaskVolume mask = binarize(probs);
  ProbVolume as_probs(2, 8, 8, vol.spacing());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    as_probs.voxels()[i] = static_cast<float>(mask.voxels()[i]);
  }
  const AgatstonResult again = score_pipeline(as_probs, vol);
  CHECK(again.total == doctest::Approx(direct.total).epsilon(1e-12));

  ProbVolume zeros(2, 8, 8, vol.spacing());
  CHECK(score_pipeline(zeros, vol).total == 0.0);
  CHECK(score_pipeline(zeros, vol).risk == RiskCategory::zero);
}

TEST_CASE("adding above-threshold voxels never decreases the total") {
  std::mt19937_64 rng(3);
  CtVolume vol = uniform_volume(3, 8, 8, {2.0, 0.7, 0.7}, -50);
  ProbVolume probs(3, 8, 8, vol.spacing());
  std::bernoulli_distribution bit(0.15);
  for (Eigen::Index i = 0; i < vol.size(); ++i) {
    if (bit(rng)) {
      vol.voxels()[i] = 500;
      probs.voxels()[i] = 1.0f;
    }
  }
  ScoringOptions opts;
  opts.min_lesion_mm2 = 0;
  double prev = score_pipeline(probs, vol, opts).total;
  for (int additions = 0; additions < 20; ++additions) {
    const Eigen::Index i =
        std::uniform_int_distribution<Eigen::Index>(0, vol.size() - 1)(rng);
    vol.voxels()[i] = 500;
    probs.voxels()[i] = 1.0f;
    const double now = score_pipeline(probs, vol, opts).total;
    CHECK(now >= prev - 1e-12);
    prev = now;
  }
}

TEST_CASE("risk bands partition the score range") {
  CHECK(risk_category(0.0) == RiskCategory::zero);
  CHECK(risk_category(0.01) == RiskCategory::minimal);
  CHECK(risk_category(10.0) == RiskCategory::minimal);
  CHECK(risk_category(10.5) == RiskCategory::mild);
  CHECK(risk_category(100.0) == RiskCategory::mild);
  CHECK(risk_category(400.0) == RiskCategory::moderate);
  CHECK(risk_category(401.0) == RiskCategory::severe);
  CHECK(parse_risk("severe") == RiskCategory::severe);
  CHECK(risk_name(RiskCategory::mild) == "mild");
  CHECK_THROWS_AS(parse_risk("bogus"), ValidationError);
}

TEST_CASE("report formats") {
  AgatstonResult result;
  result.lesions.push_back({1, 10, 14.7, 9.8});
  result.total = 9.8;
  result.risk = RiskCategory::minimal;
  const std::string text = format_score_report(result);
  CHECK(text.find("lesion_id,n_voxels,volume_mm3,score") != std::string::npos);
  CHECK(text.find("1,10,14.7,9.8") != std::string::npos);
  CHECK(text.find("total_score,9.8") != std::string::npos);
  CHECK(text.find("risk_category,minimal") != std::string::npos);
  const std::string kv = format_score_kv(result);
  CHECK(kv.find("format cacs-score-v1") != std::string::npos);
  CHECK(kv.find("lesion_1_score 9.8") != std::string::npos);
  CHECK(kv.find("risk minimal") != std::string::npos);
}

TEST_SUITE_END();
