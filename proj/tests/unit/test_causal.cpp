#include <doctest.h>

#include <algorithm>
#include <random>

#include "llmmap/causal_metrics.hpp"

using namespace llmmap;
using namespace llmmap::causal;
using trace::PatchRecord;
using trace::PatchSite;

namespace {

PatchRecord make(std::string id, int layer, PatchSite site, double clean, double corrupt, double patched) {
  // Logit differences are encoded against a fixed r' logit of 1.
  return PatchRecord{std::move(id), layer, site, clean + 1, 1, corrupt + 1, 1, patched + 1, 1};
}

stats::BootstrapOptions opts(std::uint64_t seed = 0) {
  stats::BootstrapOptions o;
  o.n_resamples = 200;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("patching effect algebra") {
  const auto e = patching_effect(PatchRecord{"p", 3, PatchSite::mlp, 5, 3, 1, 2, 2, 1.5});
  REQUIRE(e);
  // LD_clean = 2, LD_corrupt = -1, LD_patched = 0.5.
  CHECK(e->effect == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(!e->success);
  CHECK(patching_effect(make("q", 0, PatchSite::attention, 2, 0, 2))->effect == 1.0);
  CHECK(patching_effect(make("q", 0, PatchSite::attention, 2, 0, 0))->effect == 0.0);
  CHECK(patching_effect(make("q", 0, PatchSite::attention, 2, 0, 1.2))->success);
  CHECK(!patching_effect(make("q", 0, PatchSite::attention, 1, 1 + 1e-9, 3)));
  CHECK(!patching_effect(make("q", 0, PatchSite::attention, 1, 1, 3), 0.0));
}

TEST_CASE("patching effect matches direct evaluation on random records") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 500; ++i) {
    PatchRecord r{"p", 0, PatchSite::attention, u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double clean = r.logit_clean_r - r.logit_clean_rp;
    const double corrupt = r.logit_corrupt_r - r.logit_corrupt_rp;
    const double patched = r.logit_patched_r - r.logit_patched_rp;
    const auto e = patching_effect(r);
    if (std::fabs(clean - corrupt) <= kDefaultEpsilon) {
      CHECK(!e);
      continue;
    }
    REQUIRE(e);
    CHECK(e->effect == doctest::Approx((patched - corrupt) / (clean - corrupt)).epsilon(1e-12));
  }
}

TEST_CASE("patching profile aggregates per layer and site") {
  std::vector<PatchRecord> recs{
      make("a", 0, PatchSite::attention, 2, 0, 2),   // 1.0
      make("b", 0, PatchSite::attention, 2, 0, 0),   // 0.0
      make("a", 0, PatchSite::mlp, 2, 0, 1.5),       // 0.75
      make("a", 2, PatchSite::mlp, 4, 0, 1),         // 0.25
      make("c", 2, PatchSite::mlp, 1, 1, 5),         // degenerate
  };
  const auto p = patching_profile(recs, 3, Concept::drugs, opts());
  REQUIRE(p.attention.per_layer.size() == 3);
  CHECK(p.attention.per_layer[0]->mean == doctest::Approx(0.5));
  CHECK(p.attention.per_layer[0]->n == 2);
  CHECK(!p.attention.per_layer[1]);
  CHECK(!p.attention.per_layer[2]);
  CHECK(p.mlp.per_layer[0]->mean == doctest::Approx(0.75));
  CHECK(p.mlp.per_layer[2]->mean == doctest::Approx(0.25));
  CHECK(p.combined.per_layer[0]->mean == doctest::Approx(1.75 / 3));
  CHECK(p.combined.variant.empty());
  CHECK(p.attention.variant == "attention");
  CHECK(*p.success_fraction[0] == doctest::Approx(2.0 / 3));
  CHECK(*p.success_fraction_attention[0] == doctest::Approx(0.5));
  CHECK(*p.success_fraction[2] == 0.0);
  CHECK(!p.success_fraction[1]);
  CHECK(p.degenerate == 1);
  CHECK(p.degenerate_ids == std::vector<std::string>{"c@2/mlp"});

  const auto csv = patching_heatmap_csv(p);
  CHECK(csv.rfind("layer,attention,mlp\n0,0.5,0.75\n1,,\n2,,0.25", 0) == 0);

  recs.push_back(make("z", 3, PatchSite::mlp, 2, 0, 1));
  CHECK_THROWS_WITH_AS(patching_profile(recs, 3, Concept::drugs, opts()), doctest::Contains("z@3/mlp"), Error);
}

TEST_CASE("patching profile matches a streaming oracle and ignores input order") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-3, 3);
  std::vector<PatchRecord> recs;
  for (int pair = 0; pair < 40; ++pair)
    for (int l = 0; l < 6; ++l)
      for (auto site : {PatchSite::attention, PatchSite::mlp})
        recs.push_back(make("p" + std::to_string(pair), l, site, 3 + u(rng), u(rng) - 3, u(rng)));

  std::vector<double> sum(6, 0.0);
  std::vector<int> count(6, 0);
  for (const auto& r : recs) {
    const double clean = r.logit_clean_r - r.logit_clean_rp;
    const double corrupt = r.logit_corrupt_r - r.logit_corrupt_rp;
    const double patched = r.logit_patched_r - r.logit_patched_rp;
    sum[r.layer] += (patched - corrupt) / (clean - corrupt);
    count[r.layer] += 1;
  }
  const auto p = patching_profile(recs, 6, Concept::diseases, opts(3));
  for (int l = 0; l < 6; ++l) CHECK(p.combined.per_layer[l]->mean == doctest::Approx(sum[l] / count[l]).epsilon(1e-12));

  std::shuffle(recs.begin(), recs.end(), rng);
  const auto q = patching_profile(recs, 6, Concept::diseases, opts(3));
  CHECK(q.combined == p.combined);
  CHECK(q.attention == p.attention);
  CHECK(q.mlp == p.mlp);
}

TEST_CASE("saliency profile mean and normalization") {
  std::vector<trace::SaliencyProfileRecord> recs{{"a", {1, 2, 4}}, {"b", {3, 2, 0}}};
  const auto s = saliency_profile(recs, Concept::symptoms, opts());
  CHECK(s.mean.per_layer[0]->mean == 2.0);
  CHECK(s.mean.per_layer[1]->mean == 2.0);
  CHECK(s.mean.per_layer[2]->mean == 2.0);
  CHECK(s.normalized.per_layer[0]->mean == 1.0);
  CHECK(s.normalized.variant == "normalized");

  std::vector<trace::SaliencyProfileRecord> peak{{"a", {1, 4, 2}}, {"b", {1, 2, 2}}};
  const auto n = saliency_profile(peak, Concept::symptoms, opts());
  CHECK(n.normalized.per_layer[1]->mean == 1.0);
  CHECK(n.normalized.per_layer[0]->mean == doctest::Approx(1.0 / 3));

  CHECK_THROWS_AS(saliency_profile({{"a", {1, -2}}}, Concept::age, opts()), Error);
  CHECK_THROWS_AS(saliency_profile({{"a", {1, 2}}, {"b", {1}}}, Concept::age, opts()), Error);
  CHECK_THROWS_AS(saliency_profile({}, Concept::age, opts()), Error);
}

TEST_CASE("lesion profile averages judge scores per layer") {
  using trace::LesionRecord;
  std::vector<LesionRecord> recs{
      {"q1", 0, "o", "l", 2, std::nullopt, std::nullopt},
      {"q2", 0, "o", "l", 4, std::nullopt, std::nullopt},
      {"q1", 2, "o", "l", 9, std::nullopt, std::nullopt},
  };
  const auto s = lesion_profile(recs, 3, Concept::dosages, opts());
  CHECK(s.analysis == SeriesKind::lesioning);
  CHECK(s.per_layer[0]->mean == 3.0);
  CHECK(!s.per_layer[1]);
  CHECK(s.per_layer[2]->mean == 9.0);

  recs.push_back({"q3", 1, "o", "l", std::nullopt, std::nullopt, std::nullopt});
  try {
    lesion_profile(recs, 3, Concept::dosages, opts());
    FAIL("expected an unscored-record error");
  } catch (const Error& e) {
    CHECK(e.record() == "q3@1");
    CHECK(std::string(e.what()).find("judge") != std::string::npos);
  }
  recs.back().judge_score = 11;
  CHECK_THROWS_AS(lesion_profile(recs, 3, Concept::dosages, opts()), Error);
}
