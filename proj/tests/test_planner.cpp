#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "support.hpp"

using namespace infoprune;
namespace oracle = infoprune::testing;

namespace {

ScoreTable table_of(std::initializer_list<std::pair<std::string, std::vector<double>>> rows) {
  ScoreTable t;
  for (const auto& [id, combined] : rows) {
    LayerScores s;
    s.layer_id = id;
    s.combined = combined;
    t.layers.push_back(s);
  }
  return t;
}

PruningRates global_rate(double p) {
  PruningRates r;
  r.global = p;
  return r;
}

IndexSet complement(const IndexSet& kept, std::int64_t n) {
  IndexSet out;
  for (std::int64_t i = 0; i < n; ++i)
    if (!std::binary_search(kept.begin(), kept.end(), i)) out.push_back(i);
  return out;
}

}  // namespace

TEST(KeepCount, Examples) {
  EXPECT_EQ(keep_count(0.5, 10), 5);
  EXPECT_EQ(keep_count(0.3, 7), 5);
  EXPECT_EQ(keep_count(0.0, 64), 64);
  EXPECT_EQ(keep_count(0.99, 3), 1);
}

TEST(KeepCount, RejectsInvalidRates) {
  EXPECT_THROW(keep_count(1.0, 10), Error);
  EXPECT_THROW(keep_count(-0.1, 10), Error);
  EXPECT_THROW(keep_count(0.5, 0), Error);
}

TEST(KeepCount, ExhaustiveAgainstIntegerCeiling) {
  for (int tenths = 0; tenths <= 9; ++tenths) {
    const double p = tenths / 10.0;
    for (std::int64_t n = 1; n <= 512; ++n)
      ASSERT_EQ(keep_count(p, n), oracle::oracle_keep_count(tenths, n)) << "p=" << p << " n=" << n;
  }
}

TEST(SelectFilters, Examples) {
  const std::vector<double> a{0.2, 0.5, 0.8}, b{0.7, 0.7, 0.1};
  EXPECT_EQ(select_filters(a, 2, SelectionStrategy::least_important), (IndexSet{1, 2}));
  EXPECT_EQ(select_filters(b, 1, SelectionStrategy::least_important), (IndexSet{0}));
  EXPECT_EQ(select_filters(a, 2, SelectionStrategy::most_important), (IndexSet{0, 1}));
}

TEST(SelectFilters, TiesKeepSmallerIndexForBothStrategies) {
  const std::vector<double> s{0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(select_filters(s, 2, SelectionStrategy::least_important), (IndexSet{0, 1}));
  EXPECT_EQ(select_filters(s, 2, SelectionStrategy::most_important), (IndexSet{0, 1}));
}

TEST(SelectFilters, KeepBounds) {
  const std::vector<double> s{0.1, 0.2};
  EXPECT_THROW(select_filters(s, 3, SelectionStrategy::least_important), Error);
  EXPECT_EQ(select_filters(s, 2, SelectionStrategy::random, 4), (IndexSet{0, 1}));
}

TEST(SelectFilters, RandomIsSeedDeterministic) {
  std::vector<double> s(32, 0.0);
  const auto a = select_filters(s, 10, SelectionStrategy::random, 42);
  EXPECT_EQ(a, select_filters(s, 10, SelectionStrategy::random, 42));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  int differing = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    differing += select_filters(s, 10, SelectionStrategy::random, seed) != a;
  EXPECT_GE(differing, 19);
}

TEST(SelectFilters, RandomIsRoughlyUniform) {
  std::vector<double> s(8, 0.0);
  std::vector<int> hits(8, 0);
  for (std::uint64_t seed = 0; seed < 4000; ++seed)
    for (auto i : select_filters(s, 2, SelectionStrategy::random, seed)) ++hits[static_cast<std::size_t>(i)];
  for (int h : hits) EXPECT_NEAR(h, 1000, 150);
}

TEST(SelectFilters, RateMonotonicity) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng() % 40);
    std::vector<double> s(static_cast<std::size_t>(n));
    for (auto& v : s) v = static_cast<double>(rng() % 7) / 7.0;  // plenty of ties
    IndexSet prev;
    for (int tenths = 0; tenths <= 9; ++tenths) {
      const auto kept = select_filters(s, keep_count(tenths / 10.0, n), SelectionStrategy::least_important);
      if (tenths > 0) {
        EXPECT_TRUE(std::includes(prev.begin(), prev.end(), kept.begin(), kept.end()));
      }
      prev = kept;
    }
  }
}

TEST(SelectFilters, LeastMostDuality) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t n = 2 + static_cast<std::int64_t>(rng() % 30);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::iota(s.begin(), s.end(), 0.0);
    std::shuffle(s.begin(), s.end(), rng);
    const std::int64_t keep = 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n - 1));
    const auto least = select_filters(s, keep, SelectionStrategy::least_important);
    const auto most = select_filters(s, n - keep, SelectionStrategy::most_important);
    EXPECT_EQ(complement(least, n), most);
  }
}

TEST(BuildPlan, ChainPropagatesInputChannels) {
  ManifestBuilder b({3, 6, 6});
  b.conv("conv1", 8, 3, 1, 1);
  b.relu("relu1");
  b.conv("conv2", 4, 3, 1, 1);
  const auto m = b.build();
  PruningRates r = global_rate(0.0);
  r.per_layer["conv1"] = 0.5;
  const auto scores = table_of({{"conv1", {0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4}}, {"conv2", {0, 0, 0, 0}}});
  const auto plan = build_plan(m, scores, r, {});
  ASSERT_EQ(plan.layers.size(), 2u);
  EXPECT_EQ(plan.find_layer("conv1")->kept, (IndexSet{0, 2, 4, 6}));
  EXPECT_EQ(plan.find_layer("conv2")->kept, (IndexSet{0, 1, 2, 3}));
  ASSERT_NE(plan.find_derived("conv2"), nullptr);
  EXPECT_EQ(plan.find_derived("conv2")->kept, plan.find_layer("conv1")->kept);
  EXPECT_EQ(plan.find_derived("conv2")->dim, "in_channels");
}

TEST(BuildPlan, CouplingGroupSharesOneKeptSet) {
  const auto m = resnet_cifar(20);
  const auto t = random_tensors(m, 4);
  const auto plan = oracle::plan_for(m, t, 0.25);
  for (const auto& grp : m.coupling_groups) {
    const auto& first = plan.find_layer(grp.layer_ids.front())->kept;
    EXPECT_EQ(static_cast<std::int64_t>(first.size()), keep_count(0.25, plan.find_layer(grp.layer_ids.front())->original));
    for (const auto& id : grp.layer_ids) EXPECT_EQ(plan.find_layer(id)->kept, first) << id;
  }
}

TEST(BuildPlan, GroupScoreIsMemberSum) {
  ManifestBuilder b({2, 4, 4});
  const auto a = b.conv("a", 4, 1, 1, 0, false, true, "input");
  const auto c = b.conv("c", 4, 1, 1, 0, false, true, "input");
  b.add("join", a, c);
  b.couple({"a", "c"});
  const auto m = b.build();
  // a alone prefers {0,1}; c alone prefers {2,3}; the sum prefers {1,2}
  const auto scores = table_of({{"a", {0.9, 0.8, 0.5, 0.0}}, {"c", {0.0, 0.5, 0.8, 0.9}}});
  const auto plan = build_plan(m, scores, global_rate(0.5), {});
  EXPECT_EQ(plan.find_layer("a")->kept, (IndexSet{1, 2}));
  EXPECT_EQ(plan.find_layer("c")->kept, (IndexSet{1, 2}));
}

TEST(BuildPlan, FlattenBoundaryDropsColumnBlocks) {
  ManifestBuilder b({2, 4, 4});
  b.conv("conv", 3, 1);
  b.flatten("flatten");
  b.linear("fc", 5);
  const auto m = b.build();
  const auto scores = table_of({{"conv", {0.9, 0.1, 0.8}}, {"fc", {0, 0, 0, 0, 0}}});
  const auto plan = build_plan(m, scores, global_rate(0.34), {});
  EXPECT_EQ(plan.find_layer("conv")->kept, (IndexSet{0, 2}));
  EXPECT_EQ(plan.find_layer("fc")->kept.size(), 5u);  // protected by default
  IndexSet cols;
  for (std::int64_t c = 0; c < 48; ++c)
    if (c < 16 || c >= 32) cols.push_back(c);
  EXPECT_EQ(plan.find_derived("fc")->kept, cols);
  EXPECT_EQ(plan.find_derived("fc")->dim, "in_features");
}

TEST(BuildPlan, BatchNormFollowsItsConv) {
  const auto m = toy_chain();
  const auto plan = oracle::plan_for(m, random_tensors(m, 1), 0.5);
  EXPECT_EQ(plan.find_derived("bn1")->kept, plan.find_layer("conv1")->kept);
  EXPECT_EQ(plan.find_derived("bn1")->dim, "channels");
  EXPECT_EQ(plan.find_layer("conv1")->kept.size(), 4u);
  EXPECT_EQ(plan.find_layer("conv2")->kept.size(), 2u);
}

TEST(BuildPlan, ProtectionDefaultsAndOverrides) {
  const auto m = vgg16_cifar();
  const auto scores = oracle::synthetic_scores(m, 1);
  auto plan = build_plan(m, scores, global_rate(0.5), {});
  EXPECT_EQ(plan.protected_layers, (std::vector<std::string>{"fc2"}));
  EXPECT_EQ(plan.find_layer("fc2")->kept.size(), 10u);
  EXPECT_EQ(plan.find_layer("fc1")->kept.size(), 256u);

  PruningRates r = global_rate(0.5);
  r.protected_layers = std::set<std::string>{"conv1", "fc2"};
  plan = build_plan(m, scores, r, {});
  EXPECT_EQ(plan.find_layer("conv1")->kept.size(), 64u);
  EXPECT_EQ(plan.find_layer("conv1")->rate, 0.0);

  r.protected_layers = std::set<std::string>{"nope"};
  EXPECT_THROW(build_plan(m, scores, r, {}), Error);
}

TEST(BuildPlan, RateErrors) {
  const auto m = resnet_cifar(8);
  const auto scores = score_model(m, random_tensors(m, 1), {});
  PruningRates conflicting = global_rate(0.5);
  conflicting.per_layer["stem"] = 0.25;
  conflicting.per_layer["s1b1_conv2"] = 0.5;
  EXPECT_THROW(build_plan(m, scores, conflicting, {}), Error);

  PruningRates consistent = conflicting;
  consistent.per_layer["s1b1_conv2"] = 0.25;
  EXPECT_NO_THROW(build_plan(m, scores, consistent, {}));

  PruningRates missing;
  missing.per_layer["stem"] = 0.5;
  EXPECT_THROW(build_plan(m, scores, missing, {}), Error);

  EXPECT_THROW(build_plan(m, scores, global_rate(1.0), {}), Error);
  PruningRates unknown = global_rate(0.1);
  unknown.per_layer["gap"] = 0.1;
  EXPECT_THROW(build_plan(m, scores, unknown, {}), Error);

  ScoreTable partial = scores;
  partial.layers.pop_back();
  partial.layers.erase(partial.layers.begin());
  EXPECT_THROW(build_plan(m, partial, global_rate(0.5), {}), Error);
}

TEST(BuildPlan, UngroupedAddCannotBePruned) {
  ManifestBuilder b({2, 4, 4});
  const auto a = b.conv("a", 4, 1, 1, 0, false, true, "input");
  const auto c = b.conv("c", 4, 1, 1, 0, false, true, "input");
  b.add("join", a, c);
  const auto m = b.build();
  const auto scores = table_of({{"a", {1, 2, 3, 4}}, {"c", {1, 2, 3, 4}}});
  EXPECT_THROW(build_plan(m, scores, global_rate(0.5), {}), Error);
  EXPECT_NO_THROW(build_plan(m, scores, global_rate(0.0), {}));
}

TEST(BuildPlan, RandomStrategyReproducible) {
  const auto m = vgg16_cifar();
  const auto scores = oracle::synthetic_scores(m, 1);
  const auto p1 = build_plan(m, scores, global_rate(0.5), {SelectionStrategy::random, 9, ""});
  const auto p2 = build_plan(m, scores, global_rate(0.5), {SelectionStrategy::random, 9, ""});
  const auto p3 = build_plan(m, scores, global_rate(0.5), {SelectionStrategy::random, 10, ""});
  EXPECT_EQ(p1, p2);
  EXPECT_NE(p1.find_layer("conv5")->kept, p3.find_layer("conv5")->kept);
}

TEST(PlanJson, RoundTripAndHash) {
  const auto m = resnet_cifar(8);
  const auto t = random_tensors(m, 1);
  ScoringConfig cfg;
  cfg.m_nearest = 3;
  PruningRates r = global_rate(0.3);
  r.per_layer["s1b1_conv1"] = 0.6;
  r.protected_layers = std::set<std::string>{"fc"};
  const auto plan = build_plan(m, score_model(m, t, cfg), r, {SelectionStrategy::random, 77, archive_fingerprint(m, t)});
  const auto back = plan_from_json(json::parse(to_json(plan).dump()));
  EXPECT_EQ(back, plan);
  EXPECT_EQ(plan_hash(back), plan_hash(plan));
  auto other = plan;
  other.seed = 78;
  EXPECT_NE(plan_hash(other), plan_hash(plan));
}

TEST(PlanJson, KeysAreStable) {
  const auto m = toy_chain();
  const auto j = to_json(oracle::plan_for(m, random_tensors(m, 1), 0.5));
  for (const char* key : {"source_fingerprint", "config", "protected_layers", "layers", "derived"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["config"]["scoring"]["sigma"], 0.8);
  EXPECT_EQ(j["layers"][0]["kept_count"], 4);
}

TEST(ResolvePlan, DetectsStaleOrTamperedPlans) {
  const auto m = toy_chain();
  const auto good = oracle::plan_for(m, random_tensors(m, 1), 0.5);
  EXPECT_NO_THROW(planned_manifest(m, good));

  auto check = [&](PruningPlan p) {
    try {
      planned_manifest(m, p);
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find("plan/archive mismatch"), std::string::npos) << e.what();
      return;
    }
    ADD_FAILURE() << "tampered plan accepted";
  };
  auto p = good;
  p.layers[0].kept.back() = 99;
  check(p);
  p = good;
  std::swap(p.layers[0].kept[0], p.layers[0].kept[1]);
  check(p);
  p = good;
  p.layers[0].original = 9;
  check(p);
  p = good;
  p.derived[0].kept.pop_back();
  check(p);
  p = good;
  p.layers.pop_back();
  check(p);
  p = good;
  p.layers[0].layer_id = "ghost";
  check(p);

  // a plan for the full network does not fit the pruned one
  const auto pruned = planned_manifest(m, good);
  EXPECT_THROW(planned_manifest(pruned, good), Error);
}
