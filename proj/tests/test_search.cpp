#include "non/search.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "synthetic.hpp"

using namespace non;

namespace {

bool contains(const std::vector<std::size_t>& set, std::size_t v) {
  return std::find(set.begin(), set.end(), v) != set.end();
}

bool contains(const std::vector<double>& set, double v) {
  return std::find(set.begin(), set.end(), v) != set.end();
}

std::set<Operation> as_set(const std::vector<Operation>& ops) {
  return {ops.begin(), ops.end()};
}

// shrunken space and data so a full search stays in the millisecond range
struct SmallSearch {
  SearchSpace space;
  NONConfig base_model;
  TrainConfig base_train;
  synth::Dataset data;
  EncodedTable train, valid, test;

  SmallSearch() : data(synth::make_separable(240, 21)) {
    space.embedding_dims = {4, 8};
    space.dnn_widths = {8, 16};
    space.max_dnn_depth = 2;
    space.fieldwise_multipliers = {0.5, 1.0};
    space.max_fieldwise_depth = 2;
    base_model.embedding_dim = 4;
    base_model.fusion_widths = {8};
    base_train.epochs = 2;
    base_train.batch_size = 64;
    auto [rest, test_part] = split_train_valid(data.table, 0.2, 1);
    auto [train_part, valid_part] = split_train_valid(rest, 0.25, 2);
    train = std::move(train_part);
    valid = std::move(valid_part);
    test = std::move(test_part);
  }
};

std::string record_fingerprint(const TrialRecord& t) {
  nlohmann::json j = trial_to_json(t);
  j.erase("elapsed_s");  // wall time is the one legitimately varying field
  return j.dump();
}

}  // namespace

TEST(SampleConfig, StaysInsideTheSpaceAndCoversAllCombos) {
  SearchSpace space;
  NONConfig base;
  TrainConfig train;
  Rng rng(1234);
  std::set<std::set<Operation>> seen;
  for (int i = 0; i < 500; ++i) {
    auto [m, t] = sample_config(space, base, train, rng);
    EXPECT_GE(t.learning_rate, 0.05);
    EXPECT_LE(t.learning_rate, 0.5);
    EXPECT_TRUE(contains(space.embedding_dims, m.embedding_dim));
    EXPECT_GE(m.dnn_widths.size(), 1u);
    EXPECT_LE(m.dnn_widths.size(), 4u);
    for (std::size_t w : m.dnn_widths) EXPECT_TRUE(contains(space.dnn_widths, w));
    EXPECT_GE(m.field_wise.multipliers.size(), 1u);
    EXPECT_LE(m.field_wise.multipliers.size(), 4u);
    for (double k : m.field_wise.multipliers)
      EXPECT_TRUE(contains(space.fieldwise_multipliers, k));
    EXPECT_GE(t.alpha, 0.1);
    EXPECT_LE(t.alpha, 1.0);
    EXPECT_GE(t.l2, 1e-5);
    EXPECT_LE(t.l2, 1e-4);
    EXPECT_TRUE(m.has(Operation::DNN));
    seen.insert(as_set(m.operations));
  }
  // every sampled set is one of the 7 admissible combinations, and with 500
  // draws all of them show up
  auto combos = operation_combinations();
  ASSERT_EQ(combos.size(), 7u);
  std::set<std::set<Operation>> admissible;
  for (const auto& c : combos) admissible.insert(as_set(c));
  EXPECT_EQ(seen, admissible);
  // pure DNN is deliberately not in the sampled set
  EXPECT_FALSE(admissible.count({Operation::DNN}));
}

TEST(SampleConfig, DeterministicInTheRngSeed) {
  SearchSpace space;
  NONConfig base;
  TrainConfig train;
  Rng a(99), b(99);
  for (int i = 0; i < 20; ++i) {
    auto [ma, ta] = sample_config(space, base, train, a);
    auto [mb, tb] = sample_config(space, base, train, b);
    EXPECT_EQ(model_config_to_json(ma).dump(), model_config_to_json(mb).dump());
    EXPECT_EQ(train_config_to_json(ta).dump(), train_config_to_json(tb).dump());
  }
}

TEST(SampleConfig, FixedOperationsOverrideTheDraw) {
  SearchSpace space;
  space.fixed_operations = std::vector<Operation>{Operation::LR, Operation::DNN};
  NONConfig base;
  TrainConfig train;
  Rng rng(7);
  for (int i = 0; i < 30; ++i) {
    auto [m, t] = sample_config(space, base, train, rng);
    EXPECT_EQ(as_set(m.operations), as_set({Operation::LR, Operation::DNN}));
  }
  // plain DNN is reachable only by pinning it explicitly
  space.fixed_operations = std::vector<Operation>{Operation::DNN};
  auto [m, t] = sample_config(space, base, train, rng);
  EXPECT_EQ(m.operations, std::vector<Operation>{Operation::DNN});
}

TEST(SampleConfig, DisableFieldWiseClearsTheTower) {
  SearchSpace space;
  space.disable_field_wise = true;
  NONConfig base;
  TrainConfig train;
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    auto [m, t] = sample_config(space, base, train, rng);
    EXPECT_TRUE(m.field_wise.multipliers.empty());
  }
}

TEST(SampleConfig, ProductAndGateRefinementForceTheLastMultiplierToOne) {
  SearchSpace space;
  NONConfig base;
  TrainConfig train;
  for (RefineMode mode : {RefineMode::Product, RefineMode::Gate}) {
    base.field_wise.refine = mode;
    Rng rng(9);
    for (int i = 0; i < 30; ++i) {
      auto [m, t] = sample_config(space, base, train, rng);
      EXPECT_EQ(m.field_wise.multipliers.back(), 1.0);
    }
  }
}

TEST(RunSearch, PicksTheBestValidationTrial) {
  SmallSearch s;
  auto result = run_search(s.space, s.base_model, s.base_train, s.data.schema,
                           s.data.vocab, s.train, s.valid, s.test, 4, 1, 17);
  ASSERT_EQ(result.trials.size(), 4u);
  double best = -1.0;
  for (const auto& t : result.trials) {
    EXPECT_FALSE(t.failed) << t.error;
    EXPECT_GE(t.epochs_run, 1u);
    EXPECT_GT(t.valid_auc, 0.0);
    EXPECT_LE(t.valid_auc, 1.0);
    EXPECT_GT(t.test_auc, 0.0);
    EXPECT_LE(t.test_auc, 1.0);
    EXPECT_GE(t.seconds, 0.0);
    best = std::max(best, t.valid_auc);
  }
  EXPECT_EQ(result.trials[result.best_id].valid_auc, best);
}

TEST(RunSearch, RerunWithTheSameMasterSeedIsBitIdentical) {
  SmallSearch s;
  auto a = run_search(s.space, s.base_model, s.base_train, s.data.schema, s.data.vocab,
                      s.train, s.valid, s.test, 3, 1, 555);
  auto b = run_search(s.space, s.base_model, s.base_train, s.data.schema, s.data.vocab,
                      s.train, s.valid, s.test, 3, 1, 555);
  ASSERT_EQ(a.trials.size(), b.trials.size());
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    EXPECT_EQ(record_fingerprint(a.trials[i]), record_fingerprint(b.trials[i]));
  }
  EXPECT_EQ(a.best_id, b.best_id);

  // a different master seed draws different trials
  auto c = run_search(s.space, s.base_model, s.base_train, s.data.schema, s.data.vocab,
                      s.train, s.valid, s.test, 3, 1, 556);
  EXPECT_NE(record_fingerprint(a.trials[0]), record_fingerprint(c.trials[0]));
}

TEST(RunSearch, WorkerCountDoesNotChangeTheRecords) {
  SmallSearch s;
  auto serial = run_search(s.space, s.base_model, s.base_train, s.data.schema,
                           s.data.vocab, s.train, s.valid, s.test, 4, 1, 31);
  auto parallel = run_search(s.space, s.base_model, s.base_train, s.data.schema,
                             s.data.vocab, s.train, s.valid, s.test, 4, 3, 31);
  ASSERT_EQ(serial.trials.size(), parallel.trials.size());
  for (std::size_t i = 0; i < serial.trials.size(); ++i) {
    EXPECT_EQ(record_fingerprint(serial.trials[i]), record_fingerprint(parallel.trials[i]));
  }
  EXPECT_EQ(serial.best_id, parallel.best_id);
}

TEST(RunSearch, AllTrialsFailingRaisesASearchError) {
  SmallSearch s;
  // a single-class validation split makes AUC undefined in every trial
  std::vector<std::size_t> ones;
  for (std::size_t i = 0; i < s.valid.rows(); ++i) {
    if (s.valid.labels[i] == 1) ones.push_back(i);
  }
  ASSERT_GE(ones.size(), 2u);
  EncodedTable degenerate = take_rows(s.valid, ones);
  try {
    run_search(s.space, s.base_model, s.base_train, s.data.schema, s.data.vocab, s.train,
               degenerate, s.test, 2, 1, 40);
    FAIL() << "expected SearchError";
  } catch (const SearchError& e) {
    EXPECT_NE(std::string(e.what()).find("trial 0"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("trial 1"), std::string::npos);
  }
}

TEST(SearchSpaceJson, RoundTripsAndRejectsUnknownKeys) {
  SearchSpace s;
  s.learning_rate = {0.01, 0.2};
  s.embedding_dims = {8, 16};
  s.dnn_widths = {32, 64};
  s.max_dnn_depth = 3;
  s.fieldwise_multipliers = {1.0, 2.0};
  s.max_fieldwise_depth = 2;
  s.alpha = {0.2, 0.9};
  s.gamma = {2e-5, 9e-5};
  s.fixed_operations = std::vector<Operation>{Operation::LR, Operation::DNN};
  s.disable_field_wise = true;

  auto j = search_space_to_json(s);
  SearchSpace r = search_space_from_json(j);
  EXPECT_EQ(search_space_to_json(r).dump(), j.dump());
  EXPECT_EQ(r.learning_rate.first, 0.01);
  EXPECT_EQ(r.embedding_dims, (std::vector<std::size_t>{8, 16}));
  ASSERT_TRUE(r.fixed_operations.has_value());
  EXPECT_EQ(as_set(*r.fixed_operations), as_set({Operation::LR, Operation::DNN}));
  EXPECT_TRUE(r.disable_field_wise);

  j["typo"] = 1;
  EXPECT_THROW(search_space_from_json(j), ConfigError);

  nlohmann::json bad = search_space_to_json(SearchSpace{});
  bad["learning_rate"] = {0.5, 0.05};  // inverted range
  EXPECT_THROW(search_space_from_json(bad).validate(), ConfigError);
}
