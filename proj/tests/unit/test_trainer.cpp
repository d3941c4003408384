#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "adasim/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace adasim;

namespace {

TrainConfig small_config(PairMode mode = PairMode::kAdaSim, LossKind loss = LossKind::kSimSiam) {
  TrainConfig c;
  c.pair_mode = mode;
  c.loss = loss;
  c.epochs = 8;
  c.window = 2;
  c.topk = 4;
  c.batch_size = 16;
  c.hidden = {16};
  c.embed_dim = 8;
  c.predictor_hidden = 8;
  c.probe_size = 32;
  c.seed = 3;
  c.record_decisions = true;
  return c;
}

Dataset small_blobs(std::uint64_t seed = 0) { return make_blobs(4, 16, 8, 1.0, 2.0, seed); }

std::vector<double> all_params(const EncoderPair& p) {
  auto v = oracle::flatten(p.student);
  if (p.predictor) {
    const auto q = oracle::flatten(*p.predictor);
    v.insert(v.end(), q.begin(), q.end());
  }
  if (p.teacher) {
    const auto t = oracle::flatten(*p.teacher);
    v.insert(v.end(), t.begin(), t.end());
  }
  return v;
}

WindowedDistribution dist_of(std::vector<int> support, std::vector<double> metric) {
  return windowed_distribution(std::move(support), std::move(metric), 0.2);
}

}  // namespace

// --- schedule and pairing helpers ------------------------------------------

TEST(OracleSchedule, EndpointsAndMidpoint) {
  const OracleSchedule s{0.5, 11};
  EXPECT_EQ(oracle_probability(s, 0), 1.0);
  EXPECT_EQ(oracle_probability(s, 10), 0.5);
  EXPECT_DOUBLE_EQ(oracle_probability(s, 5), 0.75);
  EXPECT_EQ(oracle_probability({0.0, 2}, 1), 0.0);
}

TEST(OracleSchedule, ShortScheduleIsFinalValue) {
  EXPECT_EQ(oracle_probability({0.3, 1}, 0), 0.3);
  EXPECT_EQ(oracle_probability({0.3, 0}, 0), 0.3);
}

TEST(OracleSchedule, MonotoneAndClamped) {
  const OracleSchedule s{0.2, 37};
  double prev = 1.0;
  for (int e = 0; e < 37; ++e) {
    const double p = oracle_probability(s, e);
    EXPECT_LE(p, prev);
    EXPECT_GE(p, 0.2);
    EXPECT_LE(p, 1.0);
    prev = p;
  }
  EXPECT_ADASIM_ERROR(oracle_probability(s, 37), ErrorKind::kIndexRange);
  EXPECT_ADASIM_ERROR(oracle_probability({1.5, 10}, 0), ErrorKind::kConfig);
}

TEST(SupervisedPair, ClassOfTwoAlwaysGivesTheOther) {
  const std::vector<int> labels = {0, 1, 1, 0, 2};
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    EXPECT_EQ(supervised_pair(labels, 1, rng), 2);
    EXPECT_EQ(supervised_pair(labels, 3, rng), 0);
  }
}

TEST(SupervisedPair, SingletonFallsBackToSelf) {
  const std::vector<int> labels = {0, 1, 1, 0, 2};
  Rng rng(2);
  EXPECT_EQ(supervised_pair(labels, 4, rng), 4);
}

TEST(SupervisedPair, UniformOverClassChiSquare) {
  // Class 1 has ten members besides the query.
  std::vector<int> labels(30, 0);
  for (int i = 10; i < 21; ++i) labels[static_cast<std::size_t>(i)] = 1;
  const ClassIndex classes(labels, 2);
  Rng rng(3);
  const int n = 100000;
  std::map<int, int> counts;
  for (int t = 0; t < n; ++t) ++counts[supervised_pair(classes, labels, 15, rng)];
  EXPECT_EQ(counts.count(15), 0u);
  ASSERT_EQ(counts.size(), 10u);
  double chi2 = 0.0;
  const double expected = n / 10.0;
  for (const auto& [j, c] : counts) {
    EXPECT_EQ(labels[static_cast<std::size_t>(j)], 1);
    chi2 += (c - expected) * (c - expected) / expected;
  }
  // Upper 1% point of chi-square with 9 degrees of freedom.
  EXPECT_LT(chi2, 21.666);
}

TEST(SupervisedPair, IncludingSelfCoversWholeClass) {
  const std::vector<int> labels = {0, 0, 0};
  Rng rng(4);
  std::map<int, int> counts;
  for (int t = 0; t < 3000; ++t) ++counts[supervised_pair(labels, 1, rng, false)];
  EXPECT_EQ(counts.size(), 3u);
}

// --- epoch metrics ---------------------------------------------------------

TEST(EpochMetrics, AllStandardIsZeroRatio) {
  const std::vector<int> items = {0, 1, 2};
  const std::vector<PairDecision> d = {PairDecision::standard(0), PairDecision::standard(1),
                                       PairDecision::standard(2)};
  const auto s = compute_epoch_metrics(items, d, {}, {std::nullopt, std::nullopt, std::nullopt});
  EXPECT_EQ(s.bootstrap_ratio, 0.0);
  EXPECT_FALSE(s.nn_top1.has_value());
}

TEST(EpochMetrics, SelfDrawsDoNotCountAsBootstrapped) {
  const std::vector<int> items = {0, 1, 2, 3};
  const std::vector<PairDecision> d = {{PairKind::kBootstrapped, 0, true},
                                       {PairKind::kBootstrapped, 2, true},
                                       PairDecision::standard(2),
                                       {PairKind::kBootstrapped, 3, true}};
  const auto s = compute_epoch_metrics(items, d, {}, {std::nullopt, std::nullopt, std::nullopt, std::nullopt});
  EXPECT_EQ(s.bootstrap_ratio, 0.25);
}

TEST(EpochMetrics, HandCountedNeighborAgreement) {
  // labels: 0 0 1 1 1
  const std::vector<int> labels = {0, 0, 1, 1, 1};
  const std::vector<int> items = {0, 2, 4};
  // item 0: argmax 1 (label 0: hit); partner 0 chosen, second best is 1 (hit).
  // item 2: argmax 0 (label 0: miss); standard, so partner 2; best other is 0 (miss).
  // item 4: argmax 4 (hit); partner 3 drawn, best other than 3 is 4 (hit).
  const std::vector<std::optional<WindowedDistribution>> dists = {
      dist_of({0, 1, 2}, {0.8, 0.9, 0.1}), dist_of({0, 3}, {0.9, 0.5}),
      dist_of({3, 4}, {0.6, 0.95})};
  const std::vector<PairDecision> d = {{PairKind::kBootstrapped, 0, true}, PairDecision::standard(2),
                                       {PairKind::kBootstrapped, 3, true}};
  const auto s = compute_epoch_metrics(items, d, labels, dists);
  EXPECT_DOUBLE_EQ(*s.nn_top1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*s.second_nn_top1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.bootstrap_ratio, 1.0 / 3.0);
}

TEST(EpochMetrics, MisalignedInputsRejected) {
  EXPECT_ADASIM_ERROR(compute_epoch_metrics({0, 1}, {PairDecision::standard(0)}, {}, {std::nullopt}),
                      ErrorKind::kShape);
}

TEST(EpochMetrics, JsonLineRoundTripWithoutWallClock) {
  EpochMetrics m;
  m.epoch = 12;
  m.mean_loss = -0.75;
  m.bootstrap_ratio = 0.125;
  m.nn_top1 = 0.5;
  m.embed_std = 0.02;
  m.wall_clock = 3.5;
  const std::string line = to_json_line(m);
  EXPECT_EQ(line.find("wall_clock"), std::string::npos);
  EXPECT_EQ(line,
            R"({"epoch":12,"mean_loss":-0.75,"bootstrap_ratio":0.125,"nn_top1":0.5,"second_nn_top1":null,"embed_std":0.02})");
  const EpochMetrics back = epoch_metrics_from_json(line);
  EXPECT_EQ(back.epoch, 12);
  EXPECT_EQ(back.mean_loss, -0.75);
  EXPECT_EQ(back.nn_top1, 0.5);
  EXPECT_FALSE(back.second_nn_top1.has_value());
  EXPECT_ADASIM_ERROR(epoch_metrics_from_json("{not json"), ErrorKind::kParse);
}

// --- config ----------------------------------------------------------------

TEST(TrainConfigValidate, NamesTheField) {
  TrainConfig c;
  c.tau = -1.0;
  try {
    c.validate();
    FAIL() << "expected a config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("tau"), std::string::npos);
  }
  TrainConfig d;
  d.loss = LossKind::kInfoNce;
  d.batch_size = 1;
  EXPECT_ADASIM_ERROR(d.validate(), ErrorKind::kConfig);
  TrainConfig w;
  w.window = 0;
  EXPECT_ADASIM_ERROR(w.validate(), ErrorKind::kConfig);
  TrainConfig o;
  o.oracle_p_final = 1.1;
  EXPECT_ADASIM_ERROR(o.validate(), ErrorKind::kConfig);
}

TEST(TrainConfigValidate, ModeNamesRoundTrip) {
  for (PairMode m : {PairMode::kStandard, PairMode::kNnBootstrap, PairMode::kAdaSim, PairMode::kSupervisedOracle})
    EXPECT_EQ(pair_mode_from_string(to_string(m)), m);
  for (LossKind l : {LossKind::kSimSiam, LossKind::kDino, LossKind::kInfoNce})
    EXPECT_EQ(loss_kind_from_string(to_string(l)), l);
  EXPECT_EQ(pair_mode_from_string("nn"), PairMode::kNnBootstrap);
  EXPECT_EQ(pair_mode_from_string("oracle"), PairMode::kSupervisedOracle);
  EXPECT_ADASIM_ERROR(pair_mode_from_string("bogus"), ErrorKind::kConfig);
}

// --- pair selector ---------------------------------------------------------

TEST(PairSelector, SnapshotIsReadOnlyAndOrderIndependent) {
  TrainConfig cfg = small_config();
  cfg.window = 1;
  std::mt19937_64 g(5);
  FeatureCache cache(20, 4);
  for (int i = 0; i < 20; ++i) cache.update(i, testutil::random_vector(4, g));
  const Matrix before = cache.entries();
  std::vector<Vector> queries;
  for (int i = 0; i < 20; ++i) queries.push_back(testutil::random_vector(4, g));
  const PairSelector sel(cfg, nullptr);

  std::vector<SimWindow> fwd(20, SimWindow(1)), rev(20, SimWindow(1));
  std::vector<PairDecision> a(20), b(20);
  for (int i = 0; i < 20; ++i) a[static_cast<std::size_t>(i)] = sel.step(cache, fwd[static_cast<std::size_t>(i)], i, queries[static_cast<std::size_t>(i)], 2).decision;
  for (int i = 19; i >= 0; --i) b[static_cast<std::size_t>(i)] = sel.step(cache, rev[static_cast<std::size_t>(i)], i, queries[static_cast<std::size_t>(i)], 2).decision;
  EXPECT_EQ(a, b);
  EXPECT_EQ(cache.entries(), before);
}

TEST(PairSelector, WarmupEpochsAreStandard) {
  TrainConfig cfg = small_config(PairMode::kNnBootstrap);
  cfg.window = 3;
  FeatureCache cache(4, 2);
  cache.update(0, Vector::Ones(2));
  const PairSelector sel(cfg, nullptr);
  SimWindow win(3);
  for (int e = 1; e <= 3; ++e) {
    EXPECT_EQ(sel.step(cache, win, 1, Vector::Ones(2), e).decision, PairDecision::standard(1));
  }
  const auto d = sel.step(cache, win, 1, Vector::Ones(2), 4).decision;
  EXPECT_EQ(d.kind, PairKind::kBootstrapped);
  EXPECT_EQ(d.partner, 0);
}

TEST(PairSelector, OracleNeedsLabels) {
  EXPECT_ADASIM_ERROR(PairSelector(small_config(PairMode::kSupervisedOracle), nullptr), ErrorKind::kConfig);
}

// --- end-to-end pretraining ------------------------------------------------

TEST(Pretrain, TinyRunIsDeterministic) {
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.window = 1;
  const Dataset data = make_blobs(2, 2, 3, 1.0, 1.0, 0);
  const TrainResult a = pretrain(cfg, data);
  const TrainResult b = pretrain(cfg, data);
  EXPECT_EQ(all_params(a.encoders), all_params(b.encoders));
  EXPECT_EQ(a.cache.cache.entries(), b.cache.cache.entries());
}

TEST(Pretrain, SameSeedSameMetricsDifferentSeedDiffers) {
  TrainConfig cfg = small_config();
  const Dataset data = small_blobs();
  const TrainResult a = pretrain(cfg, data);
  const TrainResult b = pretrain(cfg, data);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t e = 0; e < a.metrics.size(); ++e) EXPECT_EQ(to_json_line(a.metrics[e]), to_json_line(b.metrics[e]));
  cfg.seed = 4;
  const TrainResult c = pretrain(cfg, data);
  EXPECT_NE(all_params(a.encoders), all_params(c.encoders));
}

TEST(Pretrain, StandardModeNeverBootstraps) {
  const TrainResult r = pretrain(small_config(PairMode::kStandard), small_blobs());
  ASSERT_EQ(r.metrics.size(), 8u);
  for (const auto& m : r.metrics) EXPECT_EQ(m.bootstrap_ratio, 0.0);
  for (const auto& epoch : r.decisions)
    for (const auto& [i, d] : epoch) EXPECT_EQ(d, PairDecision::standard(i));
}

TEST(Pretrain, ZeroTemperatureAdaSimMatchesStandard) {
  TrainConfig ada = small_config(PairMode::kAdaSim);
  ada.tau = 0.0;
  TrainConfig std_cfg = small_config(PairMode::kStandard);
  std_cfg.tau = 0.0;
  const Dataset data = small_blobs();
  const TrainResult a = pretrain(ada, data);
  const TrainResult s = pretrain(std_cfg, data);
  for (const auto& m : a.metrics) EXPECT_EQ(m.bootstrap_ratio, 0.0);
  ASSERT_EQ(a.decisions.size(), s.decisions.size());
  for (std::size_t e = 0; e < a.decisions.size(); ++e) {
    ASSERT_EQ(a.decisions[e].size(), s.decisions[e].size());
    for (std::size_t k = 0; k < a.decisions[e].size(); ++k) {
      EXPECT_EQ(a.decisions[e][k].first, s.decisions[e][k].first);
      EXPECT_EQ(a.decisions[e][k].second.partner, s.decisions[e][k].second.partner);
    }
  }
  EXPECT_EQ(all_params(a.encoders), all_params(s.encoders));
}

TEST(Pretrain, NoBootstrapBeforeWindowFills) {
  for (PairMode mode : {PairMode::kAdaSim, PairMode::kNnBootstrap, PairMode::kSupervisedOracle}) {
    TrainConfig cfg = small_config(mode);
    cfg.window = 3;
    cfg.tau = 1.0;
    cfg.oracle_p_final = 0.0;
    const TrainResult r = pretrain(cfg, small_blobs());
    for (std::size_t e = 0; e < r.decisions.size(); ++e) {
      const int epoch = static_cast<int>(e) + 1;
      for (const auto& [i, d] : r.decisions[e]) {
        if (epoch <= cfg.window) {
          EXPECT_EQ(d.kind, PairKind::kStandard) << to_string(mode) << " epoch " << epoch;
        }
      }
      if (epoch <= cfg.window) EXPECT_EQ(r.metrics[e].bootstrap_ratio, 0.0);
    }
  }
}

TEST(Pretrain, NnModeAlwaysPairsWithAnotherImage) {
  const TrainResult r = pretrain(small_config(PairMode::kNnBootstrap), small_blobs());
  for (std::size_t e = 2; e < r.decisions.size(); ++e) {
    for (const auto& [i, d] : r.decisions[e]) {
      EXPECT_EQ(d.kind, PairKind::kBootstrapped);
      EXPECT_NE(d.partner, i);
      EXPECT_TRUE(d.gate_passed);
    }
    EXPECT_EQ(r.metrics[e].bootstrap_ratio, 1.0);
  }
}

TEST(Pretrain, OracleModePairsWithinClass) {
  TrainConfig cfg = small_config(PairMode::kSupervisedOracle);
  cfg.oracle_p_final = 0.0;
  const Dataset data = small_blobs();
  const TrainResult r = pretrain(cfg, data);
  int boot = 0;
  for (const auto& epoch : r.decisions)
    for (const auto& [i, d] : epoch)
      if (d.kind == PairKind::kBootstrapped) {
        ++boot;
        EXPECT_EQ(data.labels[static_cast<std::size_t>(d.partner)], data.labels[static_cast<std::size_t>(i)]);
      }
  EXPECT_GT(boot, 0);
  EXPECT_GT(r.metrics.back().bootstrap_ratio, 0.8);
}

TEST(Pretrain, AdaSimBootstrappedPartnersComeFromTheSupport) {
  TrainConfig cfg = small_config();
  cfg.tau = 5.0;
  const TrainResult r = pretrain(cfg, small_blobs());
  int boot = 0;
  for (const auto& epoch : r.decisions)
    for (const auto& [i, d] : epoch)
      if (d.kind == PairKind::kBootstrapped) {
        ++boot;
        EXPECT_TRUE(d.gate_passed);
      }
  EXPECT_GT(boot, 0);
  for (const auto& m : r.metrics) {
    EXPECT_GE(m.bootstrap_ratio, 0.0);
    EXPECT_LE(m.bootstrap_ratio, 1.0);
    if (m.nn_top1) {
      EXPECT_GE(*m.nn_top1, 0.0);
      EXPECT_LE(*m.nn_top1, 1.0);
    }
  }
}

TEST(Pretrain, UnlabeledDataHasAbsentLabelMetrics) {
  Dataset data = small_blobs();
  data.labels.clear();
  data.class_count = 0;
  const TrainResult r = pretrain(small_config(), data);
  for (const auto& m : r.metrics) {
    EXPECT_FALSE(m.nn_top1.has_value());
    EXPECT_FALSE(m.second_nn_top1.has_value());
  }
}

TEST(Pretrain, AllLossesStayFinite) {
  for (LossKind loss : {LossKind::kSimSiam, LossKind::kDino, LossKind::kInfoNce}) {
    const TrainResult r = pretrain(small_config(PairMode::kAdaSim, loss), small_blobs());
    EXPECT_FALSE(r.collapsed) << to_string(loss);
    for (const auto& m : r.metrics) {
      EXPECT_TRUE(std::isfinite(m.mean_loss)) << to_string(loss);
      EXPECT_TRUE(std::isfinite(m.embed_std));
    }
  }
}

TEST(Pretrain, DinoTeacherIsMovingAverage) {
  const TrainResult r = pretrain(small_config(PairMode::kStandard, LossKind::kDino), small_blobs());
  ASSERT_TRUE(r.encoders.teacher.has_value());
  EXPECT_FALSE(r.encoders.predictor.has_value());
  EXPECT_NE(oracle::flatten(*r.encoders.teacher), oracle::flatten(r.encoders.student));
  const EncoderPair init = make_encoders(small_config(PairMode::kStandard, LossKind::kDino), 8);
  EXPECT_EQ(oracle::flatten(*init.teacher), oracle::flatten(init.student));
}

TEST(Pretrain, CacheHoldsEveryItemNormalized) {
  const TrainResult r = pretrain(small_config(), small_blobs());
  EXPECT_EQ(r.cache.cache.initialized_count(), 64);
  EXPECT_EQ(r.cache.epoch, 8);
  for (int i = 0; i < 64; ++i) EXPECT_NEAR(r.cache.cache.row(i).norm(), 1.0, 1e-6);
  for (const auto& w : r.cache.windows) EXPECT_TRUE(w.filled());
}

TEST(Pretrain, SingleShardMatchesUnsharded) {
  TrainConfig cfg = small_config(PairMode::kNnBootstrap);
  const TrainResult a = pretrain(cfg, small_blobs());
  cfg.shards = 1;
  const TrainResult b = pretrain(cfg, small_blobs());
  EXPECT_EQ(all_params(a.encoders), all_params(b.encoders));
}

TEST(Pretrain, TwoShardPartnersStayInShard) {
  for (PairMode mode : {PairMode::kNnBootstrap, PairMode::kAdaSim}) {
    TrainConfig cfg = small_config(mode);
    cfg.shards = 2;
    cfg.tau = 2.0;
    const TrainResult r = pretrain(cfg, small_blobs());
    const ShardMap map = ShardMap::contiguous(64, 2);
    for (const auto& epoch : r.decisions)
      for (const auto& [i, d] : epoch) EXPECT_EQ(map.shard_of(d.partner), map.shard_of(i));
    for (int i = 0; i < 64; ++i)
      for (const auto& row : r.cache.windows[static_cast<std::size_t>(i)].rows())
        for (int j : row.indices) EXPECT_EQ(map.shard_of(j), map.shard_of(i));
  }
}

TEST(Pretrain, DivergenceIsReportedAsCollapse) {
  TrainConfig cfg = small_config(PairMode::kStandard, LossKind::kInfoNce);
  cfg.lr = 1e300;
  cfg.momentum = 0.0;
  const TrainResult r = pretrain(cfg, small_blobs());
  EXPECT_TRUE(r.collapsed);
  EXPECT_NE(r.collapse_report.find("diverged"), std::string::npos);
  EXPECT_LT(r.metrics.size(), 8u);
}

TEST(Pretrain, HooksFireEveryEpochAndAtCheckpoints) {
  TrainConfig cfg = small_config();
  TrainHooks hooks;
  std::vector<int> seen, ckpts;
  hooks.on_epoch = [&](const EpochMetrics& m) { seen.push_back(m.epoch); };
  hooks.on_checkpoint = [&](int e, const EncoderPair&) { ckpts.push_back(e); };
  hooks.checkpoint_every = 3;
  pretrain(cfg, small_blobs(), hooks);
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(ckpts, (std::vector<int>{3, 6, 8}));
}

TEST(Pretrain, RejectsBadInputs) {
  TrainConfig cfg = small_config();
  cfg.shards = 1000;
  EXPECT_ADASIM_ERROR(pretrain(cfg, small_blobs()), ErrorKind::kConfig);
  Dataset empty;
  empty.items = Matrix(8, 0);
  EXPECT_ADASIM_ERROR(pretrain(small_config(), empty), ErrorKind::kInsufficientData);
}

TEST(EmbeddingStd, ConstantEncoderIsZero) {
  MlpEncoder enc({DenseLayer{Matrix::Zero(3, 4), Vector::Ones(3), Activation::kIdentity}});
  std::mt19937_64 g(1);
  EXPECT_NEAR(embedding_std(enc, testutil::random_matrix(4, 10, g)), 0.0, 1e-12);
  EXPECT_GT(embedding_std(MlpEncoder::identity(4), testutil::random_matrix(4, 10, g)), 0.1);
}
