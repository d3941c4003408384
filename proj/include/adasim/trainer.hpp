#pragma once

// Self-distillation pretraining with adaptive neighbor bootstrapping: epoch
// loop, warmup gating, pair-mode dispatch, cache maintenance, teacher updates
// and per-epoch metrics.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adasim/data.hpp"
#include "adasim/losses.hpp"
#include "adasim/numcore.hpp"
#include "adasim/simcache.hpp"

namespace adasim {

enum class PairMode : std::uint8_t { kStandard, kNnBootstrap, kAdaSim, kSupervisedOracle };
enum class LossKind : std::uint8_t { kSimSiam, kDino, kInfoNce };
enum class CacheSource : std::uint8_t { kProjection, kPredictor };

const char* to_string(PairMode m);
const char* to_string(LossKind l);
const char* to_string(CacheSource s);
PairMode pair_mode_from_string(const std::string& s);
LossKind loss_kind_from_string(const std::string& s);
CacheSource cache_source_from_string(const std::string& s);

struct TrainConfig {
  PairMode pair_mode = PairMode::kAdaSim;
  LossKind loss = LossKind::kSimSiam;

  // Adaptive bootstrapping.
  double tau = 0.2;
  int window = 10;
  int topk = 10;
  int shards = 1;
  bool normalize_cache = true;
  CacheSource cache_source = CacheSource::kProjection;

  // Schedule.
  int epochs = 200;
  int batch_size = 256;
  double lr = 0.05;
  int lr_warmup_epochs = 0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double ema = 0.996;
  double oracle_p_final = 0.5;
  bool oracle_exclude_self = true;
  std::uint64_t seed = 0;

  // Architecture: encoder D -> hidden... -> embed_dim; predictor embed ->
  // predictor_hidden -> embed (SimSiam only).
  std::vector<int> hidden = {128};
  int embed_dim = 32;
  int predictor_hidden = 32;

  // Losses.
  bool symmetric = true;
  double dino_student_temp = 0.1;
  double dino_teacher_temp = 0.07;
  double dino_warmup_teacher_temp = 0.04;
  int dino_warmup_epochs = 30;
  bool dino_centering = true;
  double dino_center_momentum = 0.9;
  double infonce_temp = 0.2;

  AugmentationSpec augmentation{0.7, 0.5, 0.8, 1.2};

  int probe_size = 512;
  bool record_decisions = false;

  /// Throws kConfig naming the offending field.
  void validate() const;
};

/// Probability of a standard pair under the supervised oracle: linear from 1
/// at epoch 0 to p_final at epoch (epochs - 1).
struct OracleSchedule {
  double p_final = 0.5;
  int epochs = 1;
};

double oracle_probability(const OracleSchedule& schedule, int epoch);

/// Member lists per class for supervised pairing.
class ClassIndex {
 public:
  ClassIndex() = default;
  ClassIndex(const std::vector<int>& labels, int class_count);
  const std::vector<int>& members(int cls) const { return members_[static_cast<std::size_t>(cls)]; }

 private:
  std::vector<std::vector<int>> members_;
};

/// Uniform same-class partner of i. With exclude_self and a singleton class
/// the result is i itself.
int supervised_pair(const ClassIndex& classes, const std::vector<int>& labels, int i, Rng& rng,
                    bool exclude_self = true);
int supervised_pair(const std::vector<int>& labels, int i, Rng& rng, bool exclude_self = true);

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double bootstrap_ratio = 0.0;
  std::optional<double> nn_top1;
  std::optional<double> second_nn_top1;
  double embed_std = 0.0;
  double wall_clock = 0.0;
};

/// Ratio / label-agreement part of the epoch metrics.
struct DecisionStats {
  double bootstrap_ratio = 0.0;
  std::optional<double> nn_top1;
  std::optional<double> second_nn_top1;
};

/// bootstrap_ratio counts bootstrapped decisions whose partner is another
/// image. nn_top1 compares label(i) with label(argmax p_win); second_nn_top1
/// with the best support element other than the chosen partner. Items without
/// a distribution are skipped; unlabeled data yields absent label metrics.
DecisionStats compute_epoch_metrics(const std::vector<int>& items,
                                    const std::vector<PairDecision>& decisions,
                                    const std::vector<int>& labels,
                                    const std::vector<std::optional<WindowedDistribution>>& dists);

/// Deterministic epoch-metrics line with stable key order (wall clock is
/// excluded so that reruns are byte-identical).
std::string to_json_line(const EpochMetrics& m);
EpochMetrics epoch_metrics_from_json(const std::string& line);

struct EncoderPair {
  MlpEncoder student;
  std::optional<MlpEncoder> predictor;  // SimSiam
  std::optional<MlpEncoder> teacher;    // EMA teacher (DINO); otherwise shared weights

  const MlpEncoder& teacher_view() const { return teacher ? *teacher : student; }
  /// Encoder used for frozen-feature evaluation.
  const MlpEncoder& eval_encoder() const { return teacher_view(); }
};

EncoderPair make_encoders(const TrainConfig& cfg, int input_dim);

/// Per-item pair selection against a cache snapshot. The cache is not
/// modified; the item's window receives this epoch's similarity row.
class PairSelector {
 public:
  PairSelector(const TrainConfig& cfg, const std::vector<int>* labels);

  struct Outcome {
    PairDecision decision;
    std::optional<WindowedDistribution> dist;
  };

  Outcome step(const FeatureCache& snapshot, SimWindow& window, int item, const Vector& query,
               int epoch) const;

 private:
  const TrainConfig& cfg_;
  const std::vector<int>* labels_;
  ClassIndex classes_;
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(int epoch, const EncoderPair&)> on_checkpoint;
  int checkpoint_every = 0;  // 0: only the final epoch triggers on_checkpoint
};

struct TrainResult {
  EncoderPair encoders;
  std::vector<EpochMetrics> metrics;
  CacheSnapshot cache;
  bool collapsed = false;
  std::string collapse_report;
  // decisions[e-1] lists (item, decision) in processing order; filled when
  // record_decisions is set.
  std::vector<std::vector<std::pair<int, PairDecision>>> decisions;
};

TrainResult pretrain(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks = {});

/// Mean per-dimension standard deviation of the L2-normalized encoder outputs.
double embedding_std(const MlpEncoder& enc, const Matrix& probe);

}  // namespace adasim
