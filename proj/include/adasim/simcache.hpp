#pragma once

// Dataset-sized feature cache, per-epoch top-K similarity rows, windowed
// averaging over the last w epochs, temperature softmax over the restricted
// support, the adaptive positive-pair gate, nearest-neighbor lookup, and
// shard partitioning of the cache.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adasim/numcore.hpp"
#include "adasim/rng.hpp"

namespace adasim {

/// Partition of [0, N) into disjoint shards.
class ShardMap {
 public:
  ShardMap() = default;
  ShardMap(std::vector<std::vector<int>> shards, int n_items);

  /// n_shards balanced contiguous blocks.
  static ShardMap contiguous(int n_items, int n_shards);
  /// Round-robin assignment i -> i % n_shards.
  static ShardMap strided(int n_items, int n_shards);

  int shard_of(int item) const;
  const std::vector<int>& members(int shard) const;
  int num_shards() const { return static_cast<int>(shards_.size()); }
  int num_items() const { return static_cast<int>(owner_.size()); }

 private:
  std::vector<std::vector<int>> shards_;  // members sorted ascending
  std::vector<int> owner_;
};

class FeatureCache {
 public:
  FeatureCache() = default;
  FeatureCache(int n_items, int dim, bool normalize_on_insert = true);

  /// Replaces row i (L2-normalized when the policy is on) and marks it
  /// initialized. Other rows are untouched.
  void update(int i, const Vector& z);

  Vector row(int i) const;
  bool initialized(int i) const;
  int size() const { return static_cast<int>(entries_.rows()); }
  int dim() const { return static_cast<int>(entries_.cols()); }
  int initialized_count() const { return initialized_count_; }
  bool normalize_on_insert() const { return normalize_; }

  // N x d, row i is item i. Column-major so that a column sweep over all
  // items is contiguous.
  const Matrix& entries() const { return entries_; }
  const std::vector<std::uint8_t>& initialized_mask() const { return mask_; }

  void set_shard_map(ShardMap map);
  const std::optional<ShardMap>& shard_map() const { return shards_; }

  // Raw restore used by the dump loader.
  void restore(Matrix entries, std::vector<std::uint8_t> mask);

 private:
  Matrix entries_;
  std::vector<std::uint8_t> mask_;
  int initialized_count_ = 0;
  bool normalize_ = true;
  std::optional<ShardMap> shards_;
};

/// Top-K similarities of one query against the cache for one epoch.
struct SparseSimRow {
  int epoch = 0;
  std::vector<int> indices;    // distinct, ordered by descending value
  std::vector<double> values;  // z . Z_j
};

/// Dot products z . Z_j for every cache row, accumulated in a fixed order
/// (sequential over the embedding dimension) so batched and single-query
/// scans agree bit for bit.
Vector similarity_scan(const FeatureCache& cache, const Vector& z);

/// K largest dot products over initialized rows (fewer if fewer exist),
/// sorted descending, ties to the lower index.
SparseSimRow topk_similarities(const FeatureCache& cache, const Vector& z, int k, int epoch);

/// Same, restricted to the given candidate rows (ascending order expected).
SparseSimRow topk_similarities(const FeatureCache& cache, const Vector& z, int k, int epoch,
                               std::span<const int> candidates);

/// Top-K over the shard that owns `item`. Requires a shard map on the cache.
SparseSimRow topk_similarities_in_shard(const FeatureCache& cache, const Vector& z, int k,
                                        int epoch, int item);

int shard_route(const ShardMap& map, int item);

/// FIFO memory bank of (source index, embedding).
class NNQueue {
 public:
  explicit NNQueue(std::size_t capacity);

  void push(int source, Vector z);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  int source(std::size_t pos) const { return entries_[pos].first; }
  const Vector& embedding(std::size_t pos) const { return entries_[pos].second; }

 private:
  std::size_t capacity_;
  std::deque<std::pair<int, Vector>> entries_;
};

/// argmin_j ||z - Z_j||_2 over initialized cache rows, skipping
/// `exclude_source`. Ties go to the lower index.
int nn_lookup(const FeatureCache& cache, const Vector& z, std::optional<int> exclude_source = {});

/// Cache lookup restricted to candidate rows.
int nn_lookup(const FeatureCache& cache, const Vector& z, std::optional<int> exclude_source,
              std::span<const int> candidates);

/// Queue lookup; returns the queue position (0 = oldest).
int nn_lookup(const NNQueue& queue, const Vector& z, std::optional<int> exclude_source = {});

/// Ring buffer of the last `capacity` similarity rows of one image.
class SimWindow {
 public:
  SimWindow() = default;
  explicit SimWindow(int capacity);

  /// Appends a row; the oldest row is evicted when full. Epochs must
  /// strictly increase.
  void push(SparseSimRow row);

  bool filled() const { return static_cast<int>(rows_.size()) == capacity_; }
  int capacity() const { return capacity_; }
  std::size_t size() const { return rows_.size(); }
  const std::deque<SparseSimRow>& rows() const { return rows_; }
  std::optional<int> last_epoch() const;

 private:
  int capacity_ = 1;
  std::deque<SparseSimRow> rows_;
};

struct WindowedMetric {
  std::vector<int> support;    // union of per-epoch supports, ascending index
  std::vector<double> metric;  // (1/w) * sum over epochs of the stored value, 0 when absent
};

/// Windowed similarity metric over the union support. Throws kWarmup when the
/// window is not yet filled.
WindowedMetric windowed_metric(const SimWindow& window);

struct WindowedDistribution {
  std::vector<int> support;
  std::vector<double> metric;
  std::vector<double> probs;
  double temperature = 0.0;
  std::size_t argmax_pos = 0;  // position of the max metric, lowest index on ties

  int argmax_index() const { return support[argmax_pos]; }
  std::optional<std::size_t> position_of(int index) const;
};

/// softmax(metric / tau) over the support; tau == 0 gives a one-hot on the
/// argmax.
WindowedDistribution windowed_distribution(std::vector<int> support, std::vector<double> metric,
                                           double tau);
WindowedDistribution windowed_distribution(const WindowedMetric& m, double tau);

/// Single-epoch distribution softmax(m^(e)/tau) over the row's support, laid
/// out in ascending index order like the windowed form.
WindowedDistribution epoch_distribution(const SparseSimRow& row, double tau);

/// Inverse-CDF draw from the distribution; consumes exactly one uniform.
int sample_index(const WindowedDistribution& dist, Rng& rng);

enum class PairKind : std::uint8_t { kStandard = 0, kBootstrapped = 1 };

struct PairDecision {
  PairKind kind = PairKind::kStandard;
  int partner = 0;
  bool gate_passed = false;

  static PairDecision standard(int i) { return {PairKind::kStandard, i, false}; }
  bool operator==(const PairDecision&) const = default;
};

/// Adaptive gate: when the query is the argmax of its own distribution, draw
/// the partner from it; otherwise fall back to the standard pair without
/// touching the rng.
PairDecision select_pair(const WindowedDistribution& dist, int self, Rng& rng);

// ---------------------------------------------------------------------------
// Persistence

/// Cache, per-image windows, and the scalar state needed to rebuild p_win.
struct CacheSnapshot {
  FeatureCache cache;
  std::vector<SimWindow> windows;  // empty or one per item
  int topk = 0;
  int window = 0;
  int epoch = 0;
};

inline constexpr char kCacheMagic[] = "ADASIM-CACHE-1";

void save_cache(const std::filesystem::path& path, const CacheSnapshot& snap);
CacheSnapshot load_cache(const std::filesystem::path& path);

/// One neighbor-dump record: support ranked by descending probability, ties
/// to the lower index.
struct NeighborRecord {
  int query = 0;
  std::vector<std::pair<int, double>> ranked;
};

NeighborRecord rank_neighbors(const WindowedDistribution& dist, int query);

/// {"query_index": i, "support": [[j, p], ...]} on a single line.
std::string to_json_line(const NeighborRecord& rec);

}  // namespace adasim
