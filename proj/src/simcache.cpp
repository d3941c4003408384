#include "adasim/simcache.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "adasim/error.hpp"
#include "binio.hpp"

namespace adasim {

// ---------------------------------------------------------------------------
// ShardMap

ShardMap::ShardMap(std::vector<std::vector<int>> shards, int n_items)
    : shards_(std::move(shards)), owner_(static_cast<std::size_t>(n_items), -1) {
  require(n_items > 0, ErrorKind::kPartition, "shard map over an empty item set");
  require(!shards_.empty(), ErrorKind::kPartition, "shard map needs at least one shard");
  for (std::size_t s = 0; s < shards_.size(); ++s) {
    auto& m = shards_[s];
    std::sort(m.begin(), m.end());
    for (int i : m) {
      require(i >= 0 && i < n_items, ErrorKind::kPartition,
              "shard member " + std::to_string(i) + " outside [0, N)");
      require(owner_[static_cast<std::size_t>(i)] < 0, ErrorKind::kPartition,
              "item " + std::to_string(i) + " assigned to more than one shard");
      owner_[static_cast<std::size_t>(i)] = static_cast<int>(s);
    }
  }
  for (int i = 0; i < n_items; ++i) {
    require(owner_[static_cast<std::size_t>(i)] >= 0, ErrorKind::kPartition,
            "item " + std::to_string(i) + " not covered by any shard");
  }
}

ShardMap ShardMap::contiguous(int n_items, int n_shards) {
  require(n_shards >= 1 && n_shards <= n_items, ErrorKind::kConfig,
          "shard count must be in [1, N]");
  std::vector<std::vector<int>> shards(static_cast<std::size_t>(n_shards));
  for (int i = 0; i < n_items; ++i) {
    const auto s = static_cast<std::size_t>(static_cast<long long>(i) * n_shards / n_items);
    shards[s].push_back(i);
  }
  return ShardMap(std::move(shards), n_items);
}

ShardMap ShardMap::strided(int n_items, int n_shards) {
  require(n_shards >= 1 && n_shards <= n_items, ErrorKind::kConfig,
          "shard count must be in [1, N]");
  std::vector<std::vector<int>> shards(static_cast<std::size_t>(n_shards));
  for (int i = 0; i < n_items; ++i) shards[static_cast<std::size_t>(i % n_shards)].push_back(i);
  return ShardMap(std::move(shards), n_items);
}

int ShardMap::shard_of(int item) const {
  require(item >= 0 && item < num_items(), ErrorKind::kPartition,
          "item " + std::to_string(item) + " is not in any shard");
  return owner_[static_cast<std::size_t>(item)];
}

const std::vector<int>& ShardMap::members(int shard) const {
  require(shard >= 0 && shard < num_shards(), ErrorKind::kPartition, "unknown shard id");
  return shards_[static_cast<std::size_t>(shard)];
}

int shard_route(const ShardMap& map, int item) { return map.shard_of(item); }

// ---------------------------------------------------------------------------
// FeatureCache

FeatureCache::FeatureCache(int n_items, int dim, bool normalize_on_insert)
    : entries_(Matrix::Zero(n_items, dim)),
      mask_(static_cast<std::size_t>(n_items), 0),
      normalize_(normalize_on_insert) {
  require(n_items > 0 && dim > 0, ErrorKind::kConfig, "cache dimensions must be positive");
}

void FeatureCache::update(int i, const Vector& z) {
  require(i >= 0 && i < size(), ErrorKind::kIndexRange,
          "cache index " + std::to_string(i) + " outside [0, " + std::to_string(size()) + ")");
  require(z.size() == dim(), ErrorKind::kShape, "cache embedding dimension mismatch");
  require(z.allFinite(), ErrorKind::kDegenerateInput, "non-finite embedding inserted in cache");
  if (normalize_) {
    entries_.row(i) = l2_normalize(z).transpose();
  } else {
    entries_.row(i) = z.transpose();
  }
  auto& flag = mask_[static_cast<std::size_t>(i)];
  if (!flag) ++initialized_count_;
  flag = 1;
}

Vector FeatureCache::row(int i) const {
  require(i >= 0 && i < size(), ErrorKind::kIndexRange, "cache index out of range");
  return entries_.row(i).transpose();
}

bool FeatureCache::initialized(int i) const {
  require(i >= 0 && i < size(), ErrorKind::kIndexRange, "cache index out of range");
  return mask_[static_cast<std::size_t>(i)] != 0;
}

void FeatureCache::set_shard_map(ShardMap map) {
  require(map.num_items() == size(), ErrorKind::kPartition, "shard map does not cover the cache");
  shards_ = std::move(map);
}

void FeatureCache::restore(Matrix entries, std::vector<std::uint8_t> mask) {
  require(static_cast<std::size_t>(entries.rows()) == mask.size(), ErrorKind::kShape,
          "mask length does not match cache rows");
  entries_ = std::move(entries);
  mask_ = std::move(mask);
  initialized_count_ = static_cast<int>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Scans

Vector similarity_scan(const FeatureCache& cache, const Vector& z) {
  require(z.size() == cache.dim(), ErrorKind::kShape, "query dimension does not match cache");
  const Matrix& e = cache.entries();
  Vector s = e.col(0) * z[0];
  for (Eigen::Index k = 1; k < e.cols(); ++k) s.noalias() += e.col(k) * z[k];
  return s;
}

namespace {

// Bounded selection buffer ordered by (value desc, index asc).
class TopKBuffer {
 public:
  explicit TopKBuffer(std::size_t k) : k_(k) { items_.reserve(k + 1); }

  static bool better(double v, int i, double w, int j) { return v > w || (v == w && i < j); }

  void offer(double v, int i) {
    if (items_.size() == k_ && !better(v, i, items_.back().first, items_.back().second)) return;
    auto pos = std::find_if(items_.begin(), items_.end(),
                            [&](const auto& e) { return better(v, i, e.first, e.second); });
    items_.insert(pos, {v, i});
    if (items_.size() > k_) items_.pop_back();
  }

  SparseSimRow take(int epoch) && {
    SparseSimRow row;
    row.epoch = epoch;
    row.indices.reserve(items_.size());
    row.values.reserve(items_.size());
    for (const auto& [v, i] : items_) {
      row.indices.push_back(i);
      row.values.push_back(v);
    }
    return row;
  }

 private:
  std::size_t k_;
  std::vector<std::pair<double, int>> items_;
};

SparseSimRow select_topk(const FeatureCache& cache, const Vector& sims, int k, int epoch,
                         std::span<const int> candidates, bool all) {
  require(k >= 1, ErrorKind::kConfig, "K must be at least 1");
  require(cache.initialized_count() > 0, ErrorKind::kEmptyCache,
          "top-K query against a cache with no initialized rows");
  const auto& mask = cache.initialized_mask();
  TopKBuffer buf(static_cast<std::size_t>(k));
  if (all) {
    for (int j = 0; j < cache.size(); ++j)
      if (mask[static_cast<std::size_t>(j)]) buf.offer(sims[j], j);
  } else {
    for (int j : candidates) {
      require(j >= 0 && j < cache.size(), ErrorKind::kIndexRange, "candidate outside cache");
      if (mask[static_cast<std::size_t>(j)]) buf.offer(sims[j], j);
    }
  }
  return std::move(buf).take(epoch);
}

Vector squared_distance_scan(const FeatureCache& cache, const Vector& z) {
  require(z.size() == cache.dim(), ErrorKind::kShape, "query dimension does not match cache");
  const Matrix& e = cache.entries();
  Vector d2 = (e.col(0).array() - z[0]).square().matrix();
  for (Eigen::Index k = 1; k < e.cols(); ++k) d2.array() += (e.col(k).array() - z[k]).square();
  return d2;
}

int select_nearest(const FeatureCache& cache, const Vector& d2, std::optional<int> exclude,
                   std::span<const int> candidates, bool all) {
  const auto& mask = cache.initialized_mask();
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  auto consider = [&](int j) {
    if (!mask[static_cast<std::size_t>(j)]) return;
    if (exclude && *exclude == j) return;
    if (best < 0 || d2[j] < best_d || (d2[j] == best_d && j < best)) {
      best = j;
      best_d = d2[j];
    }
  };
  if (all) {
    for (int j = 0; j < cache.size(); ++j) consider(j);
  } else {
    for (int j : candidates) {
      require(j >= 0 && j < cache.size(), ErrorKind::kIndexRange, "candidate outside cache");
      consider(j);
    }
  }
  require(best >= 0, ErrorKind::kEmptyCandidate, "no candidate left for nearest-neighbor lookup");
  return best;
}

}  // namespace

SparseSimRow topk_similarities(const FeatureCache& cache, const Vector& z, int k, int epoch) {
  return select_topk(cache, similarity_scan(cache, z), k, epoch, {}, true);
}

SparseSimRow topk_similarities(const FeatureCache& cache, const Vector& z, int k, int epoch,
                               std::span<const int> candidates) {
  return select_topk(cache, similarity_scan(cache, z), k, epoch, candidates, false);
}

SparseSimRow topk_similarities_in_shard(const FeatureCache& cache, const Vector& z, int k,
                                        int epoch, int item) {
  require(cache.shard_map().has_value(), ErrorKind::kPartition, "cache has no shard map");
  const auto& map = *cache.shard_map();
  return topk_similarities(cache, z, k, epoch, map.members(shard_route(map, item)));
}

int nn_lookup(const FeatureCache& cache, const Vector& z, std::optional<int> exclude_source) {
  return select_nearest(cache, squared_distance_scan(cache, z), exclude_source, {}, true);
}

int nn_lookup(const FeatureCache& cache, const Vector& z, std::optional<int> exclude_source,
              std::span<const int> candidates) {
  return select_nearest(cache, squared_distance_scan(cache, z), exclude_source, candidates, false);
}

NNQueue::NNQueue(std::size_t capacity) : capacity_(capacity) {
  require(capacity > 0, ErrorKind::kConfig, "queue capacity must be positive");
}

void NNQueue::push(int source, Vector z) {
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.emplace_back(source, std::move(z));
}

int nn_lookup(const NNQueue& queue, const Vector& z, std::optional<int> exclude_source) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < queue.size(); ++p) {
    if (exclude_source && queue.source(p) == *exclude_source) continue;
    require(queue.embedding(p).size() == z.size(), ErrorKind::kShape, "queue entry dimension");
    const double d = (queue.embedding(p) - z).squaredNorm();
    if (best < 0 || d < best_d) {
      best = static_cast<int>(p);
      best_d = d;
    }
  }
  require(best >= 0, ErrorKind::kEmptyCandidate, "no candidate left for nearest-neighbor lookup");
  return best;
}

// ---------------------------------------------------------------------------
// Windows

SimWindow::SimWindow(int capacity) : capacity_(capacity) {
  require(capacity >= 1, ErrorKind::kConfig, "window size must be at least 1");
}

std::optional<int> SimWindow::last_epoch() const {
  if (rows_.empty()) return std::nullopt;
  return rows_.back().epoch;
}

void SimWindow::push(SparseSimRow row) {
  require(row.indices.size() == row.values.size(), ErrorKind::kShape,
          "similarity row indices/values length mismatch");
  if (!rows_.empty()) {
    require(row.epoch > rows_.back().epoch, ErrorKind::kOrdering,
            "epoch " + std::to_string(row.epoch) + " pushed after epoch " +
                std::to_string(rows_.back().epoch));
  }
  if (static_cast<int>(rows_.size()) == capacity_) rows_.pop_front();
  rows_.push_back(std::move(row));
}

WindowedMetric windowed_metric(const SimWindow& window) {
  require(window.filled(), ErrorKind::kWarmup,
          "window holds " + std::to_string(window.size()) + " of " +
              std::to_string(window.capacity()) + " rows");
  struct Entry {
    int index;
    int order;
    double value;
  };
  std::vector<Entry> all;
  int order = 0;
  for (const auto& row : window.rows()) {
    for (std::size_t k = 0; k < row.indices.size(); ++k)
      all.push_back({row.indices[k], order, row.values[k]});
    ++order;
  }
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
    return a.index != b.index ? a.index < b.index : a.order < b.order;
  });
  WindowedMetric out;
  const double w = static_cast<double>(window.capacity());
  for (std::size_t p = 0; p < all.size();) {
    const int idx = all[p].index;
    double sum = 0.0;
    for (; p < all.size() && all[p].index == idx; ++p) sum += all[p].value;
    out.support.push_back(idx);
    out.metric.push_back(sum / w);
  }
  return out;
}

std::optional<std::size_t> WindowedDistribution::position_of(int index) const {
  auto it = std::find(support.begin(), support.end(), index);
  if (it == support.end()) return std::nullopt;
  return static_cast<std::size_t>(it - support.begin());
}

WindowedDistribution windowed_distribution(std::vector<int> support, std::vector<double> metric,
                                           double tau) {
  require(!support.empty(), ErrorKind::kEmptySupport, "distribution over an empty support");
  require(support.size() == metric.size(), ErrorKind::kShape, "support/metric length mismatch");
  require(tau >= 0.0 && std::isfinite(tau), ErrorKind::kConfig, "temperature must be >= 0");
  WindowedDistribution d;
  d.temperature = tau;
  std::size_t best = 0;
  for (std::size_t p = 1; p < support.size(); ++p) {
    if (metric[p] > metric[best] || (metric[p] == metric[best] && support[p] < support[best]))
      best = p;
  }
  d.argmax_pos = best;
  d.probs.assign(support.size(), 0.0);
  if (tau == 0.0) {
    d.probs[best] = 1.0;
  } else {
    const double mx = metric[best];
    double sum = 0.0;
    for (std::size_t p = 0; p < support.size(); ++p) {
      d.probs[p] = std::exp((metric[p] - mx) / tau);
      sum += d.probs[p];
    }
    for (auto& p : d.probs) p /= sum;
  }
  d.support = std::move(support);
  d.metric = std::move(metric);
  return d;
}

WindowedDistribution windowed_distribution(const WindowedMetric& m, double tau) {
  return windowed_distribution(m.support, m.metric, tau);
}

WindowedDistribution epoch_distribution(const SparseSimRow& row, double tau) {
  require(row.indices.size() == row.values.size(), ErrorKind::kShape,
          "similarity row indices/values length mismatch");
  std::vector<std::size_t> order(row.indices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return row.indices[a] < row.indices[b]; });
  std::vector<int> support;
  std::vector<double> metric;
  for (std::size_t p : order) {
    support.push_back(row.indices[p]);
    metric.push_back(row.values[p]);
  }
  return windowed_distribution(std::move(support), std::move(metric), tau);
}

int sample_index(const WindowedDistribution& dist, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double cum = 0.0;
  std::size_t last_positive = dist.argmax_pos;
  for (std::size_t p = 0; p < dist.probs.size(); ++p) {
    if (dist.probs[p] <= 0.0) continue;
    cum += dist.probs[p];
    last_positive = p;
    if (u < cum) return dist.support[p];
  }
  return dist.support[last_positive];
}

PairDecision select_pair(const WindowedDistribution& dist, int self, Rng& rng) {
  if (dist.argmax_index() != self) return PairDecision::standard(self);
  return {PairKind::kBootstrapped, sample_index(dist, rng), true};
}

// ---------------------------------------------------------------------------
// Persistence

void save_cache(const std::filesystem::path& path, const CacheSnapshot& snap) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  const auto& c = snap.cache;
  binio::put_magic(os, kCacheMagic);
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(c.size()));
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(c.dim()));
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(snap.topk));
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(snap.window));
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(snap.epoch));
  binio::put<std::uint8_t>(os, c.normalize_on_insert() ? 1 : 0);
  binio::put_bytes(os, c.initialized_mask().data(), c.initialized_mask().size());
  for (int i = 0; i < c.size(); ++i)
    for (int k = 0; k < c.dim(); ++k) binio::put<double>(os, c.entries()(i, k));
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(snap.windows.size()));
  for (const auto& w : snap.windows) {
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(w.capacity()));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(w.size()));
    for (const auto& row : w.rows()) {
      binio::put<std::int32_t>(os, row.epoch);
      binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(row.indices.size()));
      for (int idx : row.indices) binio::put<std::int32_t>(os, idx);
      binio::put_bytes(os, row.values.data(), sizeof(double) * row.values.size());
    }
  }
  require(static_cast<bool>(os), ErrorKind::kIo, "write failed for " + path.string());
}

CacheSnapshot load_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + path.string());
  binio::expect_magic(is, kCacheMagic);
  const auto n = binio::get<std::uint64_t>(is);
  const auto d = binio::get<std::uint64_t>(is);
  CacheSnapshot snap;
  snap.topk = static_cast<int>(binio::get<std::uint64_t>(is));
  snap.window = static_cast<int>(binio::get<std::uint64_t>(is));
  snap.epoch = static_cast<int>(binio::get<std::uint64_t>(is));
  const bool normalize = binio::get<std::uint8_t>(is) != 0;
  require(n > 0 && d > 0 && n < (1ull << 31) && d < (1ull << 20), ErrorKind::kFormat,
          "implausible cache shape");
  std::vector<std::uint8_t> mask(n);
  binio::get_bytes(is, mask.data(), n);
  Matrix entries(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < n; ++i)
    for (std::uint64_t k = 0; k < d; ++k)
      entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = binio::get<double>(is);
  snap.cache = FeatureCache(static_cast<int>(n), static_cast<int>(d), normalize);
  snap.cache.restore(std::move(entries), std::move(mask));
  const auto nw = binio::get<std::uint64_t>(is);
  require(nw == 0 || nw == n, ErrorKind::kFormat, "window count must be 0 or N");
  snap.windows.reserve(nw);
  for (std::uint64_t i = 0; i < nw; ++i) {
    const auto cap = binio::get<std::uint32_t>(is);
    const auto rows = binio::get<std::uint32_t>(is);
    require(cap >= 1 && rows <= cap, ErrorKind::kFormat, "bad window header");
    SimWindow w(static_cast<int>(cap));
    for (std::uint32_t r = 0; r < rows; ++r) {
      SparseSimRow row;
      row.epoch = binio::get<std::int32_t>(is);
      const auto k = binio::get<std::uint32_t>(is);
      require(k <= n, ErrorKind::kFormat, "row longer than the cache");
      row.indices.resize(k);
      row.values.resize(k);
      for (auto& idx : row.indices) idx = binio::get<std::int32_t>(is);
      binio::get_bytes(is, row.values.data(), sizeof(double) * k);
      w.push(std::move(row));
    }
    snap.windows.push_back(std::move(w));
  }
  return snap;
}

NeighborRecord rank_neighbors(const WindowedDistribution& dist, int query) {
  NeighborRecord rec;
  rec.query = query;
  for (std::size_t p = 0; p < dist.support.size(); ++p)
    rec.ranked.emplace_back(dist.support[p], dist.probs[p]);
  std::sort(rec.ranked.begin(), rec.ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return rec;
}

std::string to_json_line(const NeighborRecord& rec) {
  nlohmann::ordered_json j;
  j["query_index"] = rec.query;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& [idx, p] : rec.ranked) arr.push_back({idx, p});
  j["support"] = std::move(arr);
  return j.dump();
}

}  // namespace adasim
