#include "adasim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"

#include "adasim/error.hpp"

namespace adasim {

EmbeddingBank make_bank(Matrix embeddings, std::vector<int> labels, int class_count,
                        BankSplit split) {
  require(static_cast<Eigen::Index>(labels.size()) == embeddings.cols(), ErrorKind::kShape,
          "bank label count does not match embeddings");
  EmbeddingBank bank;
  l2_normalize_columns(embeddings);
  bank.embeddings = std::move(embeddings);
  bank.labels = std::move(labels);
  bank.class_count = class_count;
  bank.split = split;
  return bank;
}

EmbeddingBank embed_dataset(const MlpEncoder& encoder, const Dataset& data, BankSplit split) {
  require(encoder.in_dim() == data.dim(), ErrorKind::kShape,
          "encoder input width does not match dataset dimension");
  require(data.labeled(), ErrorKind::kSchema, "evaluation needs a labeled dataset");
  Matrix out(encoder.out_dim(), data.size());
  constexpr int kChunk = 512;
  for (int start = 0; start < data.size(); start += kChunk) {
    const int n = std::min(kChunk, data.size() - start);
    out.middleCols(start, n) = mlp_forward_batch(encoder, data.items.middleCols(start, n));
  }
  return make_bank(std::move(out), data.labels, data.class_count, split);
}

// ---------------------------------------------------------------------------

namespace {

void check_bank(const EmbeddingBank& b, const char* what) {
  require(b.size() > 0, ErrorKind::kInsufficientData, std::string(what) + " bank is empty");
  require(static_cast<int>(b.labels.size()) == b.size(), ErrorKind::kShape,
          std::string(what) + " bank labels mismatch");
}

int class_count_of(const EmbeddingBank& a, const EmbeddingBank& b) {
  int c = std::max(a.class_count, b.class_count);
  for (int l : a.labels) c = std::max(c, l + 1);
  for (int l : b.labels) c = std::max(c, l + 1);
  return c;
}

}  // namespace

std::vector<int> knn_predict(const EmbeddingBank& train, const EmbeddingBank& test,
                             const KnnOptions& opts) {
  check_bank(train, "train");
  check_bank(test, "test");
  require(opts.k >= 1 && opts.k <= train.size(), ErrorKind::kConfig,
          "k must be in [1, train size]");
  require(train.dim() == test.dim(), ErrorKind::kShape, "bank dimensions differ");
  const int n_classes = class_count_of(train, test);
  const auto k = static_cast<std::size_t>(opts.k);

  std::vector<int> pred(static_cast<std::size_t>(test.size()));
  std::vector<int> order(static_cast<std::size_t>(train.size()));
  std::vector<double> votes(static_cast<std::size_t>(n_classes));
  constexpr int kChunk = 256;
  for (int start = 0; start < test.size(); start += kChunk) {
    const int n = std::min(kChunk, test.size() - start);
    const Matrix sims = train.embeddings.transpose() * test.embeddings.middleCols(start, n);
    for (int q = 0; q < n; ++q) {
      auto col = sims.col(q);
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](int a, int b) { return col[a] > col[b] || (col[a] == col[b] && a < b); });
      std::fill(votes.begin(), votes.end(), 0.0);
      for (std::size_t r = 0; r < k; ++r) {
        const int j = order[r];
        votes[static_cast<std::size_t>(train.labels[static_cast<std::size_t>(j)])] +=
            opts.weighted ? col[j] : 1.0;
      }
      const double best = *std::max_element(votes.begin(), votes.end());
      // Among classes reaching the top vote, the one owning the most similar neighbor wins.
      int winner = -1;
      for (std::size_t r = 0; r < k && winner < 0; ++r) {
        const int c = train.labels[static_cast<std::size_t>(order[r])];
        if (votes[static_cast<std::size_t>(c)] == best) winner = c;
      }
      pred[static_cast<std::size_t>(start + q)] = winner;
    }
  }
  return pred;
}

double knn_classify(const EmbeddingBank& train, const EmbeddingBank& test, const KnnOptions& opts) {
  const auto pred = knn_predict(train, test, opts);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double knn_classify(const EmbeddingBank& train, const EmbeddingBank& test, int k) {
  return knn_classify(train, test, KnnOptions{k, false});
}

// ---------------------------------------------------------------------------

double linear_probe(const EmbeddingBank& train, const EmbeddingBank& test,
                    const LinearProbeOptions& opts) {
  check_bank(train, "train");
  check_bank(test, "test");
  require(train.dim() == test.dim(), ErrorKind::kShape, "bank dimensions differ");
  require(opts.epochs >= 0 && opts.lr >= 0.0, ErrorKind::kConfig, "invalid probe schedule");
  const std::set<int> distinct(train.labels.begin(), train.labels.end());
  require(distinct.size() >= 2, ErrorKind::kDegenerateInput,
          "linear probe needs at least two classes");
  const int c = class_count_of(train, test);
  const auto m = train.size();
  const Matrix& x = train.embeddings;

  Matrix onehot = Matrix::Zero(c, m);
  for (int i = 0; i < m; ++i) onehot(train.labels[static_cast<std::size_t>(i)], i) = 1.0;

  Matrix w = Matrix::Zero(c, train.dim());
  Vector b = Vector::Zero(c);
  for (int e = 0; e < opts.epochs; ++e) {
    Matrix logits = w * x;
    logits.colwise() += b;
    for (int i = 0; i < m; ++i) {
      auto col = logits.col(i);
      col = (col.array() - col.maxCoeff()).exp().matrix();
      col /= col.sum();
    }
    const Matrix g = (logits - onehot) / static_cast<double>(m);
    w -= opts.lr * (g * x.transpose() + opts.weight_decay * w);
    b -= opts.lr * g.rowwise().sum();
  }

  Matrix logits = w * test.embeddings;
  logits.colwise() += b;
  int correct = 0;
  for (int i = 0; i < test.size(); ++i) {
    Eigen::Index best = 0;
    logits.col(i).maxCoeff(&best);  // first maximum on ties
    correct += static_cast<int>(best) == test.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double linear_probe(const EmbeddingBank& train, const EmbeddingBank& test, int epochs, double lr) {
  return linear_probe(train, test, LinearProbeOptions{epochs, lr, 0.0});
}

// ---------------------------------------------------------------------------

FewShotEpisode sample_episode(const EmbeddingBank& bank, int way, int shot, int query, Rng& rng) {
  require(way >= 1 && shot >= 1 && query >= 1, ErrorKind::kConfig,
          "way, shot and query must be positive");
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(
      std::max(bank.class_count,
               bank.labels.empty() ? 0 : *std::max_element(bank.labels.begin(), bank.labels.end()) + 1)));
  for (int i = 0; i < bank.size(); ++i)
    by_class[static_cast<std::size_t>(bank.labels[static_cast<std::size_t>(i)])].push_back(i);
  std::vector<int> eligible;
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (static_cast<int>(by_class[c].size()) >= shot + query) eligible.push_back(static_cast<int>(c));
  require(static_cast<int>(eligible.size()) >= way, ErrorKind::kInsufficientData,
          "only " + std::to_string(eligible.size()) + " classes have " +
              std::to_string(shot + query) + " items; episode needs " + std::to_string(way));

  FewShotEpisode ep;
  std::shuffle(eligible.begin(), eligible.end(), rng);
  ep.classes.assign(eligible.begin(), eligible.begin() + way);
  for (int c : ep.classes) {
    auto members = by_class[static_cast<std::size_t>(c)];
    std::shuffle(members.begin(), members.end(), rng);
    ep.support.emplace_back(members.begin(), members.begin() + shot);
    ep.query.emplace_back(members.begin() + shot, members.begin() + shot + query);
  }
  return ep;
}

double run_episode(const EmbeddingBank& bank, const FewShotEpisode& episode) {
  const auto way = episode.classes.size();
  require(way >= 1 && episode.support.size() == way && episode.query.size() == way,
          ErrorKind::kShape, "malformed episode");
  Matrix protos(bank.dim(), static_cast<Eigen::Index>(way));
  for (std::size_t c = 0; c < way; ++c) {
    require(!episode.support[c].empty(), ErrorKind::kInsufficientData, "empty support set");
    Vector sum = Vector::Zero(bank.dim());
    for (int i : episode.support[c]) sum += bank.embeddings.col(i);
    protos.col(static_cast<Eigen::Index>(c)) = sum / static_cast<double>(episode.support[c].size());
  }
  int correct = 0;
  int total = 0;
  for (std::size_t c = 0; c < way; ++c) {
    for (int i : episode.query[c]) {
      std::size_t best = 0;
      double best_d = (bank.embeddings.col(i) - protos.col(0)).squaredNorm();
      for (std::size_t p = 1; p < way; ++p) {
        const double d = (bank.embeddings.col(i) - protos.col(static_cast<Eigen::Index>(p))).squaredNorm();
        if (d < best_d) {
          best = p;
          best_d = d;
        }
      }
      correct += best == c;
      ++total;
    }
  }
  require(total > 0, ErrorKind::kInsufficientData, "episode has no queries");
  return static_cast<double>(correct) / static_cast<double>(total);
}

FewShotResult fewshot_eval(const EmbeddingBank& bank, int episodes, int way, int shot, int query,
                           std::uint64_t seed) {
  require(episodes >= 1, ErrorKind::kConfig, "need at least one episode");
  check_bank(bank, "few-shot");
  FewShotResult res;
  res.accuracies.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    Rng rng = make_rng(seed, {stream::kEpisode, static_cast<std::uint64_t>(e)});
    res.accuracies.push_back(run_episode(bank, sample_episode(bank, way, shot, query, rng)));
  }
  const double n = static_cast<double>(episodes);
  res.mean = std::accumulate(res.accuracies.begin(), res.accuracies.end(), 0.0) / n;
  double var = 0.0;
  for (double a : res.accuracies) var += (a - res.mean) * (a - res.mean);
  res.stddev = std::sqrt(var / n);
  return res;
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["protocol"] = r.protocol;
  if (r.protocol == "knn") j["k"] = r.k;
  if (r.protocol == "linear") j["epochs"] = r.epochs;
  if (r.protocol == "fewshot") {
    j["way"] = r.way;
    j["shot"] = r.shot;
    j["query"] = r.query;
    j["episodes"] = r.episodes;
  }
  j["accuracy"] = r.accuracy;
  j["std"] = r.stddev ? nlohmann::ordered_json(*r.stddev) : nlohmann::ordered_json(nullptr);
  j["seed"] = r.seed;
  j["checkpoint"] = r.checkpoint;
  return j.dump();
}

}  // namespace adasim
