#pragma once

// Frozen-feature evaluation protocols: k-NN, linear probe, and prototypical
// few-shot episodes.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adasim/data.hpp"
#include "adasim/numcore.hpp"

namespace adasim {

enum class BankSplit : std::uint8_t { kTrain, kTest };

struct EmbeddingBank {
  Matrix embeddings;  // d x M, unit-norm columns
  std::vector<int> labels;
  int class_count = 0;
  BankSplit split = BankSplit::kTrain;

  int size() const { return static_cast<int>(embeddings.cols()); }
  int dim() const { return static_cast<int>(embeddings.rows()); }
};

/// Builds a bank from raw vectors (normalizing each column).
EmbeddingBank make_bank(Matrix embeddings, std::vector<int> labels, int class_count,
                        BankSplit split = BankSplit::kTrain);

/// Augmentation-free forward pass of every item, L2-normalized.
EmbeddingBank embed_dataset(const MlpEncoder& encoder, const Dataset& data,
                            BankSplit split = BankSplit::kTrain);

struct KnnOptions {
  int k = 20;
  bool weighted = false;  // similarity-weighted vote instead of majority
};

/// Cosine k-NN vote; returns the predicted label of every test item.
std::vector<int> knn_predict(const EmbeddingBank& train, const EmbeddingBank& test,
                             const KnnOptions& opts = {});

/// Fraction of test items whose k-NN vote equals their label. Vote ties go to
/// the class of the most similar neighbor among the tied classes.
double knn_classify(const EmbeddingBank& train, const EmbeddingBank& test, int k = 20);
double knn_classify(const EmbeddingBank& train, const EmbeddingBank& test, const KnnOptions& opts);

struct LinearProbeOptions {
  int epochs = 100;
  double lr = 0.5;
  double weight_decay = 0.0;
};

/// Multinomial logistic regression by full-batch gradient descent on the frozen
/// features, starting from zero weights. Returns test top-1 accuracy.
double linear_probe(const EmbeddingBank& train, const EmbeddingBank& test,
                    const LinearProbeOptions& opts = {});
double linear_probe(const EmbeddingBank& train, const EmbeddingBank& test, int epochs, double lr);

struct FewShotEpisode {
  std::vector<int> classes;                  // original class ids; position = remapped id
  std::vector<std::vector<int>> support;     // per remapped class, bank indices
  std::vector<std::vector<int>> query;       // per remapped class, bank indices
};

FewShotEpisode sample_episode(const EmbeddingBank& bank, int way, int shot, int query, Rng& rng);

/// Accuracy of nearest-prototype (Euclidean) classification of the episode's
/// queries; distance ties go to the lower remapped class id.
double run_episode(const EmbeddingBank& bank, const FewShotEpisode& episode);

struct FewShotResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> accuracies;
};

FewShotResult fewshot_eval(const EmbeddingBank& bank, int episodes = 600, int way = 5,
                           int shot = 5, int query = 15, std::uint64_t seed = 0);

struct EvalReport {
  std::string protocol;  // "knn" | "linear" | "fewshot"
  int k = 0;
  int way = 0;
  int shot = 0;
  int query = 0;
  int episodes = 0;
  int epochs = 0;
  double accuracy = 0.0;
  std::optional<double> stddev;
  std::uint64_t seed = 0;
  std::string checkpoint;
};

std::string to_json(const EvalReport& report);

}  // namespace adasim
