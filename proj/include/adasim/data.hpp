#pragma once

// Synthetic datasets, the vector-space augmentation distribution, and CSV
// loading.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "adasim/numcore.hpp"
#include "adasim/rng.hpp"

namespace adasim {

struct Dataset {
  Matrix items;             // D x N, one item per column
  std::vector<int> labels;  // empty when unlabeled
  int class_count = 0;

  int size() const { return static_cast<int>(items.cols()); }
  int dim() const { return static_cast<int>(items.rows()); }
  bool labeled() const { return !labels.empty(); }

  /// Throws kSchema when labels are inconsistent with items or class_count.
  void validate() const;
  Dataset subset(const std::vector<int>& idx) const;
};

struct BlobSpec {
  int classes = 8;
  int per_class = 512;
  int dim = 64;
  double spread = 1.0;      // within-class standard deviation
  double separation = 0.5;  // standard deviation of the class centers
  std::uint64_t seed = 0;
};

/// C isotropic Gaussian clusters, centers ~ N(0, separation^2 I), points ~
/// N(center, spread^2 I). Items are ordered class by class.
Dataset make_blobs(const BlobSpec& spec);
Dataset make_blobs(int classes, int per_class, int dim, double spread, double separation,
                   std::uint64_t seed);

/// Train/test draw from the same blob centers: the test points use an
/// independent stream.
std::pair<Dataset, Dataset> make_blobs_split(const BlobSpec& spec, int test_per_class);

/// Class centers used by make_blobs for the given spec (C columns).
Matrix blob_centers(const BlobSpec& spec);

struct AugmentationSpec {
  double noise_sigma = 0.0;
  double mask_fraction = 0.0;  // floor(mask_fraction*D) coordinates zeroed
  double scale_min = 1.0;
  double scale_max = 1.0;

  void validate() const;
};

/// y = scale * (mask . x) + eps.
Vector augment(const Vector& x, const AugmentationSpec& spec, Rng& rng);

struct CsvOptions {
  bool skip_header = false;
  bool has_label = true;  // last column is an integer label
};

Dataset load_csv_dataset(const std::filesystem::path& path, const CsvOptions& opts = {});
void write_csv_dataset(const std::filesystem::path& path, const Dataset& data);

/// Deterministic seeded split; returns (train, test).
std::pair<Dataset, Dataset> holdout_split(const Dataset& data, double test_fraction,
                                          std::uint64_t seed);

}  // namespace adasim
