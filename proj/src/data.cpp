#include "adasim/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "adasim/error.hpp"

namespace adasim {

void Dataset::validate() const {
  if (labels.empty()) return;
  require(static_cast<Eigen::Index>(labels.size()) == items.cols(), ErrorKind::kSchema,
          "label count does not match item count");
  for (int l : labels) {
    require(l >= 0 && l < class_count, ErrorKind::kSchema,
            "label " + std::to_string(l) + " outside [0, " + std::to_string(class_count) + ")");
  }
}

Dataset Dataset::subset(const std::vector<int>& idx) const {
  Dataset out;
  out.items.resize(items.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    require(idx[k] >= 0 && idx[k] < size(), ErrorKind::kIndexRange, "subset index out of range");
    out.items.col(static_cast<Eigen::Index>(k)) = items.col(idx[k]);
    if (labeled()) out.labels.push_back(labels[static_cast<std::size_t>(idx[k])]);
  }
  out.class_count = class_count;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_blob_spec(const BlobSpec& s) {
  require(s.classes > 0 && s.per_class > 0 && s.dim > 0, ErrorKind::kConfig,
          "blob counts and dimension must be positive");
  require(s.spread > 0.0 && s.separation > 0.0, ErrorKind::kConfig,
          "blob spread and separation must be positive");
}

Dataset draw_blobs(const BlobSpec& spec, const Matrix& centers, int per_class, Rng& rng) {
  std::normal_distribution<double> noise(0.0, spec.spread);
  Dataset d;
  d.class_count = spec.classes;
  d.items.resize(spec.dim, static_cast<Eigen::Index>(spec.classes) * per_class);
  d.labels.reserve(static_cast<std::size_t>(spec.classes) * per_class);
  Eigen::Index col = 0;
  for (int c = 0; c < spec.classes; ++c) {
    for (int k = 0; k < per_class; ++k, ++col) {
      for (int r = 0; r < spec.dim; ++r) d.items(r, col) = centers(r, c) + noise(rng);
      d.labels.push_back(c);
    }
  }
  return d;
}

}  // namespace

Matrix blob_centers(const BlobSpec& spec) {
  check_blob_spec(spec);
  Rng rng = make_rng(spec.seed, {stream::kData, 0});
  std::normal_distribution<double> center(0.0, spec.separation);
  Matrix centers(spec.dim, spec.classes);
  for (int c = 0; c < spec.classes; ++c)
    for (int r = 0; r < spec.dim; ++r) centers(r, c) = center(rng);
  return centers;
}

Dataset make_blobs(const BlobSpec& spec) {
  const Matrix centers = blob_centers(spec);
  Rng rng = make_rng(spec.seed, {stream::kData, 1});
  return draw_blobs(spec, centers, spec.per_class, rng);
}

Dataset make_blobs(int classes, int per_class, int dim, double spread, double separation,
                   std::uint64_t seed) {
  return make_blobs(BlobSpec{classes, per_class, dim, spread, separation, seed});
}

std::pair<Dataset, Dataset> make_blobs_split(const BlobSpec& spec, int test_per_class) {
  require(test_per_class > 0, ErrorKind::kConfig, "test_per_class must be positive");
  const Matrix centers = blob_centers(spec);
  Rng train_rng = make_rng(spec.seed, {stream::kData, 1});
  Rng test_rng = make_rng(spec.seed, {stream::kData, 2});
  return {draw_blobs(spec, centers, spec.per_class, train_rng),
          draw_blobs(spec, centers, test_per_class, test_rng)};
}

// ---------------------------------------------------------------------------

void AugmentationSpec::validate() const {
  require(noise_sigma >= 0.0, ErrorKind::kConfig, "noise_sigma must be >= 0");
  require(mask_fraction >= 0.0 && mask_fraction < 1.0, ErrorKind::kConfig,
          "mask_fraction must be in [0,1)");
  require(scale_min > 0.0 && scale_min <= scale_max, ErrorKind::kConfig,
          "scale jitter range must satisfy 0 < a <= b");
}

Vector augment(const Vector& x, const AugmentationSpec& spec, Rng& rng) {
  const auto dim = x.size();
  Vector y = x;
  const auto n_mask = static_cast<Eigen::Index>(std::floor(spec.mask_fraction * static_cast<double>(dim)));
  if (n_mask > 0) {
    // Partial Fisher-Yates: the first n_mask slots are the dropped coordinates.
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(dim));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    for (Eigen::Index k = 0; k < n_mask; ++k) {
      std::uniform_int_distribution<Eigen::Index> pick(k, dim - 1);
      std::swap(perm[static_cast<std::size_t>(k)], perm[static_cast<std::size_t>(pick(rng))]);
      y[perm[static_cast<std::size_t>(k)]] = 0.0;
    }
  }
  if (spec.scale_min != spec.scale_max) {
    std::uniform_real_distribution<double> scale(spec.scale_min, spec.scale_max);
    y *= scale(rng);
  } else if (spec.scale_min != 1.0) {
    y *= spec.scale_min;
  }
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Eigen::Index r = 0; r < dim; ++r) y[r] += noise(rng);
  }
  return y;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_field(std::string_view f, int line_no, std::size_t col) {
  T v{};
  const auto* end = f.data() + f.size();
  auto [ptr, ec] = std::from_chars(f.data(), end, v);
  if (f.empty() || ec != std::errc() || ptr != end) {
    fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ", column " +
                                std::to_string(col + 1) + ": cannot parse '" + std::string(f) + "'");
  }
  return v;
}

}  // namespace

Dataset load_csv_dataset(const std::filesystem::path& path, const CsvOptions& opts) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  std::size_t width = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no == 1 && opts.skip_header) continue;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    const std::size_t n_feat = opts.has_label ? fields.size() - 1 : fields.size();
    require(n_feat >= 1, ErrorKind::kSchema, "line " + std::to_string(line_no) + ": no features");
    if (rows.empty()) {
      width = fields.size();
    } else {
      require(fields.size() == width, ErrorKind::kSchema,
              "line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                  " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> row(n_feat);
    for (std::size_t c = 0; c < n_feat; ++c) row[c] = parse_field<double>(fields[c], line_no, c);
    if (opts.has_label) {
      const int label = parse_field<int>(fields.back(), line_no, n_feat);
      require(label >= 0, ErrorKind::kSchema,
              "line " + std::to_string(line_no) + ": negative label");
      labels.push_back(label);
    }
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorKind::kSchema, path.string() + ": no data rows");
  Dataset d;
  d.items.resize(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c)
    for (std::size_t r = 0; r < rows[c].size(); ++r)
      d.items(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[c][r];
  d.labels = std::move(labels);
  d.class_count = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  d.validate();
  return d;
}

void write_csv_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  char buf[32];
  for (int c = 0; c < data.size(); ++c) {
    for (int r = 0; r < data.dim(); ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", data.items(r, c));
      if (r > 0) os << ',';
      os << buf;
    }
    if (data.labeled()) os << ',' << data.labels[static_cast<std::size_t>(c)];
    os << '\n';
  }
  require(static_cast<bool>(os), ErrorKind::kIo, "write failed for " + path.string());
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& data, double test_fraction,
                                          std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorKind::kConfig,
          "test fraction must be in (0,1)");
  std::vector<int> idx(static_cast<std::size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, {stream::kData, 3});
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(idx.size()))));
  require(n_test < idx.size(), ErrorKind::kInsufficientData, "dataset too small to split");
  std::vector<int> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<int> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

}  // namespace adasim
