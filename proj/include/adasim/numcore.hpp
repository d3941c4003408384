#pragma once

// Dense linear algebra substrate: MLP encoder with explicit backprop,
// momentum SGD, EMA weight averaging, and checkpoint I/O.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adasim/rng.hpp"

namespace adasim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Unit-norm copy of v. Throws kDegenerateInput for a zero (or non-finite) norm.
Vector l2_normalize(const Vector& v);

/// Normalizes every column of x in place and returns the pre-normalization norms.
Vector l2_normalize_columns(Matrix& x);

/// Backward of y = x/||x|| applied column-wise: given y, the original norms,
/// and dL/dy, returns dL/dx.
Matrix l2_normalize_backward(const Matrix& y, const Vector& norms, const Matrix& dy);

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1 };

const char* to_string(Activation act);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation act = Activation::kIdentity;
};

class MlpEncoder {
 public:
  MlpEncoder() = default;
  explicit MlpEncoder(std::vector<DenseLayer> layers);

  // Copies are distinct encoders: they get a fresh identity so tapes recorded
  // on one cannot be replayed against the other.
  MlpEncoder(const MlpEncoder& other);
  MlpEncoder& operator=(const MlpEncoder& other);
  MlpEncoder(MlpEncoder&&) noexcept = default;
  MlpEncoder& operator=(MlpEncoder&&) noexcept = default;

  /// widths = {in, hidden..., out}. Hidden layers use `hidden`, the last layer
  /// uses `output`. Weights and biases ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static MlpEncoder random(std::span<const int> widths, Activation hidden, Activation output,
                           Rng& rng);

  /// Single identity-activation layer with W = I, b = 0.
  static MlpEncoder identity(int dim);

  int in_dim() const;
  int out_dim() const;
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t parameter_count() const;
  bool empty() const { return layers_.empty(); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  // Mutable access invalidates outstanding tapes.
  std::vector<DenseLayer>& mutable_layers();

  std::uint64_t id() const { return id_; }
  std::uint64_t generation() const { return generation_; }

 private:
  static std::uint64_t next_id();

  std::vector<DenseLayer> layers_;
  std::uint64_t id_ = next_id();
  std::uint64_t generation_ = 0;
};

/// Activation record of one forward pass over a batch (columns are samples).
struct Tape {
  std::uint64_t encoder_id = 0;
  std::uint64_t generation = 0;
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation output of each layer
};

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  static Gradients zeros_like(const MlpEncoder& enc);
  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);
  double squared_norm() const;
};

/// Batched forward: x is in_dim x B, result is out_dim x B.
Matrix mlp_forward_batch(const MlpEncoder& enc, const Matrix& x, Tape* tape = nullptr);

std::pair<Vector, Tape> mlp_forward(const MlpEncoder& enc, const Vector& x);

/// Backprop through the recorded pass. dy is out_dim x B. When dx is non-null
/// it receives dL/dx (in_dim x B).
Gradients mlp_backward(const MlpEncoder& enc, const Tape& tape, const Matrix& dy,
                       Matrix* dx = nullptr);

Gradients mlp_backward(const MlpEncoder& enc, const Tape& tape, const Vector& dy);

struct OptState {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  Gradients velocity;  // lazily shaped on first step

  OptState() = default;
  OptState(double lr, double mom, double wd = 0.0);
};

/// v <- momentum*v + (g + wd*p); p <- p - lr*v. With momentum 0 and wd 0 this
/// is exactly p - lr*g.
void sgd_step(MlpEncoder& params, const Gradients& grads, OptState& state);

/// teacher <- lambda*teacher + (1-lambda)*student, elementwise.
void ema_update(MlpEncoder& teacher, const MlpEncoder& student, double lambda);

// Checkpoints: "ADASIM-CKPT-1" magic, then named encoders with shape headers
// and row-major float64 payloads.
inline constexpr char kCheckpointMagic[] = "ADASIM-CKPT-1";

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const MlpEncoder*>>& encoders);
std::map<std::string, MlpEncoder> load_checkpoint(const std::filesystem::path& path);

}  // namespace adasim
