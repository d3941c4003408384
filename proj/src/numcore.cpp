#include "adasim/numcore.hpp"

#include <atomic>
#include <cmath>
#include <fstream>

#include "adasim/error.hpp"
#include "binio.hpp"

namespace adasim {

Vector l2_normalize(const Vector& v) {
  const double n = v.norm();
  require(n > 0.0 && std::isfinite(n), ErrorKind::kDegenerateInput,
          "l2_normalize of a zero or non-finite vector");
  return v / n;
}

Vector l2_normalize_columns(Matrix& x) {
  Vector norms = x.colwise().norm().transpose();
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    require(norms[c] > 0.0 && std::isfinite(norms[c]), ErrorKind::kDegenerateInput,
            "l2_normalize of a zero or non-finite column");
    x.col(c) /= norms[c];
  }
  return norms;
}

Matrix l2_normalize_backward(const Matrix& y, const Vector& norms, const Matrix& dy) {
  Matrix dx(y.rows(), y.cols());
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const double proj = y.col(c).dot(dy.col(c));
    dx.col(c) = (dy.col(c) - proj * y.col(c)) / norms[c];
  }
  return dx;
}

const char* to_string(Activation act) {
  return act == Activation::kRelu ? "relu" : "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  fail(ErrorKind::kConfig, "unknown activation '" + name + "'");
}

// ---------------------------------------------------------------------------

std::uint64_t MlpEncoder::next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

MlpEncoder::MlpEncoder(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    require(layer.weight.rows() > 0 && layer.weight.cols() > 0, ErrorKind::kShape,
            "empty weight matrix in layer " + std::to_string(l));
    require(layer.bias.size() == layer.weight.rows(), ErrorKind::kShape,
            "bias length does not match weight rows in layer " + std::to_string(l));
    if (l > 0) {
      require(layer.weight.cols() == layers_[l - 1].weight.rows(), ErrorKind::kShape,
              "layer " + std::to_string(l) + " input width does not match previous output");
    }
  }
}

MlpEncoder::MlpEncoder(const MlpEncoder& other)
    : layers_(other.layers_), id_(next_id()), generation_(0) {}

MlpEncoder& MlpEncoder::operator=(const MlpEncoder& other) {
  if (this != &other) {
    layers_ = other.layers_;
    id_ = next_id();
    generation_ = 0;
  }
  return *this;
}

MlpEncoder MlpEncoder::random(std::span<const int> widths, Activation hidden, Activation output,
                              Rng& rng) {
  require(widths.size() >= 2, ErrorKind::kConfig, "encoder needs at least input and output width");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    require(in > 0 && out > 0, ErrorKind::kConfig, "layer widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    // Row-major fill order so the draw sequence does not depend on Eigen storage.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
    for (int r = 0; r < out; ++r) layer.bias[r] = dist(rng);
    layer.act = (l + 2 == widths.size()) ? output : hidden;
    layers.push_back(std::move(layer));
  }
  return MlpEncoder(std::move(layers));
}

MlpEncoder MlpEncoder::identity(int dim) {
  DenseLayer layer{Matrix::Identity(dim, dim), Vector::Zero(dim), Activation::kIdentity};
  return MlpEncoder({std::move(layer)});
}

int MlpEncoder::in_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int MlpEncoder::out_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

std::size_t MlpEncoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<DenseLayer>& MlpEncoder::mutable_layers() {
  ++generation_;
  return layers_;
}

// ---------------------------------------------------------------------------

Gradients Gradients::zeros_like(const MlpEncoder& enc) {
  Gradients g;
  for (const auto& l : enc.layers()) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  require(weight.size() == other.weight.size(), ErrorKind::kShape, "gradient layer count mismatch");
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += other.weight[l];
    bias[l] += other.bias[l];
  }
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (auto& w : weight) w *= s;
  for (auto& b : bias) b *= s;
  return *this;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weight) s += w.squaredNorm();
  for (const auto& b : bias) s += b.squaredNorm();
  return s;
}

// ---------------------------------------------------------------------------

Matrix mlp_forward_batch(const MlpEncoder& enc, const Matrix& x, Tape* tape) {
  require(!enc.empty(), ErrorKind::kShape, "forward through an empty encoder");
  require(x.rows() == enc.in_dim(), ErrorKind::kShape,
          "input width " + std::to_string(x.rows()) + " != encoder input " +
              std::to_string(enc.in_dim()));
  if (tape) {
    tape->encoder_id = enc.id();
    tape->generation = enc.generation();
    tape->inputs.clear();
    tape->pre.clear();
  }
  Matrix h = x;
  for (const auto& layer : enc.layers()) {
    Matrix z = layer.weight * h;
    z.colwise() += layer.bias;
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->pre.push_back(z);
    }
    if (layer.act == Activation::kRelu) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

std::pair<Vector, Tape> mlp_forward(const MlpEncoder& enc, const Vector& x) {
  Tape tape;
  Matrix y = mlp_forward_batch(enc, x, &tape);
  return {Vector(y.col(0)), std::move(tape)};
}

Gradients mlp_backward(const MlpEncoder& enc, const Tape& tape, const Matrix& dy, Matrix* dx) {
  require(tape.encoder_id == enc.id() && tape.generation == enc.generation(), ErrorKind::kTape,
          "tape was recorded on a different or since-modified encoder");
  require(tape.inputs.size() == enc.num_layers() && tape.pre.size() == enc.num_layers(),
          ErrorKind::kTape, "tape layer count mismatch");
  const auto batch = tape.inputs.front().cols();
  require(dy.rows() == enc.out_dim() && dy.cols() == batch, ErrorKind::kShape,
          "upstream gradient shape mismatch");

  Gradients g;
  g.weight.resize(enc.num_layers());
  g.bias.resize(enc.num_layers());
  Matrix delta = dy;
  for (std::size_t l = enc.num_layers(); l-- > 0;) {
    const auto& layer = enc.layers()[l];
    if (layer.act == Activation::kRelu) {
      delta = delta.cwiseProduct((tape.pre[l].array() > 0.0).cast<double>().matrix());
    }
    g.weight[l] = delta * tape.inputs[l].transpose();
    g.bias[l] = delta.rowwise().sum();
    if (l > 0 || dx) delta = layer.weight.transpose() * delta;
  }
  if (dx) *dx = std::move(delta);
  return g;
}

Gradients mlp_backward(const MlpEncoder& enc, const Tape& tape, const Vector& dy) {
  return mlp_backward(enc, tape, Matrix(dy), nullptr);
}

// ---------------------------------------------------------------------------

OptState::OptState(double lr, double mom, double wd)
    : learning_rate(lr), momentum(mom), weight_decay(wd) {
  require(lr >= 0.0, ErrorKind::kConfig, "learning rate must be non-negative");
  require(mom >= 0.0 && mom < 1.0, ErrorKind::kConfig, "momentum must be in [0,1)");
  require(wd >= 0.0, ErrorKind::kConfig, "weight decay must be non-negative");
}

void sgd_step(MlpEncoder& params, const Gradients& grads, OptState& state) {
  require(grads.weight.size() == params.num_layers() && grads.bias.size() == params.num_layers(),
          ErrorKind::kShape, "gradient layer count mismatch");
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    require(grads.weight[l].rows() == params.layers()[l].weight.rows() &&
                grads.weight[l].cols() == params.layers()[l].weight.cols() &&
                grads.bias[l].size() == params.layers()[l].bias.size(),
            ErrorKind::kShape, "gradient shape mismatch in layer " + std::to_string(l));
  }
  if (state.velocity.weight.size() != params.num_layers()) {
    state.velocity = Gradients::zeros_like(params);
  }
  auto& layers = params.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& vw = state.velocity.weight[l];
    auto& vb = state.velocity.bias[l];
    if (state.momentum == 0.0 && state.weight_decay == 0.0) {
      layers[l].weight -= state.learning_rate * grads.weight[l];
      layers[l].bias -= state.learning_rate * grads.bias[l];
      continue;
    }
    vw = state.momentum * vw + grads.weight[l] + state.weight_decay * layers[l].weight;
    vb = state.momentum * vb + grads.bias[l];
    layers[l].weight -= state.learning_rate * vw;
    layers[l].bias -= state.learning_rate * vb;
  }
}

void ema_update(MlpEncoder& teacher, const MlpEncoder& student, double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::kConfig, "EMA lambda must be in [0,1]");
  require(teacher.num_layers() == student.num_layers(), ErrorKind::kShape,
          "teacher/student layer count mismatch");
  for (std::size_t l = 0; l < teacher.num_layers(); ++l) {
    require(teacher.layers()[l].weight.rows() == student.layers()[l].weight.rows() &&
                teacher.layers()[l].weight.cols() == student.layers()[l].weight.cols(),
            ErrorKind::kShape, "teacher/student shape mismatch");
  }
  auto& t = teacher.mutable_layers();
  for (std::size_t l = 0; l < t.size(); ++l) {
    const auto& s = student.layers()[l];
    t[l].weight = lambda * t[l].weight + (1.0 - lambda) * s.weight;
    t[l].bias = lambda * t[l].bias + (1.0 - lambda) * s.bias;
  }
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const MlpEncoder*>>& encoders) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  binio::put_magic(os, kCheckpointMagic);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(encoders.size()));
  for (const auto& [name, enc] : encoders) {
    binio::put_string(os, name);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(enc->num_layers()));
    for (const auto& layer : enc->layers()) {
      const auto rows = static_cast<std::uint32_t>(layer.weight.rows());
      const auto cols = static_cast<std::uint32_t>(layer.weight.cols());
      binio::put(os, rows);
      binio::put(os, cols);
      binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(layer.act));
      for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) binio::put<double>(os, layer.weight(r, c));
      binio::put_bytes(os, layer.bias.data(), sizeof(double) * rows);
    }
  }
  require(static_cast<bool>(os), ErrorKind::kIo, "write failed for " + path.string());
}

std::map<std::string, MlpEncoder> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + path.string());
  binio::expect_magic(is, kCheckpointMagic);
  std::map<std::string, MlpEncoder> out;
  const auto count = binio::get<std::uint32_t>(is);
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = binio::get_string(is);
    const auto nl = binio::get<std::uint32_t>(is);
    std::vector<DenseLayer> layers;
    for (std::uint32_t l = 0; l < nl; ++l) {
      const auto rows = binio::get<std::uint32_t>(is);
      const auto cols = binio::get<std::uint32_t>(is);
      const auto act = binio::get<std::uint8_t>(is);
      require(act <= 1, ErrorKind::kFormat, "unknown activation tag in checkpoint");
      require(rows > 0 && cols > 0 && rows < (1u << 16) && cols < (1u << 16), ErrorKind::kFormat,
              "implausible layer shape in checkpoint");
      DenseLayer layer;
      layer.weight.resize(rows, cols);
      layer.bias.resize(rows);
      layer.act = static_cast<Activation>(act);
      for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) layer.weight(r, c) = binio::get<double>(is);
      binio::get_bytes(is, layer.bias.data(), sizeof(double) * rows);
      layers.push_back(std::move(layer));
    }
    out.emplace(std::move(name), MlpEncoder(std::move(layers)));
  }
  return out;
}

}  // namespace adasim
