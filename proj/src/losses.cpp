#include "adasim/losses.hpp"

#include <cmath>

#include "adasim/error.hpp"

namespace adasim {

LossValue simsiam_loss(const Matrix& p, const Matrix& z) {
  require(p.rows() == z.rows() && p.cols() == z.cols(), ErrorKind::kShape,
          "simsiam_loss: prediction and target shapes differ");
  require(p.cols() > 0, ErrorKind::kShape, "simsiam_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(p.cols());
  LossValue out;
  out.grad_student.resize(p.rows(), p.cols());
  out.grad_teacher = Matrix::Zero(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    const double np = p.col(c).norm();
    const double nz = z.col(c).norm();
    require(np > 0.0 && nz > 0.0, ErrorKind::kDegenerateInput, "simsiam_loss: zero-norm input");
    const double cos = p.col(c).dot(z.col(c)) / (np * nz);
    out.value -= cos * inv_b;
    out.grad_student.col(c) = -inv_b * (z.col(c) / (np * nz) - cos * p.col(c) / (np * np));
  }
  return out;
}

LossValue simsiam_loss(const Vector& p, const Vector& z) {
  return simsiam_loss(Matrix(p), Matrix(z));
}

DinoHead::DinoHead(int dim, double student_t, double teacher_t, double momentum,
                   bool use_centering)
    : out_dim(dim),
      student_temp(student_t),
      teacher_temp(teacher_t),
      center_momentum(momentum),
      centering(use_centering),
      center(Vector::Zero(dim)) {
  require(dim > 0, ErrorKind::kConfig, "DINO head dimension must be positive");
  require(student_t > 0.0 && teacher_t > 0.0, ErrorKind::kConfig,
          "DINO temperatures must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::kConfig,
          "center momentum must be in [0,1)");
}

Vector softmax(const Vector& logits, double temperature) {
  require(temperature > 0.0, ErrorKind::kConfig, "softmax temperature must be positive");
  Vector e = ((logits.array() - logits.maxCoeff()) / temperature).exp().matrix();
  return e / e.sum();
}

LossValue dino_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                    const DinoHead& head) {
  require(head.student_temp > 0.0 && head.teacher_temp > 0.0, ErrorKind::kConfig,
          "DINO temperatures must be positive");
  require(student_logits.rows() == teacher_logits.rows() &&
              student_logits.cols() == teacher_logits.cols(),
          ErrorKind::kShape, "dino_loss: student and teacher shapes differ");
  require(student_logits.cols() > 0, ErrorKind::kShape, "dino_loss: empty batch");
  const bool center = head.centering && head.center.size() > 0;
  if (center) {
    require(head.center.size() == teacher_logits.rows(), ErrorKind::kShape,
            "dino_loss: center length mismatch");
  }
  const double inv_b = 1.0 / static_cast<double>(student_logits.cols());
  LossValue out;
  out.grad_student.resize(student_logits.rows(), student_logits.cols());
  out.grad_teacher = Matrix::Zero(teacher_logits.rows(), teacher_logits.cols());
  for (Eigen::Index c = 0; c < student_logits.cols(); ++c) {
    Vector t = teacher_logits.col(c);
    if (center) t -= head.center;
    const Vector pt = softmax(t, head.teacher_temp);
    const Vector scaled = student_logits.col(c) / head.student_temp;
    const double mx = scaled.maxCoeff();
    const double lse = mx + std::log((scaled.array() - mx).exp().sum());
    const Vector log_ps = scaled.array() - lse;
    out.value -= pt.dot(log_ps) * inv_b;
    const Vector ps = log_ps.array().exp();
    out.grad_student.col(c) = inv_b * (ps - pt) / head.student_temp;
  }
  return out;
}

LossValue dino_loss(const Vector& student_logits, const Vector& teacher_logits,
                    const DinoHead& head) {
  return dino_loss(Matrix(student_logits), Matrix(teacher_logits), head);
}

Vector center_update(const Vector& center, const Matrix& batch_teacher_logits, double momentum) {
  require(batch_teacher_logits.cols() > 0, ErrorKind::kContract, "center_update on an empty batch");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::kConfig,
          "center momentum must be in [0,1)");
  require(center.size() == batch_teacher_logits.rows(), ErrorKind::kShape,
          "center length mismatch");
  const Vector mean = batch_teacher_logits.rowwise().mean();
  return momentum * center + (1.0 - momentum) * mean;
}

LossValue infonce_loss(const Vector& anchor, const Vector& positive, const Matrix& negatives,
                       double tau) {
  require(negatives.cols() >= 1, ErrorKind::kContract, "InfoNCE needs at least one negative");
  require(tau > 0.0, ErrorKind::kConfig, "InfoNCE temperature must be positive");
  require(anchor.size() == positive.size() && negatives.rows() == anchor.size(), ErrorKind::kShape,
          "InfoNCE dimension mismatch");
  const auto m = negatives.cols();
  Vector logits(m + 1);
  logits[0] = anchor.dot(positive) / tau;
  logits.tail(m) = negatives.transpose() * anchor / tau;
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  const Vector prob = (logits.array() - lse).exp();

  LossValue out;
  out.value = lse - logits[0];
  // dL/dlogit = prob - onehot(0)
  Vector g = prob;
  g[0] -= 1.0;
  out.grad_student = (g[0] * positive + negatives * g.tail(m)) / tau;
  out.grad_teacher = g[0] * anchor / tau;
  out.grad_negatives = anchor * g.tail(m).transpose() / tau;
  return out;
}

LossValue infonce_batch_loss(const Matrix& anchors, const Matrix& positives, double tau) {
  require(anchors.rows() == positives.rows() && anchors.cols() == positives.cols(),
          ErrorKind::kShape, "InfoNCE batch shape mismatch");
  require(anchors.cols() >= 2, ErrorKind::kContract,
          "in-batch InfoNCE needs a batch of at least 2 for negatives");
  require(tau > 0.0, ErrorKind::kConfig, "InfoNCE temperature must be positive");
  const auto b = anchors.cols();
  const double inv_b = 1.0 / static_cast<double>(b);
  const Matrix logits = anchors.transpose() * positives / tau;  // row = anchor
  Matrix g(b, b);
  LossValue out;
  for (Eigen::Index r = 0; r < b; ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.value += (lse - logits(r, r)) * inv_b;
    g.row(r) = (logits.row(r).array() - lse).exp();
    g(r, r) -= 1.0;
  }
  g *= inv_b / tau;
  out.grad_student = positives * g.transpose();
  out.grad_teacher = anchors * g;
  return out;
}

}  // namespace adasim
