#pragma once

// Training objectives. Batched forms take d x B matrices (one sample per
// column) and average over the batch.

#include "adasim/numcore.hpp"

namespace adasim {

struct LossValue {
  double value = 0.0;
  Matrix grad_student;    // dL/d(student-branch input)
  Matrix grad_teacher;    // dL/d(teacher-branch input); exact zeros under stop-gradient
  Matrix grad_negatives;  // InfoNCE only
};

/// Negative cosine similarity -(p.z)/(|p||z|), averaged over columns. The
/// target z is a stop-gradient branch.
LossValue simsiam_loss(const Matrix& p, const Matrix& z);
LossValue simsiam_loss(const Vector& p, const Vector& z);

struct DinoHead {
  int out_dim = 0;
  double student_temp = 0.1;
  double teacher_temp = 0.07;
  double center_momentum = 0.9;
  bool centering = true;
  Vector center;

  DinoHead() = default;
  explicit DinoHead(int dim, double student_t = 0.1, double teacher_t = 0.07,
                    double momentum = 0.9, bool use_centering = true);
};

/// Cross-entropy H(teacher, student) with teacher = softmax((t - c)/tau_t)
/// (constant) and student = softmax(s/tau_s).
LossValue dino_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                    const DinoHead& head);
LossValue dino_loss(const Vector& student_logits, const Vector& teacher_logits,
                    const DinoHead& head);

/// center' = m*center + (1-m)*mean over batch columns.
Vector center_update(const Vector& center, const Matrix& batch_teacher_logits, double momentum);

/// Row-wise softmax of logits / temperature for a single vector.
Vector softmax(const Vector& logits, double temperature = 1.0);

/// -log(e^{s+/tau} / (e^{s+/tau} + sum e^{s-/tau})) with s = anchor . other.
/// Negatives are the columns of `negatives`.
LossValue infonce_loss(const Vector& anchor, const Vector& positive, const Matrix& negatives,
                       double tau);

/// In-batch InfoNCE: anchor b is positive with column b of `positives` and
/// negative with every other column. Averaged over the batch.
LossValue infonce_batch_loss(const Matrix& anchors, const Matrix& positives, double tau);

}  // namespace adasim
