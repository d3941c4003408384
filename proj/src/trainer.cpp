#include "adasim/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "adasim/error.hpp"

namespace adasim {

const char* to_string(PairMode m) {
  switch (m) {
    case PairMode::kStandard: return "standard";
    case PairMode::kNnBootstrap: return "nn";
    case PairMode::kAdaSim: return "adasim";
    case PairMode::kSupervisedOracle: return "oracle";
  }
  return "?";
}

const char* to_string(LossKind l) {
  switch (l) {
    case LossKind::kSimSiam: return "simsiam";
    case LossKind::kDino: return "dino";
    case LossKind::kInfoNce: return "infonce";
  }
  return "?";
}

const char* to_string(CacheSource s) {
  return s == CacheSource::kPredictor ? "predictor" : "projection";
}

PairMode pair_mode_from_string(const std::string& s) {
  if (s == "standard") return PairMode::kStandard;
  if (s == "nn" || s == "nn_bootstrap") return PairMode::kNnBootstrap;
  if (s == "adasim") return PairMode::kAdaSim;
  if (s == "oracle" || s == "supervised_oracle") return PairMode::kSupervisedOracle;
  fail(ErrorKind::kConfig, "mode: unknown pair mode '" + s + "'");
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "simsiam") return LossKind::kSimSiam;
  if (s == "dino") return LossKind::kDino;
  if (s == "infonce") return LossKind::kInfoNce;
  fail(ErrorKind::kConfig, "loss: unknown loss '" + s + "'");
}

CacheSource cache_source_from_string(const std::string& s) {
  if (s == "projection") return CacheSource::kProjection;
  if (s == "predictor") return CacheSource::kPredictor;
  fail(ErrorKind::kConfig, "cache_source: unknown value '" + s + "'");
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::kConfig, msg); };
  check(tau >= 0.0 && std::isfinite(tau), "tau: must be >= 0 (got " + std::to_string(tau) + ")");
  check(window >= 1, "window: must be >= 1");
  check(topk >= 1, "topk: must be >= 1");
  check(shards >= 1, "shards: must be >= 1");
  check(epochs >= 1, "epochs: must be >= 1");
  check(batch_size >= 1, "batch: must be >= 1");
  check(lr > 0.0, "lr: must be > 0");
  check(lr_warmup_epochs >= 0, "lr_warmup_epochs: must be >= 0");
  check(momentum >= 0.0 && momentum < 1.0, "momentum: must be in [0,1)");
  check(weight_decay >= 0.0, "weight_decay: must be >= 0");
  check(ema >= 0.0 && ema <= 1.0, "ema: must be in [0,1]");
  check(oracle_p_final >= 0.0 && oracle_p_final <= 1.0, "oracle_p: must be in [0,1]");
  check(embed_dim >= 1 && predictor_hidden >= 1, "embed_dim/predictor_hidden: must be >= 1");
  for (int h : hidden) check(h >= 1, "hidden: widths must be >= 1");
  check(dino_student_temp > 0.0 && dino_teacher_temp > 0.0 && dino_warmup_teacher_temp > 0.0,
        "dino temperatures: must be > 0");
  check(dino_warmup_epochs >= 0, "dino_warmup_epochs: must be >= 0");
  check(dino_center_momentum >= 0.0 && dino_center_momentum < 1.0,
        "dino_center_momentum: must be in [0,1)");
  check(infonce_temp > 0.0, "infonce_temp: must be > 0");
  check(loss != LossKind::kInfoNce || batch_size >= 2,
        "batch: infonce needs batch >= 2 for in-batch negatives");
  check(cache_source != CacheSource::kPredictor || loss == LossKind::kSimSiam,
        "cache_source: predictor output only exists for simsiam");
  check(probe_size >= 1, "probe_size: must be >= 1");
  augmentation.validate();
}

// ---------------------------------------------------------------------------

double oracle_probability(const OracleSchedule& schedule, int epoch) {
  require(schedule.p_final >= 0.0 && schedule.p_final <= 1.0, ErrorKind::kConfig,
          "oracle p_final must be in [0,1]");
  if (schedule.epochs < 2) return schedule.p_final;
  require(epoch >= 0 && epoch < schedule.epochs, ErrorKind::kIndexRange,
          "oracle epoch outside [0, epochs)");
  const double t = static_cast<double>(epoch) / static_cast<double>(schedule.epochs - 1);
  const double p = 1.0 + (schedule.p_final - 1.0) * t;
  return std::clamp(p, schedule.p_final, 1.0);
}

ClassIndex::ClassIndex(const std::vector<int>& labels, int class_count) {
  members_.resize(static_cast<std::size_t>(class_count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < class_count, ErrorKind::kSchema, "label out of range");
    members_[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  }
}

int supervised_pair(const ClassIndex& classes, const std::vector<int>& labels, int i, Rng& rng,
                    bool exclude_self) {
  require(i >= 0 && static_cast<std::size_t>(i) < labels.size(), ErrorKind::kIndexRange,
          "supervised_pair index out of range");
  const auto& m = classes.members(labels[static_cast<std::size_t>(i)]);
  if (!exclude_self) {
    std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
    return m[pick(rng)];
  }
  if (m.size() <= 1) return i;
  std::uniform_int_distribution<std::size_t> pick(0, m.size() - 2);
  const std::size_t k = pick(rng);
  // Skip over self: members are ascending, so compare by value.
  const auto self_pos = static_cast<std::size_t>(std::lower_bound(m.begin(), m.end(), i) - m.begin());
  return m[k < self_pos ? k : k + 1];
}

int supervised_pair(const std::vector<int>& labels, int i, Rng& rng, bool exclude_self) {
  const int c = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  return supervised_pair(ClassIndex(labels, c), labels, i, rng, exclude_self);
}

// ---------------------------------------------------------------------------

DecisionStats compute_epoch_metrics(const std::vector<int>& items,
                                    const std::vector<PairDecision>& decisions,
                                    const std::vector<int>& labels,
                                    const std::vector<std::optional<WindowedDistribution>>& dists) {
  require(items.size() == decisions.size() && items.size() == dists.size(), ErrorKind::kShape,
          "metrics inputs are not aligned");
  DecisionStats s;
  if (items.empty()) return s;
  std::size_t boot = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (decisions[k].kind == PairKind::kBootstrapped && decisions[k].partner != items[k]) ++boot;
  }
  s.bootstrap_ratio = static_cast<double>(boot) / static_cast<double>(items.size());
  if (labels.empty()) return s;

  auto label = [&](int j) { return labels.at(static_cast<std::size_t>(j)); };
  std::size_t n1 = 0, hit1 = 0, n2 = 0, hit2 = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (!dists[k]) continue;
    const auto& d = *dists[k];
    const int i = items[k];
    ++n1;
    hit1 += label(i) == label(d.argmax_index());
    // Best support element other than the chosen partner j*.
    const int partner = decisions[k].partner;
    std::optional<std::size_t> best;
    for (std::size_t p = 0; p < d.support.size(); ++p) {
      if (d.support[p] == partner) continue;
      if (!best || d.metric[p] > d.metric[*best] ||
          (d.metric[p] == d.metric[*best] && d.support[p] < d.support[*best]))
        best = p;
    }
    if (best) {
      ++n2;
      hit2 += label(i) == label(d.support[*best]);
    }
  }
  if (n1 > 0) s.nn_top1 = static_cast<double>(hit1) / static_cast<double>(n1);
  if (n2 > 0) s.second_nn_top1 = static_cast<double>(hit2) / static_cast<double>(n2);
  return s;
}

std::string to_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["mean_loss"] = std::isfinite(m.mean_loss) ? nlohmann::ordered_json(m.mean_loss)
                                              : nlohmann::ordered_json(nullptr);
  j["bootstrap_ratio"] = m.bootstrap_ratio;
  j["nn_top1"] = m.nn_top1 ? nlohmann::ordered_json(*m.nn_top1) : nlohmann::ordered_json(nullptr);
  j["second_nn_top1"] =
      m.second_nn_top1 ? nlohmann::ordered_json(*m.second_nn_top1) : nlohmann::ordered_json(nullptr);
  j["embed_std"] = m.embed_std;
  return j.dump();
}

EpochMetrics epoch_metrics_from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("metrics line: ") + e.what());
  }
  EpochMetrics m;
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
  };
  m.epoch = j.value("epoch", 0);
  m.mean_loss = opt("mean_loss").value_or(std::nan(""));
  m.bootstrap_ratio = j.value("bootstrap_ratio", 0.0);
  m.nn_top1 = opt("nn_top1");
  m.second_nn_top1 = opt("second_nn_top1");
  m.embed_std = j.value("embed_std", 0.0);
  m.wall_clock = j.value("wall_clock", 0.0);
  return m;
}

// ---------------------------------------------------------------------------

EncoderPair make_encoders(const TrainConfig& cfg, int input_dim) {
  Rng rng = make_rng(cfg.seed, {stream::kInit});
  std::vector<int> widths{input_dim};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(cfg.embed_dim);
  EncoderPair pair;
  pair.student = MlpEncoder::random(widths, Activation::kRelu, Activation::kIdentity, rng);
  if (cfg.loss == LossKind::kSimSiam) {
    const int pw[] = {cfg.embed_dim, cfg.predictor_hidden, cfg.embed_dim};
    pair.predictor = MlpEncoder::random(pw, Activation::kRelu, Activation::kIdentity, rng);
  }
  if (cfg.loss == LossKind::kDino) pair.teacher = pair.student;
  return pair;
}

double embedding_std(const MlpEncoder& enc, const Matrix& probe) {
  Matrix z = mlp_forward_batch(enc, probe);
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double n = z.col(c).norm();
    if (n > 0.0) z.col(c) /= n;
  }
  const Vector mean = z.rowwise().mean();
  const Matrix centered = z.colwise() - mean;
  const Vector var = centered.rowwise().squaredNorm() / static_cast<double>(z.cols());
  return var.array().sqrt().mean();
}

// ---------------------------------------------------------------------------

PairSelector::PairSelector(const TrainConfig& cfg, const std::vector<int>* labels)
    : cfg_(cfg), labels_(labels) {
  if (cfg.pair_mode == PairMode::kSupervisedOracle) {
    require(labels_ && !labels_->empty(), ErrorKind::kConfig,
            "mode: the supervised oracle needs a labeled dataset");
    const int c = *std::max_element(labels_->begin(), labels_->end()) + 1;
    classes_ = ClassIndex(*labels_, c);
  }
}

PairSelector::Outcome PairSelector::step(const FeatureCache& snapshot, SimWindow& window, int item,
                                         const Vector& query, int epoch) const {
  const bool sharded = snapshot.shard_map().has_value() && snapshot.shard_map()->num_shards() > 1;
  std::span<const int> shard_members;
  if (sharded) {
    const auto& map = *snapshot.shard_map();
    shard_members = map.members(shard_route(map, item));
  }

  SparseSimRow row;
  row.epoch = epoch;
  if (snapshot.initialized_count() > 0) {
    row = sharded ? topk_similarities(snapshot, query, cfg_.topk, epoch, shard_members)
                  : topk_similarities(snapshot, query, cfg_.topk, epoch);
  }
  window.push(std::move(row));

  Outcome out;
  out.decision = PairDecision::standard(item);
  if (window.filled()) {
    const auto m = windowed_metric(window);
    if (!m.support.empty()) out.dist = windowed_distribution(m, cfg_.tau);
  }
  if (epoch <= cfg_.window) return out;

  const auto e = static_cast<std::uint64_t>(epoch);
  const auto it = static_cast<std::uint64_t>(item);
  switch (cfg_.pair_mode) {
    case PairMode::kStandard:
      break;
    case PairMode::kAdaSim:
      if (out.dist) {
        Rng rng = make_rng(cfg_.seed, {stream::kPair, e, it});
        out.decision = select_pair(*out.dist, item, rng);
      }
      break;
    case PairMode::kNnBootstrap: {
      try {
        const int j = sharded ? nn_lookup(snapshot, query, item, shard_members)
                              : nn_lookup(snapshot, query, item);
        out.decision = {PairKind::kBootstrapped, j, true};
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::kEmptyCandidate) throw;
      }
      break;
    }
    case PairMode::kSupervisedOracle: {
      Rng rng = make_rng(cfg_.seed, {stream::kOracle, e, it});
      const double p_standard = oracle_probability({cfg_.oracle_p_final, cfg_.epochs}, epoch - 1);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      if (u(rng) >= p_standard) {
        const int j = supervised_pair(classes_, *labels_, item, rng, cfg_.oracle_exclude_self);
        out.decision = {PairKind::kBootstrapped, j, true};
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct BranchOutputs {
  Matrix z;  // encoder output
  Tape z_tape;
  Matrix p;  // predictor output (SimSiam)
  Tape p_tape;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks)
      : cfg_(cfg),
        data_(data),
        hooks_(hooks),
        n_(data.size()),
        encoders_(make_encoders(cfg, data.dim())),
        enc_opt_(cfg.lr, cfg.momentum, cfg.weight_decay),
        pred_opt_(cfg.lr, cfg.momentum, cfg.weight_decay),
        dino_(cfg.loss == LossKind::kDino
                  ? DinoHead(cfg.embed_dim, cfg.dino_student_temp, cfg.dino_teacher_temp,
                             cfg.dino_center_momentum, cfg.dino_centering)
                  : DinoHead()),
        cache_(n_, cfg.embed_dim, cfg.normalize_cache),
        windows_(static_cast<std::size_t>(n_), SimWindow(cfg.window)),
        selector_(cfg, data.labeled() ? &data.labels : nullptr) {
    if (cfg.shards > 1) cache_.set_shard_map(ShardMap::contiguous(n_, cfg.shards));
    Rng probe_rng = make_rng(cfg.seed, {stream::kProbe});
    std::vector<int> idx(static_cast<std::size_t>(n_));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), probe_rng);
    idx.resize(static_cast<std::size_t>(std::min(cfg.probe_size, n_)));
    std::sort(idx.begin(), idx.end());
    probe_ = data.subset(idx).items;
  }

  TrainResult run() {
    TrainResult res;
    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochMetrics m = run_epoch(epoch, res);
      m.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.metrics.push_back(m);
      if (hooks_.on_epoch) hooks_.on_epoch(m);
      if (!std::isfinite(m.mean_loss)) {
        res.collapsed = true;
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << " (mode " << to_string(cfg_.pair_mode)
           << ", loss " << to_string(cfg_.loss) << "): mean loss is not finite; last embed_std "
           << m.embed_std;
        res.collapse_report = os.str();
        break;
      }
      const bool last = epoch == cfg_.epochs;
      if (hooks_.on_checkpoint &&
          (last || (hooks_.checkpoint_every > 0 && epoch % hooks_.checkpoint_every == 0))) {
        hooks_.on_checkpoint(epoch, encoders_);
      }
    }
    res.encoders = std::move(encoders_);
    res.cache = CacheSnapshot{std::move(cache_), std::move(windows_), cfg_.topk, cfg_.window,
                              res.metrics.empty() ? 0 : res.metrics.back().epoch};
    return res;
  }

 private:
  double current_lr(int epoch) const {
    if (cfg_.lr_warmup_epochs <= 0 || epoch > cfg_.lr_warmup_epochs) return cfg_.lr;
    return cfg_.lr * static_cast<double>(epoch) / static_cast<double>(cfg_.lr_warmup_epochs);
  }

  double teacher_temp(int epoch) const {
    if (cfg_.dino_warmup_epochs <= 0 || epoch > cfg_.dino_warmup_epochs) return cfg_.dino_teacher_temp;
    const double t = cfg_.dino_warmup_epochs == 1
                         ? 1.0
                         : static_cast<double>(epoch - 1) / static_cast<double>(cfg_.dino_warmup_epochs - 1);
    return cfg_.dino_warmup_teacher_temp + t * (cfg_.dino_teacher_temp - cfg_.dino_warmup_teacher_temp);
  }

  Matrix views(const std::vector<int>& anchors, const std::vector<int>& sources, int epoch,
               std::uint64_t tag) const {
    Matrix x(data_.dim(), static_cast<Eigen::Index>(anchors.size()));
    for (std::size_t b = 0; b < anchors.size(); ++b) {
      Rng rng = make_rng(cfg_.seed, {tag, static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(anchors[b])});
      x.col(static_cast<Eigen::Index>(b)) =
          augment(data_.items.col(sources[b]), cfg_.augmentation, rng);
    }
    return x;
  }

  BranchOutputs forward_student(const Matrix& x) const {
    BranchOutputs o;
    o.z = mlp_forward_batch(encoders_.student, x, &o.z_tape);
    if (encoders_.predictor) o.p = mlp_forward_batch(*encoders_.predictor, o.z, &o.p_tape);
    return o;
  }

  void backward_student(const BranchOutputs& o, const Matrix& dz_direct, const Matrix* dp,
                        Gradients& enc_g, Gradients& pred_g) const {
    Matrix dz = dz_direct;
    if (dp) {
      Matrix dz_from_p;
      pred_g += mlp_backward(*encoders_.predictor, o.p_tape, *dp, &dz_from_p);
      dz += dz_from_p;
    }
    enc_g += mlp_backward(encoders_.student, o.z_tape, dz);
  }

  // Returns the batch loss and applies the optimizer/teacher updates.
  double train_step(const Matrix& x_student, const Matrix& x_teacher,
                    const BranchOutputs& s_branch, int epoch) {
    Gradients enc_g = Gradients::zeros_like(encoders_.student);
    Gradients pred_g;
    if (encoders_.predictor) pred_g = Gradients::zeros_like(*encoders_.predictor);
    const auto b = x_student.cols();
    double loss = 0.0;

    switch (cfg_.loss) {
      case LossKind::kSimSiam: {
        BranchOutputs t_branch = forward_student(x_teacher);
        const LossValue l1 = simsiam_loss(s_branch.p, t_branch.z);
        if (cfg_.symmetric) {
          const LossValue l2 = simsiam_loss(t_branch.p, s_branch.z);
          loss = 0.5 * (l1.value + l2.value);
          const Matrix dp1 = 0.5 * l1.grad_student;
          const Matrix dp2 = 0.5 * l2.grad_student;
          backward_student(s_branch, Matrix::Zero(cfg_.embed_dim, b), &dp1, enc_g, pred_g);
          backward_student(t_branch, Matrix::Zero(cfg_.embed_dim, b), &dp2, enc_g, pred_g);
        } else {
          loss = l1.value;
          backward_student(s_branch, Matrix::Zero(cfg_.embed_dim, b), &l1.grad_student, enc_g,
                           pred_g);
        }
        break;
      }
      case LossKind::kDino: {
        dino_.teacher_temp = teacher_temp(epoch);
        const Matrix t_of_teacher_view = mlp_forward_batch(*encoders_.teacher, x_teacher);
        const LossValue l1 = dino_loss(s_branch.z, t_of_teacher_view, dino_);
        Matrix teacher_batch = t_of_teacher_view;
        if (cfg_.symmetric) {
          BranchOutputs s2 = forward_student(x_teacher);
          const Matrix t_of_student_view = mlp_forward_batch(*encoders_.teacher, x_student);
          const LossValue l2 = dino_loss(s2.z, t_of_student_view, dino_);
          loss = 0.5 * (l1.value + l2.value);
          backward_student(s_branch, 0.5 * l1.grad_student, nullptr, enc_g, pred_g);
          backward_student(s2, 0.5 * l2.grad_student, nullptr, enc_g, pred_g);
          teacher_batch.conservativeResize(Eigen::NoChange, 2 * b);
          teacher_batch.rightCols(b) = t_of_student_view;
        } else {
          loss = l1.value;
          backward_student(s_branch, l1.grad_student, nullptr, enc_g, pred_g);
        }
        if (cfg_.dino_centering) {
          dino_.center = center_update(dino_.center, teacher_batch, cfg_.dino_center_momentum);
        }
        break;
      }
      case LossKind::kInfoNce: {
        BranchOutputs t_branch = forward_student(x_teacher);
        Matrix za = s_branch.z;
        Matrix zp = t_branch.z;
        const Vector na = l2_normalize_columns(za);
        const Vector np = l2_normalize_columns(zp);
        const LossValue l1 = infonce_batch_loss(za, zp, cfg_.infonce_temp);
        Matrix ga = l1.grad_student;
        Matrix gp = l1.grad_teacher;
        loss = l1.value;
        if (cfg_.symmetric) {
          const LossValue l2 = infonce_batch_loss(zp, za, cfg_.infonce_temp);
          loss = 0.5 * (l1.value + l2.value);
          ga = 0.5 * (ga + l2.grad_teacher);
          gp = 0.5 * (gp + l2.grad_student);
        }
        backward_student(s_branch, l2_normalize_backward(za, na, ga), nullptr, enc_g, pred_g);
        backward_student(t_branch, l2_normalize_backward(zp, np, gp), nullptr, enc_g, pred_g);
        break;
      }
    }

    if (!std::isfinite(loss)) return loss;
    enc_opt_.learning_rate = current_lr(epoch);
    pred_opt_.learning_rate = current_lr(epoch);
    sgd_step(encoders_.student, enc_g, enc_opt_);
    if (encoders_.predictor) sgd_step(*encoders_.predictor, pred_g, pred_opt_);
    if (encoders_.teacher) ema_update(*encoders_.teacher, encoders_.student, cfg_.ema);
    return loss;
  }

  EpochMetrics run_epoch(int epoch, TrainResult& res) {
    std::vector<int> perm(static_cast<std::size_t>(n_));
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle_rng = make_rng(cfg_.seed, {stream::kShuffle, static_cast<std::uint64_t>(epoch)});
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);

    std::vector<PairDecision> decisions;
    std::vector<std::optional<WindowedDistribution>> dists;
    decisions.reserve(perm.size());
    dists.reserve(perm.size());
    if (cfg_.record_decisions) res.decisions.emplace_back();

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
      const std::size_t stop = std::min(perm.size(), start + static_cast<std::size_t>(cfg_.batch_size));
      const std::vector<int> batch(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                   perm.begin() + static_cast<std::ptrdiff_t>(stop));
      const Matrix xs = views(batch, batch, epoch, stream::kAugStudent);
      const BranchOutputs s_branch = forward_student(xs);
      Matrix cached = (cfg_.cache_source == CacheSource::kPredictor) ? s_branch.p : s_branch.z;
      if (cfg_.normalize_cache) {
        for (Eigen::Index c = 0; c < cached.cols(); ++c) {
          const double nrm = cached.col(c).norm();
          if (nrm > 0.0 && std::isfinite(nrm)) cached.col(c) /= nrm;
        }
      }
      if (!cached.allFinite()) return diverged(epoch);

      // Pair decisions against the cache as it stood at batch start.
      std::vector<int> partners(batch.size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const int i = batch[b];
        auto outcome = selector_.step(cache_, windows_[static_cast<std::size_t>(i)], i,
                                      cached.col(static_cast<Eigen::Index>(b)), epoch);
        partners[b] = outcome.decision.partner;
        if (cfg_.record_decisions) res.decisions.back().emplace_back(i, outcome.decision);
        decisions.push_back(outcome.decision);
        dists.push_back(std::move(outcome.dist));
      }

      const Matrix xt = views(batch, partners, epoch, stream::kAugTeacher);
      const double loss = train_step(xs, xt, s_branch, epoch);
      loss_sum += loss * static_cast<double>(batch.size());

      for (std::size_t b = 0; b < batch.size(); ++b) {
        cache_.update(batch[b], cached.col(static_cast<Eigen::Index>(b)));
      }
      if (!std::isfinite(loss)) return diverged(epoch);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = loss_sum / static_cast<double>(n_);
    const DecisionStats stats = compute_epoch_metrics(perm, decisions, data_.labels, dists);
    m.bootstrap_ratio = stats.bootstrap_ratio;
    m.nn_top1 = stats.nn_top1;
    m.second_nn_top1 = stats.second_nn_top1;
    m.embed_std = embedding_std(encoders_.student, probe_);
    return m;
  }

  EpochMetrics diverged(int epoch) const {
    EpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = std::nan("");
    m.embed_std = 0.0;
    return m;
  }

  const TrainConfig& cfg_;
  const Dataset& data_;
  const TrainHooks& hooks_;
  int n_;
  EncoderPair encoders_;
  OptState enc_opt_;
  OptState pred_opt_;
  DinoHead dino_;
  FeatureCache cache_;
  std::vector<SimWindow> windows_;
  PairSelector selector_;
  Matrix probe_;
};

}  // namespace

TrainResult pretrain(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks) {
  cfg.validate();
  require(data.size() > 0, ErrorKind::kInsufficientData, "pretraining on an empty dataset");
  data.validate();
  require(cfg.shards <= data.size(), ErrorKind::kConfig, "shards: more shards than items");
  Trainer trainer(cfg, data, hooks);
  return trainer.run();
}

}  // namespace adasim
