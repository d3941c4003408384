#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "adasim/config_io.hpp"
#include "adasim/data.hpp"
#include "adasim/error.hpp"
#include "adasim/eval.hpp"
#include "adasim/losses.hpp"
#include "adasim/simcache.hpp"
#include "adasim/trainer.hpp"

namespace py = pybind11;
using namespace adasim;

namespace {

// Python callers pass one item per row; the core stores one item per column.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Dataset to_dataset(const RowMatrix& x, const std::vector<int>& labels) {
  Dataset d;
  d.items = x.transpose();
  d.labels = labels;
  d.class_count = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  d.validate();
  return d;
}

EmbeddingBank to_bank(const RowMatrix& emb, const std::vector<int>& labels) {
  const int classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  return make_bank(emb.transpose(), labels, classes);
}

TrainConfig config_from(const py::object& config) {
  if (config.is_none()) return TrainConfig{};
  const std::string text = py::module_::import("json").attr("dumps")(config).cast<std::string>();
  return apply_json(TrainConfig{}, nlohmann::json::parse(text));
}

py::dict metrics_dict(const EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["mean_loss"] = m.mean_loss;
  d["bootstrap_ratio"] = m.bootstrap_ratio;
  d["nn_top1"] = m.nn_top1 ? py::cast(*m.nn_top1) : py::none();
  d["second_nn_top1"] = m.second_nn_top1 ? py::cast(*m.second_nn_top1) : py::none();
  d["embed_std"] = m.embed_std;
  d["wall_clock"] = m.wall_clock;
  return d;
}

RowMatrix embed_rows(const MlpEncoder& enc, const RowMatrix& x) {
  require(x.cols() == enc.in_dim(), ErrorKind::kShape, "input width does not match the encoder");
  Matrix out = mlp_forward_batch(enc, x.transpose());
  l2_normalize_columns(out);
  return out.transpose();
}

}  // namespace

PYBIND11_MODULE(_adasim, m) {
  m.doc() = "Adaptive similarity bootstrapping for self-distillation";
  m.attr("__version__") = ADASIM_VERSION;

  py::register_exception<Error>(m, "AdasimError", PyExc_RuntimeError);

  m.def(
      "default_config",
      []() { return py::module_::import("json").attr("loads")(to_json(TrainConfig{}).dump()); },
      "Default training configuration as a dict.");

  m.def(
      "make_blobs",
      [](int classes, int per_class, int dim, double spread, double separation, std::uint64_t seed) {
        const Dataset d = make_blobs(classes, per_class, dim, spread, separation, seed);
        return py::make_tuple(RowMatrix(d.items.transpose()), d.labels);
      },
      py::arg("classes") = 8, py::arg("per_class") = 512, py::arg("dim") = 64,
      py::arg("spread") = 1.0, py::arg("separation") = 0.5, py::arg("seed") = 0,
      "Gaussian blobs; returns (X with one item per row, labels).");

  m.def(
      "augment",
      [](const Vector& x, double noise, double mask, double scale_min, double scale_max,
         std::uint64_t seed) {
        AugmentationSpec spec{noise, mask, scale_min, scale_max};
        spec.validate();
        Rng rng = make_rng(seed, {stream::kAugStudent});
        return augment(x, spec, rng);
      },
      py::arg("x"), py::arg("noise") = 0.0, py::arg("mask") = 0.0, py::arg("scale_min") = 1.0,
      py::arg("scale_max") = 1.0, py::arg("seed") = 0);

  // Similarity machinery.
  m.def(
      "topk_similarities",
      [](const RowMatrix& cache_rows, const Vector& z, int k, bool normalize) {
        FeatureCache cache(static_cast<int>(cache_rows.rows()), static_cast<int>(cache_rows.cols()),
                           normalize);
        for (Eigen::Index i = 0; i < cache_rows.rows(); ++i)
          cache.update(static_cast<int>(i), cache_rows.row(i).transpose());
        const SparseSimRow row = topk_similarities(cache, z, k, 0);
        return py::make_tuple(row.indices, row.values);
      },
      py::arg("cache"), py::arg("z"), py::arg("k"), py::arg("normalize") = true,
      "Top-k dot products of z against the cache rows; returns (indices, values).");

  m.def(
      "windowed_distribution",
      [](std::vector<int> support, std::vector<double> metric, double tau) {
        const WindowedDistribution d = windowed_distribution(std::move(support), std::move(metric), tau);
        return py::make_tuple(d.probs, d.argmax_index());
      },
      py::arg("support"), py::arg("metric"), py::arg("tau"),
      "softmax(metric / tau) over the support; returns (probs, argmax index).");

  m.def(
      "windowed_metric",
      [](const std::vector<std::pair<std::vector<int>, std::vector<double>>>& rows) {
        SimWindow win(static_cast<int>(rows.size()));
        int epoch = 0;
        for (const auto& [idx, val] : rows) win.push(SparseSimRow{++epoch, idx, val});
        const WindowedMetric wm = windowed_metric(win);
        return py::make_tuple(wm.support, wm.metric);
      },
      py::arg("rows"), "Windowed metric over a full window of (indices, values) rows.");

  m.def(
      "select_pair",
      [](std::vector<int> support, std::vector<double> metric, double tau, int self,
         std::uint64_t seed) {
        Rng rng = make_rng(seed, {stream::kPair});
        const PairDecision p =
            select_pair(windowed_distribution(std::move(support), std::move(metric), tau), self, rng);
        return py::make_tuple(p.kind == PairKind::kBootstrapped ? "bootstrapped" : "standard",
                              p.partner, p.gate_passed);
      },
      py::arg("support"), py::arg("metric"), py::arg("tau"), py::arg("self"), py::arg("seed") = 0);

  // Losses.
  m.def(
      "simsiam_loss", [](const Vector& p, const Vector& z) { return simsiam_loss(p, z).value; },
      py::arg("p"), py::arg("z"));
  m.def(
      "infonce_loss",
      [](const Vector& a, const Vector& pos, const Matrix& negatives, double tau) {
        return infonce_loss(a, pos, negatives, tau).value;
      },
      py::arg("anchor"), py::arg("positive"), py::arg("negatives"), py::arg("tau"),
      "negatives: d x M, one negative per column.");

  // Evaluation.
  m.def(
      "knn_classify",
      [](const RowMatrix& train, const std::vector<int>& train_labels, const RowMatrix& test,
         const std::vector<int>& test_labels, int k) {
        return knn_classify(to_bank(train, train_labels), to_bank(test, test_labels), k);
      },
      py::arg("train"), py::arg("train_labels"), py::arg("test"), py::arg("test_labels"),
      py::arg("k") = 20);
  m.def(
      "linear_probe",
      [](const RowMatrix& train, const std::vector<int>& train_labels, const RowMatrix& test,
         const std::vector<int>& test_labels, int epochs, double lr) {
        return linear_probe(to_bank(train, train_labels), to_bank(test, test_labels), epochs, lr);
      },
      py::arg("train"), py::arg("train_labels"), py::arg("test"), py::arg("test_labels"),
      py::arg("epochs") = 100, py::arg("lr") = 0.5);
  m.def(
      "fewshot_eval",
      [](const RowMatrix& emb, const std::vector<int>& labels, int episodes, int way, int shot,
         int query, std::uint64_t seed) {
        const FewShotResult r = fewshot_eval(to_bank(emb, labels), episodes, way, shot, query, seed);
        return py::make_tuple(r.mean, r.stddev);
      },
      py::arg("embeddings"), py::arg("labels"), py::arg("episodes") = 600, py::arg("way") = 5,
      py::arg("shot") = 5, py::arg("query") = 15, py::arg("seed") = 0);

  // Training.
  py::class_<TrainResult>(m, "TrainResult")
      .def_property_readonly("collapsed", [](const TrainResult& r) { return r.collapsed; })
      .def_property_readonly("collapse_report", [](const TrainResult& r) { return r.collapse_report; })
      .def_property_readonly("metrics",
                             [](const TrainResult& r) {
                               py::list out;
                               for (const auto& mm : r.metrics) out.append(metrics_dict(mm));
                               return out;
                             })
      .def(
          "embed",
          [](const TrainResult& r, const RowMatrix& x) {
            return embed_rows(r.encoders.eval_encoder(), x);
          },
          py::arg("x"), "L2-normalized embeddings of the rows of x.")
      .def(
          "save_checkpoint",
          [](const TrainResult& r, const std::string& path) {
            std::vector<std::pair<std::string, const MlpEncoder*>> parts = {
                {"student", &r.encoders.student}};
            if (r.encoders.predictor) parts.emplace_back("predictor", &*r.encoders.predictor);
            if (r.encoders.teacher) parts.emplace_back("teacher", &*r.encoders.teacher);
            save_checkpoint(path, parts);
          },
          py::arg("path"));

  m.def(
      "pretrain",
      [](const RowMatrix& x, const std::vector<int>& labels, const py::object& config,
         const py::object& on_epoch) {
        const TrainConfig cfg = config_from(config);
        const Dataset data = to_dataset(x, labels);
        TrainHooks hooks;
        if (!on_epoch.is_none()) {
          hooks.on_epoch = [&on_epoch](const EpochMetrics& mm) { on_epoch(metrics_dict(mm)); };
        }
        return pretrain(cfg, data, hooks);
      },
      py::arg("x"), py::arg("labels") = std::vector<int>{}, py::arg("config") = py::none(),
      py::arg("on_epoch") = py::none(),
      "Pretrain on the rows of x. config is a dict of overrides of default_config().");
}
