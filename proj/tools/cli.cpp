#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "adasim/config_io.hpp"
#include "adasim/error.hpp"

#ifndef ADASIM_GIT_DESCRIBE
#define ADASIM_GIT_DESCRIBE "unknown"
#endif

namespace adasim::cli {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kParse, p.string() + ": " + e.what());
  }
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

fs::path checkpoint_path(const fs::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch-%04d.ckpt", epoch);
  return dir / "checkpoints" / name;
}

fs::path latest_checkpoint(const fs::path& run) {
  const fs::path dir = run / "checkpoints";
  require(fs::is_directory(dir), ErrorKind::kIo, "no checkpoints in " + run.string());
  std::optional<std::pair<int, fs::path>> best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("epoch-", 0) != 0 || entry.path().extension() != ".ckpt") continue;
    const int epoch = std::atoi(name.c_str() + 6);
    if (!best || epoch > best->first) best = {epoch, entry.path()};
  }
  require(best.has_value(), ErrorKind::kIo, "no checkpoints in " + run.string());
  return best->second;
}

struct RunFiles {
  TrainConfig config;
  DataSpec data;
};

RunFiles read_run(const fs::path& run) {
  require(fs::is_directory(run), ErrorKind::kIo, "run directory not found: " + run.string());
  RunOptions opts;
  apply_config_document(opts, read_json(run / "config.json"));
  return {opts.config, opts.data};
}

ojson config_document(const TrainConfig& cfg, const DataSpec& data) {
  ojson doc = to_json(cfg);
  doc["data"] = to_json(data);
  return doc;
}

}  // namespace

// ---------------------------------------------------------------------------

ojson to_json(const DataSpec& d) {
  ojson j;
  j["source"] = d.source;
  if (d.source == "blobs") {
    j["classes"] = d.blobs.classes;
    j["per_class"] = d.blobs.per_class;
    j["dim"] = d.blobs.dim;
    j["spread"] = d.blobs.spread;
    j["separation"] = d.blobs.separation;
    j["seed"] = d.blobs.seed;
    j["test_per_class"] = d.test_per_class;
  } else {
    j["header"] = d.csv_header;
    j["test_fraction"] = d.test_fraction;
    j["seed"] = d.blobs.seed;
  }
  return j;
}

DataSpec data_spec_from_json(const json& j, const DataSpec& base) {
  require(j.is_object(), ErrorKind::kConfig, "data: must be a JSON object");
  DataSpec d = base;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const auto& v = it.value();
    try {
      if (key == "source") d.source = v.get<std::string>();
      else if (key == "classes") d.blobs.classes = v.get<int>();
      else if (key == "per_class") d.blobs.per_class = v.get<int>();
      else if (key == "dim") d.blobs.dim = v.get<int>();
      else if (key == "spread") d.blobs.spread = v.get<double>();
      else if (key == "separation") d.blobs.separation = v.get<double>();
      else if (key == "seed") d.blobs.seed = v.get<std::uint64_t>();
      else if (key == "test_per_class") d.test_per_class = v.get<int>();
      else if (key == "test_fraction") d.test_fraction = v.get<double>();
      else if (key == "header") d.csv_header = v.get<bool>();
      else fail(ErrorKind::kConfig, "data." + key + ": unknown data field");
    } catch (const json::exception& e) {
      fail(ErrorKind::kConfig, "data." + key + ": wrong type (" + e.what() + ")");
    }
  }
  return d;
}

Splits load_splits(const DataSpec& d) {
  if (d.source == "blobs") {
    auto [train, test] = make_blobs_split(d.blobs, d.test_per_class);
    return {std::move(train), std::move(test)};
  }
  CsvOptions csv;
  csv.skip_header = d.csv_header;
  const Dataset all = load_csv_dataset(d.source, csv);
  auto [train, test] = holdout_split(all, d.test_fraction, d.blobs.seed);
  return {std::move(train), std::move(test)};
}

fs::path default_run_root() {
  const char* env = std::getenv("ADASIM_RUNS");
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string run_id(const TrainConfig& cfg, const DataSpec& data) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(fnv1a(config_document(cfg, data).dump())));
  return std::string(to_string(cfg.pair_mode)) + "-" + to_string(cfg.loss) + "-seed" +
         std::to_string(cfg.seed) + "-" + std::string(hash, 8);
}

void apply_config_document(RunOptions& opts, const json& doc) {
  require(doc.is_object(), ErrorKind::kConfig, "config document must be a JSON object");
  json train = doc;
  if (train.contains("data")) {
    opts.data = data_spec_from_json(train["data"], opts.data);
    train.erase("data");
  }
  opts.config = apply_json(opts.config, train);
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    os << content;
    os.flush();
    require(static_cast<bool>(os), ErrorKind::kIo, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------

RunOutcome run_pretrain(const RunOptions& opts, std::ostream* log) {
  opts.config.validate();
  const std::string id = run_id(opts.config, opts.data);
  const fs::path dir = opts.out.empty() ? default_run_root() / id : opts.out;
  require(!fs::exists(dir / "report.json"), ErrorKind::kIo,
          dir.string() + " already holds a finished run");
  const Splits splits = load_splits(opts.data);
  fs::create_directories(dir / "checkpoints");

  const ojson cfg_doc = config_document(opts.config, opts.data);
  write_atomic(dir / "config.json", cfg_doc.dump(2) + "\n");
  ojson manifest;
  manifest["run_id"] = id;
  manifest["version"] = std::string(ADASIM_VERSION) + " (" + ADASIM_GIT_DESCRIBE + ")";
  manifest["config"] = cfg_doc;
  manifest["started_at"] = utc_now();
  manifest["finished_at"] = nullptr;
  manifest["status"] = "running";
  write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  std::ofstream timing(dir / "timing.jsonl", std::ios::trunc);
  require(metrics && timing, ErrorKind::kIo, "cannot create metric logs in " + dir.string());

  TrainHooks hooks;
  hooks.checkpoint_every = opts.checkpoint_every;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    metrics << to_json_line(m) << '\n' << std::flush;
    ojson t;
    t["epoch"] = m.epoch;
    t["wall_clock"] = m.wall_clock;
    timing << t.dump() << '\n' << std::flush;
    if (log) *log << to_json_line(m) << '\n';
  };
  hooks.on_checkpoint = [&](int epoch, const EncoderPair& enc) {
    std::vector<std::pair<std::string, const MlpEncoder*>> parts = {{"student", &enc.student}};
    if (enc.predictor) parts.emplace_back("predictor", &*enc.predictor);
    if (enc.teacher) parts.emplace_back("teacher", &*enc.teacher);
    save_checkpoint(checkpoint_path(dir, epoch), parts);
  };

  TrainResult res = pretrain(opts.config, splits.train, hooks);
  save_cache(dir / "cache.bin", res.cache);

  RunOutcome out;
  out.dir = dir;
  out.collapsed = res.collapsed;
  out.collapse_report = res.collapse_report;
  ojson report;
  report["run_id"] = id;
  report["mode"] = to_string(opts.config.pair_mode);
  report["loss"] = to_string(opts.config.loss);
  report["tau"] = opts.config.tau;
  report["seed"] = opts.config.seed;
  report["epochs_completed"] = res.metrics.empty() ? 0 : res.metrics.back().epoch;
  report["collapsed"] = res.collapsed;
  if (res.collapsed) {
    report["collapse_report"] = res.collapse_report;
    report["knn"] = nullptr;
    report["linear"] = nullptr;
  } else {
    const MlpEncoder& enc = res.encoders.eval_encoder();
    const EmbeddingBank train = embed_dataset(enc, splits.train, BankSplit::kTrain);
    const EmbeddingBank test = embed_dataset(enc, splits.test, BankSplit::kTest);
    if (splits.train.labeled() && splits.test.labeled()) {
      out.knn = knn_classify(train, test, 20);
      report["knn"] = *out.knn;
      if (splits.train.class_count >= 2) {
        out.linear = linear_probe(train, test);
        report["linear"] = *out.linear;
      } else {
        report["linear"] = nullptr;
      }
    } else {
      report["knn"] = nullptr;
      report["linear"] = nullptr;
    }
  }
  report["embed_std"] = res.metrics.empty() ? 0.0 : res.metrics.back().embed_std;
  write_atomic(dir / "report.json", report.dump(2) + "\n");

  manifest["finished_at"] = utc_now();
  manifest["status"] = res.collapsed ? "collapsed" : "completed";
  write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------

std::vector<EvalReport> run_evaluate(const EvaluateOptions& opts) {
  static const std::set<std::string> kProtocols = {"knn", "linear", "fewshot", "all"};
  require(kProtocols.count(opts.protocol) > 0, ErrorKind::kConfig,
          "protocol: expected knn, linear, fewshot or all");
  const RunFiles run = read_run(opts.run);
  const fs::path ckpt = opts.checkpoint ? *opts.checkpoint : latest_checkpoint(opts.run);
  const auto encoders = load_checkpoint(ckpt);
  auto it = encoders.find("teacher");
  if (it == encoders.end()) it = encoders.find("student");
  require(it != encoders.end(), ErrorKind::kFormat, ckpt.string() + ": no student encoder");

  const Splits splits = load_splits(run.data);
  require(splits.train.labeled() && splits.test.labeled(), ErrorKind::kSchema,
          "evaluation needs labeled data");
  const EmbeddingBank train = embed_dataset(it->second, splits.train, BankSplit::kTrain);
  const EmbeddingBank test = embed_dataset(it->second, splits.test, BankSplit::kTest);

  std::vector<EvalReport> reports;
  auto want = [&](const char* p) { return opts.protocol == "all" || opts.protocol == p; };
  if (want("knn")) {
    EvalReport r;
    r.protocol = "knn";
    r.k = opts.k;
    r.accuracy = knn_classify(train, test, opts.k);
    reports.push_back(r);
  }
  if (want("linear")) {
    EvalReport r;
    r.protocol = "linear";
    r.epochs = opts.probe_epochs;
    r.accuracy = linear_probe(train, test, LinearProbeOptions{opts.probe_epochs, opts.probe_lr, 0.0});
    reports.push_back(r);
  }
  if (want("fewshot")) {
    EvalReport r;
    r.protocol = "fewshot";
    r.way = opts.way;
    r.shot = opts.shot;
    r.query = opts.query;
    r.episodes = opts.episodes;
    r.seed = opts.seed;
    const FewShotResult fs_res =
        fewshot_eval(test, opts.episodes, opts.way, opts.shot, opts.query, opts.seed);
    r.accuracy = fs_res.mean;
    r.stddev = fs_res.stddev;
    reports.push_back(r);
  }
  for (auto& r : reports) {
    r.checkpoint = ckpt.filename().string();
    write_atomic(opts.run / ("eval-" + r.protocol + ".json"), to_json(r) + "\n");
  }
  return reports;
}

// ---------------------------------------------------------------------------

std::vector<NeighborRecord> dump_neighbors(const NeighborOptions& opts) {
  require(opts.top >= 1, ErrorKind::kConfig, "top: must be >= 1");
  const RunFiles run = read_run(opts.run);
  const CacheSnapshot snap = load_cache(opts.run / "cache.bin");
  const int n = snap.cache.size();
  const double tau = opts.tau ? *opts.tau : run.config.tau;
  require(tau >= 0.0, ErrorKind::kConfig, "tau: must be >= 0");
  require(static_cast<int>(snap.windows.size()) == n, ErrorKind::kFormat,
          "cache dump holds no similarity windows");

  std::vector<int> labels;
  if (opts.first_not_class) {
    const Splits splits = load_splits(run.data);
    require(splits.train.labeled() && splits.train.size() == n, ErrorKind::kSchema,
            "--first-not-class needs the labeled training set the cache was built from");
    labels = splits.train.labels;
  }

  const bool explicit_queries = !opts.queries.empty();
  std::vector<int> queries = opts.queries;
  if (!explicit_queries) {
    for (int i = 0; i < n; ++i) queries.push_back(i);
  }

  std::vector<NeighborRecord> out;
  for (int q : queries) {
    require(q >= 0 && q < n, ErrorKind::kIndexRange,
            "query index " + std::to_string(q) + " outside [0, " + std::to_string(n) + ")");
    const SimWindow& win = snap.windows[static_cast<std::size_t>(q)];
    if (!win.filled()) {
      require(!explicit_queries, ErrorKind::kWarmup,
              "query " + std::to_string(q) + ": similarity window not filled");
      continue;
    }
    auto metric = windowed_metric(win);
    // Items in the very first batch of training saw an empty cache.
    if (metric.support.empty()) {
      require(!explicit_queries, ErrorKind::kEmptySupport,
              "query " + std::to_string(q) + ": empty similarity support");
      continue;
    }
    NeighborRecord rec = rank_neighbors(windowed_distribution(metric, tau), q);
    if (rec.ranked.empty()) continue;
    const int first = rec.ranked.front().first;
    if (opts.first_not_self && first == q) continue;
    if (opts.first_not_class &&
        labels[static_cast<std::size_t>(first)] == labels[static_cast<std::size_t>(q)])
      continue;
    if (static_cast<int>(rec.ranked.size()) > opts.top) rec.ranked.resize(static_cast<std::size_t>(opts.top));
    out.push_back(std::move(rec));
  }

  std::string text;
  for (const auto& rec : out) text += to_json_line(rec) + "\n";
  write_atomic(opts.out ? *opts.out : opts.run / "neighbors.jsonl", text);
  return out;
}

// ---------------------------------------------------------------------------

std::string compare_runs(const std::vector<fs::path>& runs) {
  require(runs.size() >= 2, ErrorKind::kConfig, "compare needs at least two run directories");
  std::string csv = "run,mode,loss,tau,seed,epochs,knn,linear,embed_std,collapsed\n";
  for (const auto& run : runs) {
    const RunFiles files = read_run(run);
    require(fs::exists(run / "report.json"), ErrorKind::kIo,
            run.string() + ": no report.json (run not finished)");
    const json report = read_json(run / "report.json");
    const bool collapsed = report.value("collapsed", false);
    auto cell = [&](const char* key) -> std::string {
      if (collapsed || !report.contains(key) || report[key].is_null()) return "-";
      return fmt("%.4f", report[key].get<double>());
    };
    csv += run.filename().string() + "," + to_string(files.config.pair_mode) + "," +
           to_string(files.config.loss) + "," + fmt("%g", files.config.tau) + "," +
           std::to_string(files.config.seed) + "," +
           std::to_string(report.value("epochs_completed", 0)) + "," + cell("knn") + "," +
           cell("linear") + "," + fmt("%.4f", report.value("embed_std", 0.0)) + "," +
           (collapsed ? "yes" : "no") + "\n";
  }
  return csv;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& plottable_metrics() {
  static const std::vector<std::string> names = {"mean_loss", "bootstrap_ratio", "nn_top1",
                                                 "second_nn_top1", "embed_std"};
  return names;
}

namespace {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

std::string legend_label(const fs::path& metrics_file) {
  const fs::path cfg = metrics_file.parent_path() / "config.json";
  if (fs::exists(cfg)) {
    try {
      const json j = read_json(cfg);
      return j.value("mode", std::string("?")) + " tau=" + fmt("%g", j.value("tau", 0.0));
    } catch (const Error&) {
    }
  }
  return metrics_file.parent_path().filename().string();
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_plot(const std::vector<fs::path>& files, const std::string& metric) {
  const auto& names = plottable_metrics();
  if (std::find(names.begin(), names.end(), metric) == names.end()) {
    std::string avail;
    for (const auto& n : names) avail += (avail.empty() ? "" : ", ") + n;
    fail(ErrorKind::kConfig, "metric: unknown metric '" + metric + "' (available: " + avail + ")");
  }
  require(!files.empty(), ErrorKind::kConfig, "plot needs at least one metrics file");

  std::vector<Series> series;
  for (const auto& f : files) {
    std::ifstream is(f);
    require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + f.string());
    Series s{legend_label(f), {}};
    std::string line;
    int lines = 0;
    while (std::getline(is, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ++lines;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        fail(ErrorKind::kParse, f.string() + ": line " + std::to_string(lines) + ": " + e.what());
      }
      const auto v = j.find(metric);
      if (v == j.end() || v->is_null()) continue;
      s.points.emplace_back(j.at("epoch").get<double>(), v->get<double>());
    }
    require(lines > 0, ErrorKind::kSchema, f.string() + ": empty metrics file");
    series.push_back(std::move(s));
  }

  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!any) {
        x0 = x1 = x;
        y0 = y1 = y;
        any = true;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }

  constexpr double kW = 640, kH = 400, kL = 60, kR = 170, kT = 30, kB = 45;
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  auto sx = [&](double x) { return kL + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return kT + ph - (y - y0) / (y1 - y0) * ph; };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
         "viewBox=\"0 0 640 400\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fmt("%.1f", kL + pw / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
      << escape_xml(metric) << "</text>\n";
  svg << "<rect x=\"" << fmt("%.1f", kL) << "\" y=\"" << fmt("%.1f", kT) << "\" width=\""
      << fmt("%.1f", pw) << "\" height=\"" << fmt("%.1f", ph)
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0;
    const double yv = y0 + (y1 - y0) * t / 4.0;
    svg << "<text x=\"" << fmt("%.1f", sx(xv)) << "\" y=\"" << fmt("%.1f", kT + ph + 16)
        << "\" text-anchor=\"middle\">" << fmt("%g", std::round(xv * 100) / 100) << "</text>\n";
    svg << "<text x=\"" << fmt("%.1f", kL - 6) << "\" y=\"" << fmt("%.1f", sy(yv) + 4)
        << "\" text-anchor=\"end\">" << fmt("%.3g", yv) << "</text>\n";
  }
  svg << "<text x=\"" << fmt("%.1f", kL + pw / 2) << "\" y=\"" << fmt("%.1f", kH - 8)
      << "\" text-anchor=\"middle\">epoch</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % (sizeof kColors / sizeof kColors[0])];
    if (!series[k].points.empty()) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t p = 0; p < series[k].points.size(); ++p) {
        if (p) svg << ' ';
        svg << fmt("%.2f", sx(series[k].points[p].first)) << ','
            << fmt("%.2f", sy(series[k].points[p].second));
      }
      svg << "\"/>\n";
    }
    const double ly = kT + 12 + 16.0 * static_cast<double>(k);
    svg << "<line x1=\"" << fmt("%.1f", kW - kR + 12) << "\" y1=\"" << fmt("%.1f", ly - 4)
        << "\" x2=\"" << fmt("%.1f", kW - kR + 32) << "\" y2=\"" << fmt("%.1f", ly - 4)
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fmt("%.1f", kW - kR + 38) << "\" y=\"" << fmt("%.1f", ly) << "\">"
        << escape_xml(series[k].label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> parse_index_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-', 1);
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoi(item));
      } else {
        const int a = std::stoi(item.substr(0, dash)), b = std::stoi(item.substr(dash + 1));
        for (int i = a; i <= b; ++i) out.push_back(i);
      }
    } catch (const std::exception&) {
      fail(ErrorKind::kConfig, "query: cannot parse '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive similarity bootstrapping for self-distillation on vector data", "adasim"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ADASIM_VERSION));

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train an encoder and populate a run directory");
  std::string config_file, mode, loss, data, out_dir;
  double tau = 0, lr = 0, ema = 0, oracle_p = 0, separation = 0, spread = 0;
  int window = 0, topk = 0, epochs = 0, batch = 0, shards = 0, ckpt_every = 0;
  std::uint64_t seed = 0, data_seed = 0;
  bool verbose = false;
  auto* o_config = pre->add_option("--config", config_file, "JSON config file");
  auto* o_mode = pre->add_option("--mode", mode, "standard | nn | adasim | oracle");
  auto* o_loss = pre->add_option("--loss", loss, "simsiam | dino | infonce");
  auto* o_tau = pre->add_option("--tau", tau, "softmax temperature (>= 0)");
  auto* o_window = pre->add_option("--window", window, "window size w (>= 1)");
  auto* o_topk = pre->add_option("--topk", topk, "support size K (>= 1)");
  auto* o_epochs = pre->add_option("--epochs", epochs);
  auto* o_batch = pre->add_option("--batch", batch);
  auto* o_lr = pre->add_option("--lr", lr);
  auto* o_ema = pre->add_option("--ema", ema, "teacher EMA coefficient");
  auto* o_oracle = pre->add_option("--oracle-p", oracle_p, "final standard-pair probability");
  auto* o_seed = pre->add_option("--seed", seed);
  auto* o_shards = pre->add_option("--shards", shards);
  auto* o_data = pre->add_option("--data", data, "CSV path or \"blobs\"");
  auto* o_dseed = pre->add_option("--data-seed", data_seed, "blob/split seed (default: --seed)");
  auto* o_sep = pre->add_option("--separation", separation, "blob center spread");
  auto* o_spread = pre->add_option("--spread", spread, "blob within-class spread");
  pre->add_option("--out", out_dir, "run directory (default: $ADASIM_RUNS/<run id>)");
  pre->add_option("--checkpoint-every", ckpt_every, "checkpoint period in epochs (0: final only)");
  pre->add_flag("--verbose", verbose, "echo per-epoch metrics");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "frozen-feature evaluation of a run");
  EvaluateOptions eopts;
  std::string ev_run, ev_ckpt;
  ev->add_option("run", ev_run, "run directory")->required();
  ev->add_option("--protocol", eopts.protocol, "knn | linear | fewshot | all");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file (default: latest)");
  ev->add_option("--k", eopts.k);
  ev->add_option("--probe-epochs", eopts.probe_epochs);
  ev->add_option("--probe-lr", eopts.probe_lr);
  ev->add_option("--episodes", eopts.episodes);
  ev->add_option("--way", eopts.way);
  ev->add_option("--shot", eopts.shot);
  ev->add_option("--query", eopts.query);
  ev->add_option("--seed", eopts.seed);

  // dump-neighbors
  auto* dn = app.add_subcommand("dump-neighbors", "ranked p_win support per query");
  NeighborOptions nopts;
  std::string dn_run, dn_queries, dn_out;
  double dn_tau = 0;
  dn->add_option("run", dn_run, "run directory")->required();
  dn->add_option("--query", dn_queries, "indices, e.g. 0,5,10-20 (default: all)");
  dn->add_option("--top", nopts.top, "neighbors kept per query");
  auto* o_dn_tau = dn->add_option("--tau", dn_tau, "override the run's tau");
  dn->add_flag("--first-not-self", nopts.first_not_self, "keep queries whose top neighbor is another item");
  dn->add_flag("--first-not-class", nopts.first_not_class,
               "keep queries whose top neighbor has another label");
  dn->add_option("--out", dn_out, "output file (default: <run>/neighbors.jsonl)");

  // compare
  auto* cmp = app.add_subcommand("compare", "CSV table of final accuracies across runs");
  std::vector<std::string> cmp_runs;
  std::string cmp_out;
  cmp->add_option("runs", cmp_runs, "run directories")->required();
  cmp->add_option("--out", cmp_out, "write the CSV here instead of stdout");

  // plot
  auto* plot = app.add_subcommand("plot", "SVG line chart of a metric across runs");
  std::vector<std::string> plot_files;
  std::string plot_metric, plot_out;
  plot->add_option("files", plot_files, "metrics.jsonl files")->required();
  plot->add_option("--metric", plot_metric, "metric name")->required();
  plot->add_option("--out", plot_out, "SVG output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*pre) {
      RunOptions opts;
      bool data_seed_given = o_dseed->count() > 0;
      if (*o_config) {
        const json doc = read_json(config_file);
        apply_config_document(opts, doc);
        data_seed_given = data_seed_given || (doc.contains("data") && doc["data"].contains("seed"));
      }
      TrainConfig& c = opts.config;
      if (*o_mode) c.pair_mode = pair_mode_from_string(mode);
      if (*o_loss) c.loss = loss_kind_from_string(loss);
      if (*o_tau) c.tau = tau;
      if (*o_window) c.window = window;
      if (*o_topk) c.topk = topk;
      if (*o_epochs) c.epochs = epochs;
      if (*o_batch) c.batch_size = batch;
      if (*o_lr) c.lr = lr;
      if (*o_ema) c.ema = ema;
      if (*o_oracle) c.oracle_p_final = oracle_p;
      if (*o_seed) c.seed = seed;
      if (*o_shards) c.shards = shards;
      if (*o_data) opts.data.source = data;
      if (*o_sep) opts.data.blobs.separation = separation;
      if (*o_spread) opts.data.blobs.spread = spread;
      // Without an explicit data seed the dataset follows the training seed.
      if (*o_dseed) opts.data.blobs.seed = data_seed;
      else if (!data_seed_given) opts.data.blobs.seed = c.seed;
      opts.out = out_dir;
      opts.checkpoint_every = ckpt_every;
      const RunOutcome res = run_pretrain(opts, verbose ? &out : nullptr);
      if (res.collapsed) {
        err << "collapse: " << res.collapse_report << "\n";
        err << "run directory: " << res.dir.string() << "\n";
        return kExitCollapse;
      }
      out << "run directory: " << res.dir.string() << "\n";
      if (res.knn) out << "knn: " << fmt("%.4f", *res.knn) << "\n";
      if (res.linear) out << "linear: " << fmt("%.4f", *res.linear) << "\n";
    } else if (*ev) {
      eopts.run = ev_run;
      if (!ev_ckpt.empty()) eopts.checkpoint = fs::path(ev_ckpt);
      for (const auto& r : run_evaluate(eopts)) out << to_json(r) << "\n";
    } else if (*dn) {
      nopts.run = dn_run;
      nopts.queries = parse_index_list(dn_queries);
      if (*o_dn_tau) nopts.tau = dn_tau;
      if (!dn_out.empty()) nopts.out = fs::path(dn_out);
      const auto recs = dump_neighbors(nopts);
      out << recs.size() << " queries written\n";
    } else if (*cmp) {
      std::vector<fs::path> runs(cmp_runs.begin(), cmp_runs.end());
      const std::string csv = compare_runs(runs);
      if (cmp_out.empty()) out << csv;
      else write_atomic(cmp_out, csv);
    } else if (*plot) {
      std::vector<fs::path> files(plot_files.begin(), plot_files.end());
      write_atomic(plot_out, render_plot(files, plot_metric));
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfig) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    }
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitOk;
}

}  // namespace adasim::cli
