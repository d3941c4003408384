#pragma once

// Command implementations behind the adasim executable. Every command is a
// plain function so tests can drive it without spawning processes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "adasim/data.hpp"
#include "adasim/eval.hpp"
#include "adasim/simcache.hpp"
#include "adasim/trainer.hpp"

namespace adasim::cli {

namespace fs = std::filesystem;

/// Where training data comes from: generated blobs or a CSV file.
struct DataSpec {
  std::string source = "blobs";  // "blobs" or a CSV path
  BlobSpec blobs;
  int test_per_class = 128;      // blobs: held-out points per class
  double test_fraction = 0.2;    // csv: held-out fraction
  bool csv_header = false;
};

nlohmann::ordered_json to_json(const DataSpec& d);
DataSpec data_spec_from_json(const nlohmann::json& j, const DataSpec& base = {});

struct Splits {
  Dataset train;
  Dataset test;
};

Splits load_splits(const DataSpec& d);

/// Resolved inputs of one pretraining run.
struct RunOptions {
  TrainConfig config;
  DataSpec data;
  fs::path out;             // empty: <run root>/<run id>
  int checkpoint_every = 0;  // 0: final epoch only
};

struct RunOutcome {
  fs::path dir;
  bool collapsed = false;
  std::string collapse_report;
  std::optional<double> knn;
  std::optional<double> linear;
};

/// ADASIM_RUNS when set, otherwise ./runs.
fs::path default_run_root();

/// mode-loss-seed plus a short hash of the resolved config and data spec.
std::string run_id(const TrainConfig& cfg, const DataSpec& data);

/// Overlays a config document (training fields plus an optional "data"
/// object) onto the given options.
void apply_config_document(RunOptions& opts, const nlohmann::json& doc);

/// Trains and populates the run directory. Refuses to reuse a directory that
/// already holds a finished run.
RunOutcome run_pretrain(const RunOptions& opts, std::ostream* log = nullptr);

struct EvaluateOptions {
  fs::path run;
  std::string protocol = "all";  // knn | linear | fewshot | all
  std::optional<fs::path> checkpoint;
  int k = 20;
  int probe_epochs = 100;
  double probe_lr = 0.5;
  int episodes = 600;
  int way = 5;
  int shot = 5;
  int query = 15;
  std::uint64_t seed = 0;
};

/// Runs the requested protocols on the run's held-out split and writes
/// eval-<protocol>.json next to the other run files.
std::vector<EvalReport> run_evaluate(const EvaluateOptions& opts);

struct NeighborOptions {
  fs::path run;
  std::vector<int> queries;  // empty: every item with a filled window
  int top = 10;
  bool first_not_self = false;
  bool first_not_class = false;
  std::optional<double> tau;  // default: the run's configured tau
  std::optional<fs::path> out;  // default: <run>/neighbors.jsonl
};

std::vector<NeighborRecord> dump_neighbors(const NeighborOptions& opts);

/// CSV with one row per run; accuracy cells of collapsed runs are "-".
std::string compare_runs(const std::vector<fs::path>& runs);

/// Metrics that can be plotted from metrics.jsonl.
const std::vector<std::string>& plottable_metrics();

/// Self-contained SVG line chart with one polyline per metrics file.
std::string render_plot(const std::vector<fs::path>& metrics_files, const std::string& metric);

/// Writes content to path via a temporary file and rename.
void write_atomic(const fs::path& path, const std::string& content);

enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitUsage = 2, kExitCollapse = 3 };

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adasim::cli
