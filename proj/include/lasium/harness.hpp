#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lasium/data.hpp"
#include "lasium/genmodel.hpp"
#include "lasium/metalearn.hpp"
#include "lasium/synth.hpp"

namespace lasium::harness {

// ---------------------------------------------------------------------------
// Configuration
//
// Flat INI text: "key = value" lines, '#' or ';' comments, and optional
// "[section]" headers that prefix the following keys with "section.".
// Unknown keys are rejected.

struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::size_t threads = 1;
  std::filesystem::path out = "lasium_out";

  // Labeled dataset (LDAT) and its class split.
  std::filesystem::path dataset;
  std::array<double, 3> split = {0.6, 0.2, 0.2};

  // Generator.
  genmodel::GeneratorKind generator_kind = genmodel::GeneratorKind::vae;
  std::filesystem::path generator_path;  // empty: <out>/generator.lgen
  genmodel::VaeConfig vae;
  genmodel::GanConfig gan;
  double eps_quantile = genmodel::kCalibrationQuantile;
  std::size_t calibration_draws = genmodel::kCalibrationDraws;

  // Task synthesis.
  std::string policy = "lasium-ro";
  double sigma2 = 0.5;  // LASIUM-N noise variance
  double alpha_ro = 0.4;
  double alpha_oc = 0.2;
  std::optional<double> eps_dist;  // unset: the checkpoint's calibrated value
  synth::AnchorSource anchor_source = synth::AnchorSource::prior;
  std::size_t max_attempts = 10000;

  std::size_t n_way = 5;
  std::size_t k_tr = 1;
  std::size_t k_val = 5;
  std::size_t eval_k_val = 15;

  // Learner.
  metalearn::LearnerKind learner = metalearn::LearnerKind::maml;
  std::string arch = "auto";  // "auto" or an explicit architecture string
  std::size_t filters = 64;   // conv4 width for image data
  std::vector<std::size_t> hidden = {64, 64};  // MLP widths for vector data
  bool batch_norm = true;
  metalearn::MamlConfig maml;
  metalearn::ProtoConfig proto;
  std::size_t meta_iterations = 1000;
  std::filesystem::path learner_path;  // empty: <out>/learner.lgen

  std::size_t n_eval_tasks = 1000;
  std::size_t dump_count = 8;

  // make-synthetic.
  std::size_t synthetic_classes = 48;
  std::size_t synthetic_per_class = 50;
  std::size_t synthetic_latent_dim = 16;
  data::SyntheticOptions synthetic;

  void validate() const;
  /// Every key with its current value, in a stable order.
  std::map<std::string, std::string> to_map() const;

  std::filesystem::path generator_file() const;
  std::filesystem::path learner_file() const;
  synth::TaskPolicy task_policy(double eps) const;
};

/// Applies one "key=value" assignment.
void set_option(RunConfig& config, const std::string& key, const std::string& value);
void apply_override(RunConfig& config, const std::string& assignment);

RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& config);

// ---------------------------------------------------------------------------
// Reports

struct EpisodeReport {
  std::vector<double> accuracies;
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample sd / sqrt(n); 0 when n < 2
  std::size_t n = 0;
  double wall_ms = 0.0;
};

EpisodeReport summarize(std::vector<double> accuracies, double wall_ms = 0.0);

/// "task_id,accuracy" rows.
void write_report_csv(const std::filesystem::path& path, const EpisodeReport& report);
std::string format_report(const std::string& label, const EpisodeReport& report);

/// Shortest decimal text that round-trips.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Commands. Outputs land in config.out.

/// Sub-stream ids under the master seed (see derive_seed). Evaluation
/// episodes use one stream for every learner and baseline, so all of them are
/// scored on the same tasks.
enum Stream : std::uint64_t {
  kSplit = 1,
  kGeneratorTraining = 2,
  kCalibration = 3,
  kLearnerInit = 4,
  kMetaTasks = 5,
  kEvalTasks = 6,
  kScratchInit = 7,
  kDump = 8,
  kSupervisedTasks = 9,
};

genmodel::Generator cmd_train_gen(const RunConfig& config);

struct MetaTrainResult {
  metalearn::Learner learner;
  numkit::OptimizerState state;
  std::vector<double> meta_losses;
};

/// Writes learner.lgen, learner.lopt and metrics.csv.
MetaTrainResult cmd_meta_train(const RunConfig& config);

/// Episodes from real test classes; writes report.csv.
EpisodeReport cmd_evaluate(const RunConfig& config);

/// Fresh network per episode trained for eval_adaptation_steps; writes
/// scratch_report.csv.
EpisodeReport cmd_baseline_scratch(const RunConfig& config);

struct SupervisedResult {
  MetaTrainResult training;
  EpisodeReport report;
  std::vector<std::uint32_t> touched_classes;  // dataset class ids, sorted
};

/// Meta-training on labeled episodes from the meta-train classes, then
/// evaluation. Writes supervised_learner.lgen, supervised_metrics.csv,
/// supervised_report.csv and supervised_audit.txt.
SupervisedResult cmd_baseline_supervised(const RunConfig& config);

/// config.dump_count synthesized tasks under <out>/tasks/task_NNNN.
std::vector<std::filesystem::path> cmd_dump_tasks(const RunConfig& config);

/// Writes synthetic.ldat and synthetic_oracle.lgen.
data::SyntheticData cmd_make_synthetic(const RunConfig& config);

// Building blocks shared with tests.

/// Dataset and its class split; the split depends only on the master seed.
struct LoadedData {
  data::LabeledDataset dataset;
  data::MetaSplit split;
};
LoadedData load_data(const RunConfig& config);

numkit::Architecture learner_architecture(const RunConfig& config, const numkit::Shape& sample_shape);

/// Accuracy of `learner` on n_eval_tasks test-class episodes. Episode i is
/// seeded identically for every learner and baseline in a run.
EpisodeReport evaluate_learner(const RunConfig& config, const LoadedData& data, const metalearn::Learner& learner);

/// Exit code for an exception escaping a command: 2 config, 3 numerics, 4 I/O.
int exit_code_for(const Error& e) noexcept;

}  // namespace lasium::harness
