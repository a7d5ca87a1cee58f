#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylesketch/data.hpp"
#include "stylesketch/model.hpp"
#include "stylesketch/optim.hpp"

namespace stylesketch {

struct TrainConfig {
  ModelConfig model;
  int epochs = 30;
  int batch_size = 8;  // split evenly into paired and unpaired halves
  int64_t max_steps = 0;  // 0: no cap; otherwise training stops after this many steps
  AdamOptions optimizer;
  LossWeights weights;
  EncoderTrainConfig encoder;
  uint64_t seed = 1;
  int checkpoint_every = 10;  // epochs; the final epoch is always saved
  int sample_every = 1;       // epochs; 0 disables sample grids

  void validate() const;  // ConfigError
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);  // ConfigError, unknown keys rejected
TrainConfig load_train_config(const std::filesystem::path& path);  // IoError / ConfigError

// Every term of both phases; terms a configuration does not use are empty.
struct LossRecord {
  int64_t step = 0;
  double d_total = 0, d_real = 0, d_fake = 0;
  std::optional<double> d_style, d_content;
  double g_total = 0, g_adv = 0, g_grad = 0;
  std::optional<double> g_style, g_content, g_recon;
};

nlohmann::json to_json(const LossRecord& r);
bool operator==(const LossRecord& a, const LossRecord& b);

// One half of a step: sketches, the style bundle extracted from style_images,
// and the dataset rows involved (for diagnostics).
struct TrainBatch {
  SketchMask sketch;
  StyleBundle style;
  Tensor style_images;
  bool paired = false;
  std::vector<int64_t> content_rows;
  std::vector<int64_t> style_rows;
};

// Sketches come from content_rows, style images (and their sketches) from
// style_rows. Paired batches require content_rows == style_rows.
TrainBatch make_batch(const Dataset& ds, const StyleEncoder& e, const std::vector<int64_t>& content_rows,
                      const std::vector<int64_t>& style_rows, bool paired);

struct Optimizers {
  Adam g;
  Adam d;
  Optimizers(Networks& nets, const AdamOptions& options);
};

// One D update on the detached fake, then one G update through the updated D.
// ContractError unless E is frozen; NumericError on a non-finite loss, after
// filling *diagnostic (batch rows and a parameter-norm census) when given.
LossRecord train_step(Networks& nets, Optimizers& opt, const TrainBatch& paired, const TrainBatch& unpaired,
                      const LossWeights& w, nlohmann::json* diagnostic = nullptr);

// Name, L2 norm, and finiteness of every G and D parameter.
nlohmann::json parameter_census(Networks& nets);

// ---------------------------------------------------------------------------

struct MetricRow {
  std::string name;
  double value = 0.0;
  int64_t samples = 0;
  uint64_t seed = 0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  double classification = 0.0;
  double frechet_within = 0.0;  // generated style s vs real style s, mean over s
  double frechet_cross = 0.0;   // generated style s vs real style t != s, mean over pairs
  double gram_l2 = 0.0;         // generated vs reference, mean over taps and samples
  double pdar_input = 0.0;
  double pdar_shuffled = 0.0;
  double edge_l1_input = 0.0;
  double edge_l1_shuffled = 0.0;

  const MetricRow* find(const std::string& name) const;
};

nlohmann::json to_json(const EvalReport& r);
bool operator==(const EvalReport& a, const EvalReport& b);

struct EvalOptions {
  uint64_t seed = 1;     // fixes the shuffled-sketch pairing
  int batch_size = 16;
};

// For each style, the first test image of that style is the reference; every
// test sketch is rendered in that style. ContractError unless E and the
// classifier are trained.
EvalReport evaluate(const Networks& nets, const Dataset& ds, const EvalOptions& options = {});

// Real test images scored as if generated: each image is its own reference and
// its own sketch source.
EvalReport evaluate_real(const Networks& nets, const Dataset& ds, const EvalOptions& options = {});

// ---------------------------------------------------------------------------

struct RunReport {
  TrainConfig config;
  EncoderReport encoder;
  EncoderReport classifier;
  std::vector<LossRecord> losses;
  EvalReport metrics;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const RunReport& r);

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& ds);

  // Trains and freezes E and the evaluation classifier on the train split.
  void prepare();
  // One epoch over the shuffled train split; returns its loss records.
  std::vector<LossRecord> run_epoch(int epoch);
  // prepare(), every epoch, checkpoints, samples, evaluation. With an empty
  // run_dir nothing is written.
  RunReport run(const std::filesystem::path& run_dir = {});

  Networks& networks() { return nets_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t steps() const { return step_; }

 private:
  void write_samples(const std::filesystem::path& path) const;

  TrainConfig cfg_;
  const Dataset& ds_;
  Networks nets_;
  Optimizers opt_;
  EncoderReport encoder_report_;
  EncoderReport classifier_report_;
  int64_t step_ = 0;
  std::filesystem::path diagnostic_dir_;
};

// baseline, +DMI, +FMT, +2B (two-branch D heads), +IDN.
std::vector<std::pair<std::string, TrainConfig>> ablation_grid(const TrainConfig& base);

// Runs every grid entry into run_dir/<name> and writes run_dir/ablation.json.
std::vector<RunReport> run_ablation(const TrainConfig& base, const Dataset& ds, const std::filesystem::path& run_dir);

std::string format_report(const RunReport& r);

}  // namespace stylesketch
