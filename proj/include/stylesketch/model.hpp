#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylesketch/layers.hpp"
#include "stylesketch/losses.hpp"
#include "stylesketch/nn.hpp"

namespace stylesketch {

// Which auxiliary heads D carries besides the realness head.
enum class DHeads {
  none,        // realness only
  two_branch,  // style and sketch predicted by two separate conv branches
  idn,         // style from predicted moments, sketch from the de-normalized map
};

std::string to_string(DHeads h);
DHeads dheads_from_string(const std::string& s);  // ConfigError on unknown names

struct ModelConfig {
  int image_size = 64;     // 32 or 64
  int base_channels = 16;  // widths c, 2c, 4c at sizes S, S/2, S/4
  int style_dim = 64;
  int num_styles = 4;
  int attn_blocks = 2;
  bool dmi = true;
  bool fmt = true;  // off: AdaIN at every style injection point
  DHeads d_heads = DHeads::idn;
  std::vector<int> fmt_resolutions = {16, 32, 64};
  std::vector<int> dmi_resolutions = {16, 32};  // decoder stage outputs

  // Throws ConfigError on unsupported sizes, FMT resolutions outside
  // {16, 32, 64} or outside the encoder taps, or DMI resolutions that are not
  // decoder stage sizes.
  void validate() const;
  // Feature-map resolutions of the three encoder taps, largest first.
  std::array<int, 3> tap_sizes() const { return {image_size, image_size / 2, image_size / 4}; }
  bool fmt_at(int resolution) const;
  bool dmi_at(int resolution) const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);  // ConfigError on bad fields

// ---------------------------------------------------------------------------
// E: style classifier whose intermediate activations are the style features.

struct StyleBundle {
  Tensor style_vec;                  // [N, S]
  std::vector<Tensor> feature_maps;  // taps at S, S/2, S/4, largest first
  SketchMask style_sketch;           // full-resolution sketch of the style image
};

class StyleEncoder : public Module {
 public:
  StyleEncoder() = default;
  StyleEncoder(const ModelConfig& cfg, Rng& rng);

  struct Activations {
    std::vector<Tensor> taps;
    Tensor style_vec;  // global average of the last stage, scaled to unit RMS
    Tensor logits;     // [N, num_styles]
  };
  // Usable before training (the classifier is trained through it).
  Activations run(const Tensor& images) const;

  bool trained() const { return trained_; }
  // Freezes every parameter and enables extraction.
  void mark_trained();

  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  const ModelConfig& config() const { return cfg_; }

  std::array<Conv2d, 4> stages;
  Linear classifier;

 private:
  ModelConfig cfg_;
  bool trained_ = false;
};

// ContractError if E is untrained. The style sketch is left empty; callers
// attach the edge map of the style image.
StyleBundle extract_style(const StyleEncoder& e, const Tensor& style_images);

// Weighted average of style vectors and feature maps, weights normalized to
// sum 1. The blended style sketch is the union of sketches with positive weight.
StyleBundle blend_styles(const std::vector<StyleBundle>& bundles, const std::vector<float>& weights);

// Tiles a batch-1 bundle n times; ContractError for larger batches.
StyleBundle repeat_style(const StyleBundle& b, int64_t n);

// Argmax of the classifier logits, evaluated in batches without recording.
std::vector<int> classify(const StyleEncoder& e, const Tensor& images);

struct EncoderTrainConfig {
  int epochs = 12;
  int batch_size = 16;
  float lr = 2e-3f;
  uint64_t seed = 1;
  double target_accuracy = 0.9;  // stop early once validation reaches this
  double min_accuracy = 0.6;     // TrainingError below this after the budget
};

struct EncoderReport {
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  int epochs_run = 0;
};

// Trains E as a style classifier, then freezes it. ConfigError unless the
// labels cover at least two styles; TrainingError if validation accuracy stays
// below min_accuracy.
EncoderReport train_encoder(StyleEncoder& e, const Tensor& train_images, const std::vector<int>& train_labels,
                            const Tensor& val_images, const std::vector<int>& val_labels,
                            const EncoderTrainConfig& cfg);

// ---------------------------------------------------------------------------
// G: U-Net over the sketch, style injected in the decoder.

struct GeneratorTrace {
  std::vector<DmiTrace> dmi;  // active DMI layers in decoder order, smallest resolution first
};

class Generator : public Module {
 public:
  Generator() = default;
  Generator(const ModelConfig& cfg, Rng& rng);

  // Output [N, 3, H, W] in [-1, 1]. ShapeError when the sketch or style
  // features do not match the configured image size; ContractError if FMT is
  // needed and the bundle has no style sketch.
  Tensor forward(const SketchMask& sketch, const StyleBundle& style, GeneratorTrace* trace = nullptr) const;

  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  const ModelConfig& config() const { return cfg_; }

  std::array<Conv2d, 3> enc;
  std::array<DualMaskInjection, 3> dmi;  // after dec[i]; parameters listed only where active
  std::vector<AttnResBlock> bottleneck;
  std::array<Conv2d, 3> dec;  // at S/4, S/2, S
  Conv2d to_rgb;

 private:
  ModelConfig cfg_;
};

// ---------------------------------------------------------------------------
// D: conv trunk, realness head, and optional style/sketch heads.

struct DiscriminatorTrace {
  IdnOutput idn;  // set only with DHeads::idn
};

class Discriminator : public Module {
 public:
  Discriminator() = default;
  Discriminator(const ModelConfig& cfg, Rng& rng);

  DiscriminatorOutput forward(const Tensor& images, DiscriminatorTrace* trace = nullptr) const;

  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  const ModelConfig& config() const { return cfg_; }

  std::array<Conv2d, 3> trunk;
  Conv2d realness;
  IdnPredictor idn;
  Conv2d style_branch;  // two_branch only
  Linear style_fc1;
  Linear style_fc2;
  std::array<Conv2d, 3> content;

 private:
  Tensor content_head(const Tensor& f) const;
  ModelConfig cfg_;
};

// ---------------------------------------------------------------------------
// Checkpoints: a directory holding manifest.json and one portable tensor file
// per parameter.

struct Networks {
  ModelConfig config;
  StyleEncoder encoder;
  StyleEncoder classifier;  // independent evaluation classifier
  Generator generator;
  Discriminator discriminator;

  Networks() = default;
  Networks(const ModelConfig& cfg, uint64_t seed);
  Networks(const Networks&) = delete;
  Networks& operator=(const Networks&) = delete;

  // Every parameter, prefixed by its network name.
  std::vector<NamedParameter> named_parameters();
};

struct CheckpointMeta {
  int64_t step = 0;
  uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& dir, Networks& nets, const CheckpointMeta& meta);
// Rebuilds the networks from the stored config. IoError if the directory,
// manifest, or a tensor file is missing or corrupt; ShapeError if a stored
// tensor does not fit the configured architecture.
std::unique_ptr<Networks> load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta = nullptr);

// Order-sensitive FNV-1a over the raw bytes of every parameter value.
uint64_t parameter_checksum(Module& m);

}  // namespace stylesketch
