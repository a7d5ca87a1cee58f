#include "stylesketch/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "stylesketch/error.hpp"
#include "stylesketch/ops.hpp"
#include "stylesketch/optim.hpp"
#include "stylesketch/tensor_io.hpp"

namespace stylesketch {

namespace {

constexpr float kSlope = 0.2f;

Tensor lrelu(const Tensor& x) { return leaky_relu(x, kSlope); }

void require_image_batch(const Tensor& images, int size, const char* who) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != size || images.size(3) != size) {
    throw ShapeError(std::string(who) + ": expected [N,3," + std::to_string(size) + "," + std::to_string(size) +
                     "], got " + shape_str(images.shape()));
  }
}

}  // namespace

std::string to_string(DHeads h) {
  switch (h) {
    case DHeads::none:
      return "none";
    case DHeads::two_branch:
      return "two_branch";
    case DHeads::idn:
      return "idn";
  }
  return "?";
}

DHeads dheads_from_string(const std::string& s) {
  if (s == "none") return DHeads::none;
  if (s == "two_branch") return DHeads::two_branch;
  if (s == "idn") return DHeads::idn;
  throw ConfigError("unknown discriminator heads '" + s + "' (expected none, two_branch or idn)");
}

void ModelConfig::validate() const {
  if (image_size != 32 && image_size != 64) {
    throw ConfigError("image_size must be 32 or 64, got " + std::to_string(image_size));
  }
  if (base_channels < 1 || style_dim < 1 || attn_blocks < 0) {
    throw ConfigError("base_channels and style_dim must be positive and attn_blocks nonnegative");
  }
  if (num_styles < 2) throw ConfigError("num_styles must be at least 2, got " + std::to_string(num_styles));
  const auto taps = tap_sizes();
  for (int r : fmt_resolutions) {
    if (r != 16 && r != 32 && r != 64) {
      throw ConfigError("FMT resolution " + std::to_string(r) + " is outside {16, 32, 64}");
    }
    if (std::find(taps.begin(), taps.end(), r) == taps.end()) {
      throw ConfigError("FMT resolution " + std::to_string(r) + " has no encoder tap at image size " +
                        std::to_string(image_size));
    }
  }
  for (int r : dmi_resolutions) {
    if (std::find(taps.begin(), taps.end(), r) == taps.end()) {
      throw ConfigError("DMI resolution " + std::to_string(r) + " is not a decoder stage size at image size " +
                        std::to_string(image_size));
    }
  }
}

bool ModelConfig::dmi_at(int resolution) const {
  return dmi && std::find(dmi_resolutions.begin(), dmi_resolutions.end(), resolution) != dmi_resolutions.end();
}

bool ModelConfig::fmt_at(int resolution) const {
  return fmt && std::find(fmt_resolutions.begin(), fmt_resolutions.end(), resolution) != fmt_resolutions.end();
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},   {"base_channels", c.base_channels},
          {"style_dim", c.style_dim},     {"num_styles", c.num_styles},
          {"attn_blocks", c.attn_blocks}, {"dmi", c.dmi},
          {"fmt", c.fmt},                 {"d_heads", to_string(c.d_heads)},
          {"fmt_resolutions", c.fmt_resolutions}, {"dmi_resolutions", c.dmi_resolutions}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "image_size") c.image_size = value.get<int>();
      else if (key == "base_channels") c.base_channels = value.get<int>();
      else if (key == "style_dim") c.style_dim = value.get<int>();
      else if (key == "num_styles") c.num_styles = value.get<int>();
      else if (key == "attn_blocks") c.attn_blocks = value.get<int>();
      else if (key == "dmi") c.dmi = value.get<bool>();
      else if (key == "fmt") c.fmt = value.get<bool>();
      else if (key == "d_heads") c.d_heads = dheads_from_string(value.get<std::string>());
      else if (key == "fmt_resolutions") c.fmt_resolutions = value.get<std::vector<int>>();
      else if (key == "dmi_resolutions") c.dmi_resolutions = value.get<std::vector<int>>();
      else throw ConfigError("unknown model config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

StyleEncoder::StyleEncoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int c = cfg.base_channels;
  stages = {Conv2d(3, c, 3, 1, 1, rng), Conv2d(c, 2 * c, 3, 2, 1, rng), Conv2d(2 * c, 4 * c, 3, 2, 1, rng),
            Conv2d(4 * c, cfg.style_dim, 3, 2, 1, rng)};
  classifier = Linear(cfg.style_dim, cfg.num_styles, rng);
}

namespace {
constexpr float kStyleRmsEps = 1e-6f;
}  // namespace

StyleEncoder::Activations StyleEncoder::run(const Tensor& images) const {
  require_image_batch(images, cfg_.image_size, "style encoder");
  Activations a;
  Tensor x = images;
  for (size_t i = 0; i < stages.size(); ++i) {
    x = relu(stages[i].forward(x));
    if (i < 3) a.taps.push_back(x);
  }
  // Unit RMS per sample keeps regression targets for D's style head O(1).
  const int64_t n = x.size(0), d = x.size(1);
  const Tensor pooled = global_avg_pool(x);
  const Tensor ms = global_avg_pool(reshape(square(pooled), {n, 1, 1, d}));
  a.style_vec = reshape(pooled, {n, d}) / reshape(sqrt(ms + kStyleRmsEps), {n, 1});
  a.logits = classifier.forward(a.style_vec);
  return a;
}

void StyleEncoder::mark_trained() {
  set_trainable(false);
  trained_ = true;
}

void StyleEncoder::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  for (size_t i = 0; i < stages.size(); ++i) stages[i].collect_parameters(prefix + "stage" + std::to_string(i) + ".", out);
  classifier.collect_parameters(prefix + "classifier.", out);
}

StyleBundle extract_style(const StyleEncoder& e, const Tensor& style_images) {
  if (!e.trained()) throw ContractError("extract_style needs a trained, frozen encoder");
  NoGradGuard no_grad;
  StyleEncoder::Activations a = e.run(style_images);
  StyleBundle b;
  b.style_vec = a.style_vec;
  b.feature_maps = a.taps;
  return b;
}

namespace {

// Elementwise weighted sum in double, rounded once to float.
Tensor weighted_sum(const std::vector<const Tensor*>& parts, const std::vector<double>& w) {
  const Tensor& first = *parts.front();
  std::vector<float> out(static_cast<size_t>(first.numel()));
  for (size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (size_t k = 0; k < parts.size(); ++k) {
      if (w[k] != 0.0) acc += w[k] * static_cast<double>(parts[k]->data()[i]);
    }
    out[i] = static_cast<float>(acc);
  }
  return Tensor(first.shape(), std::move(out));
}

}  // namespace

StyleBundle blend_styles(const std::vector<StyleBundle>& bundles, const std::vector<float>& weights) {
  if (bundles.empty()) throw ContractError("blend_styles needs at least one bundle");
  if (weights.size() != bundles.size()) {
    throw ContractError("blend_styles got " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(bundles.size()) + " bundles");
  }
  double total = 0.0;
  for (float w : weights) {
    if (!std::isfinite(w) || w < 0.0f) throw ContractError("blend weights must be finite and nonnegative");
    total += w;
  }
  if (total <= 0.0) throw ContractError("blend weights must have a positive sum");
  std::vector<double> w(weights.size());
  for (size_t k = 0; k < w.size(); ++k) w[k] = weights[k] / total;

  const StyleBundle& ref = bundles.front();
  for (const StyleBundle& b : bundles) {
    if (b.style_vec.shape() != ref.style_vec.shape() || b.feature_maps.size() != ref.feature_maps.size()) {
      throw ShapeError("blend_styles: bundles are not shape-compatible");
    }
    for (size_t i = 0; i < b.feature_maps.size(); ++i) {
      if (b.feature_maps[i].shape() != ref.feature_maps[i].shape()) {
        throw ShapeError("blend_styles: feature map " + std::to_string(i) + " shapes differ");
      }
    }
  }
  auto gather = [&](auto member) {
    std::vector<const Tensor*> parts;
    for (const StyleBundle& b : bundles) parts.push_back(&member(b));
    return weighted_sum(parts, w);
  };
  StyleBundle out;
  out.style_vec = gather([](const StyleBundle& b) -> const Tensor& { return b.style_vec; });
  for (size_t i = 0; i < ref.feature_maps.size(); ++i) {
    out.feature_maps.push_back(gather([i](const StyleBundle& b) -> const Tensor& { return b.feature_maps[i]; }));
  }
  // Sketch union over contributing bundles.
  std::vector<float> sketch;
  Shape sketch_shape;
  for (size_t k = 0; k < bundles.size(); ++k) {
    const Tensor& s = bundles[k].style_sketch.tensor();
    if (w[k] == 0.0 || !s.defined()) continue;
    if (sketch.empty()) {
      sketch.assign(s.data().begin(), s.data().end());
      sketch_shape = s.shape();
    } else {
      if (s.shape() != sketch_shape) throw ShapeError("blend_styles: style sketch shapes differ");
      for (size_t i = 0; i < sketch.size(); ++i) sketch[i] = std::max(sketch[i], s.data()[i]);
    }
  }
  if (!sketch.empty()) out.style_sketch = SketchMask(Tensor(sketch_shape, std::move(sketch)));
  return out;
}

StyleBundle repeat_style(const StyleBundle& b, int64_t n) {
  if (b.style_vec.size(0) != 1) throw ContractError("repeat_style expects a batch-1 bundle");
  const std::vector<int64_t> rows(static_cast<size_t>(n), 0);
  StyleBundle out;
  out.style_vec = gather_rows(b.style_vec, rows);
  for (const Tensor& f : b.feature_maps) out.feature_maps.push_back(gather_rows(f, rows));
  if (b.style_sketch.tensor().defined()) out.style_sketch = SketchMask(gather_rows(b.style_sketch.tensor(), rows));
  return out;
}

std::vector<int> classify(const StyleEncoder& e, const Tensor& images) {
  NoGradGuard no_grad;
  constexpr int64_t kChunk = 64;
  std::vector<int> out;
  const int64_t n = images.size(0);
  for (int64_t start = 0; start < n; start += kChunk) {
    const int64_t end = std::min(n, start + kChunk);
    Tensor logits = e.run(slice(images, 0, start, end)).logits;
    const int64_t k = logits.size(1);
    for (int64_t i = 0; i < end - start; ++i) {
      const float* row = logits.data().data() + i * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

namespace {

double accuracy_of(const StyleEncoder& e, const Tensor& images, const std::vector<int>& labels) {
  const std::vector<int> pred = classify(e, images);
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace

EncoderReport train_encoder(StyleEncoder& e, const Tensor& train_images, const std::vector<int>& train_labels,
                            const Tensor& val_images, const std::vector<int>& val_labels,
                            const EncoderTrainConfig& cfg) {
  const int k = e.config().num_styles;
  for (const auto* labels : {&train_labels, &val_labels}) {
    for (int l : *labels) {
      if (l < 0 || l >= k) throw ConfigError("style label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  if (std::set<int>(train_labels.begin(), train_labels.end()).size() < 2) {
    throw ConfigError("encoder training needs at least two distinct styles");
  }
  if (static_cast<int64_t>(train_labels.size()) != train_images.size(0) ||
      static_cast<int64_t>(val_labels.size()) != val_images.size(0) || val_labels.empty()) {
    throw ConfigError("encoder training: image and label counts differ or validation set is empty");
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("encoder training needs positive epochs and batch size");

  e.set_trainable(true);
  AdamOptions opt;
  opt.lr = cfg.lr;
  opt.beta1 = 0.9f;
  Adam adam(e.parameters(), opt);
  const int64_t n = train_images.size(0);
  EncoderReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t end = std::min(n, start + cfg.batch_size);
      std::vector<int64_t> rows(order.begin() + start, order.begin() + end);
      std::vector<int> labels;
      for (int64_t r : rows) labels.push_back(train_labels[r]);
      Tensor loss = cross_entropy(e.run(gather_rows(train_images, rows)).logits, labels);
      adam.zero_grad();
      loss.backward();
      adam.step();
    }
    report.epochs_run = epoch + 1;
    report.val_accuracy = accuracy_of(e, val_images, val_labels);
    if (report.val_accuracy >= cfg.target_accuracy) break;
  }
  report.train_accuracy = accuracy_of(e, train_images, train_labels);
  e.zero_grad();
  if (report.val_accuracy < cfg.min_accuracy) {
    throw TrainingError("style encoder reached only " + std::to_string(report.val_accuracy) +
                        " validation accuracy (needs " + std::to_string(cfg.min_accuracy) + ")");
  }
  e.mark_trained();
  return report;
}

// ---------------------------------------------------------------------------

Generator::Generator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int c = cfg.base_channels;
  enc = {Conv2d(1, c, 3, 1, 1, rng), Conv2d(c, 2 * c, 3, 2, 1, rng), Conv2d(2 * c, 4 * c, 3, 2, 1, rng)};
  for (int i = 0; i < cfg.attn_blocks; ++i) bottleneck.emplace_back(4 * c, cfg.style_dim, rng);
  const auto taps = cfg.tap_sizes();
  // Decoder stage inputs: upsampled features (+ FMT features) (+ skip).
  const int extra16 = cfg.fmt_at(taps[2]) ? 4 * c : 0;
  const int extra32 = cfg.fmt_at(taps[1]) ? 2 * c : 0;
  const int extra64 = cfg.fmt_at(taps[0]) ? c : 0;
  dec = {Conv2d(4 * c + extra16, 2 * c, 3, 1, 1, rng), Conv2d(2 * c + extra32 + 2 * c, c, 3, 1, 1, rng),
         Conv2d(c + extra64 + c, c, 3, 1, 1, rng)};
  dmi = {DualMaskInjection(2 * c), DualMaskInjection(c), DualMaskInjection(c)};
  to_rgb = Conv2d(c, 3, 3, 1, 1, rng);
}

Tensor Generator::forward(const SketchMask& sketch, const StyleBundle& style, GeneratorTrace* trace) const {
  const int s = cfg_.image_size;
  if (sketch.height() != s || sketch.width() != s) {
    throw ShapeError("generator expects " + std::to_string(s) + "x" + std::to_string(s) + " sketches, got " +
                     shape_str(sketch.tensor().shape()));
  }
  const auto taps = cfg_.tap_sizes();
  if (style.feature_maps.size() != 3) throw ShapeError("style bundle must carry three feature maps");
  for (size_t i = 0; i < 3; ++i) {
    const Tensor& f = style.feature_maps[i];
    if (f.dim() != 4 || f.size(2) != taps[i] || f.size(3) != taps[i] || f.size(0) != sketch.batch()) {
      throw ShapeError("style feature map " + shape_str(f.shape()) + " does not fit " + std::to_string(taps[i]) +
                       "x" + std::to_string(taps[i]) + " for batch " + std::to_string(sketch.batch()));
    }
  }
  const bool needs_sketch = cfg_.fmt_at(taps[0]) || cfg_.fmt_at(taps[1]) || cfg_.fmt_at(taps[2]);
  if (needs_sketch && !style.style_sketch.tensor().defined()) {
    throw ContractError("FMT needs the style image's sketch in the style bundle");
  }

  std::array<SketchMask, 3> masks;
  std::array<SketchMask, 3> style_masks;
  for (size_t i = 0; i < 3; ++i) {
    masks[i] = i == 0 ? sketch : downsample_mask(sketch, taps[i], taps[i]);
    if (needs_sketch) {
      style_masks[i] = i == 0 ? style.style_sketch : downsample_mask(style.style_sketch, taps[i], taps[i]);
    }
  }
  FmtConfig fmt_cfg;
  fmt_cfg.resolutions = cfg_.fmt_resolutions;

  // Encoder.
  std::array<Tensor, 3> skips;
  Tensor x = sketch.tensor();
  for (size_t i = 0; i < 3; ++i) {
    x = enc[i].forward(x);
    if (i > 0) x = instance_norm(x, kNormEps);
    x = lrelu(x);
    skips[i] = x;
  }
  Tensor h = x;
  for (const AttnResBlock& b : bottleneck) h = b.forward(h, style.style_vec);

  // Decoder, smallest resolution first.
  auto inject = [&](const Tensor& feat, size_t tap) {
    const Tensor& f_style = style.feature_maps[tap];
    if (cfg_.fmt_at(taps[tap])) return concat({feat, fmt(f_style, style_masks[tap], masks[tap], fmt_cfg)}, 1);
    return adain(feat, moments_of(f_style));
  };
  // dec[i] runs at tap 2 - i; DMI sees the sketch at that size.
  auto relocate = [&](Tensor feat, size_t stage) {
    const size_t tap = 2 - stage;
    if (!cfg_.dmi_at(taps[tap])) return feat;
    DmiTrace t;
    feat = dmi[stage].forward(feat, masks[tap], trace ? &t : nullptr);
    if (trace) trace->dmi.push_back(t);
    return feat;
  };
  h = upsample_nearest(lrelu(relocate(dec[0].forward(inject(h, 2)), 0)), 2);
  h = upsample_nearest(lrelu(relocate(dec[1].forward(concat({inject(h, 1), skips[1]}, 1)), 1)), 2);
  h = lrelu(relocate(dec[2].forward(concat({inject(h, 0), skips[0]}, 1)), 2));
  return tanh(to_rgb.forward(h));
}

void Generator::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  for (size_t i = 0; i < enc.size(); ++i) enc[i].collect_parameters(prefix + "enc" + std::to_string(i) + ".", out);
  for (size_t i = 0; i < bottleneck.size(); ++i) {
    bottleneck[i].collect_parameters(prefix + "attn" + std::to_string(i) + ".", out);
  }
  const auto taps = cfg_.tap_sizes();
  for (size_t i = 0; i < dec.size(); ++i) {
    dec[i].collect_parameters(prefix + "dec" + std::to_string(i) + ".", out);
    if (cfg_.dmi_at(taps[2 - i])) dmi[i].collect_parameters(prefix + "dmi" + std::to_string(i) + ".", out);
  }
  to_rgb.collect_parameters(prefix + "to_rgb.", out);
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int c = cfg.base_channels;
  trunk = {Conv2d(3, c, 3, 2, 1, rng), Conv2d(c, 2 * c, 3, 2, 1, rng), Conv2d(2 * c, 4 * c, 3, 2, 1, rng)};
  realness = Conv2d(4 * c, 1, 3, 1, 1, rng);
  if (cfg.d_heads == DHeads::none) return;
  if (cfg.d_heads == DHeads::idn) {
    idn = IdnPredictor(4 * c, cfg.image_size / 8, rng);
    style_fc1 = Linear(8 * c, cfg.style_dim, rng);
  } else {
    style_branch = Conv2d(4 * c, 4 * c, 3, 1, 1, rng);
    style_fc1 = Linear(4 * c, cfg.style_dim, rng);
  }
  style_fc2 = Linear(cfg.style_dim, cfg.style_dim, rng);
  content = {Conv2d(4 * c, c, 3, 1, 1, rng), Conv2d(c, c, 3, 1, 1, rng), Conv2d(c, 1, 3, 1, 1, rng)};
}

// Trunk output is S/8; two upsamplings (x2, x4) restore S.
Tensor Discriminator::content_head(const Tensor& f) const {
  Tensor y = upsample_nearest(lrelu(content[0].forward(f)), 2);
  y = upsample_nearest(lrelu(content[1].forward(y)), 4);
  return sigmoid(content[2].forward(y));
}

DiscriminatorOutput Discriminator::forward(const Tensor& images, DiscriminatorTrace* trace) const {
  require_image_batch(images, cfg_.image_size, "discriminator");
  Tensor f = images;
  for (const Conv2d& conv : trunk) f = lrelu(conv.forward(f));
  const int64_t n = images.size(0);
  DiscriminatorOutput out;
  out.realness_logit = reshape(global_avg_pool(realness.forward(f)), {n, 1});
  if (cfg_.d_heads == DHeads::idn) {
    IdnOutput o = idn_forward(f, idn);
    const int64_t c = f.size(1);
    Tensor moments = reshape(concat({o.mu_pred, o.sigma_pred}, 1), {n, 2 * c});
    out.style_vec = style_fc2.forward(lrelu(style_fc1.forward(moments)));
    out.sketch_pred = content_head(o.f_content);
    if (trace) trace->idn = o;
  } else if (cfg_.d_heads == DHeads::two_branch) {
    Tensor s = global_avg_pool(lrelu(style_branch.forward(f)));
    out.style_vec = style_fc2.forward(lrelu(style_fc1.forward(reshape(s, {n, s.size(1)}))));
    out.sketch_pred = content_head(f);
  }
  return out;
}

void Discriminator::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  for (size_t i = 0; i < trunk.size(); ++i) trunk[i].collect_parameters(prefix + "trunk" + std::to_string(i) + ".", out);
  realness.collect_parameters(prefix + "realness.", out);
  if (cfg_.d_heads == DHeads::none) return;
  if (cfg_.d_heads == DHeads::idn) {
    idn.collect_parameters(prefix + "idn.", out);
  } else {
    style_branch.collect_parameters(prefix + "style_branch.", out);
  }
  style_fc1.collect_parameters(prefix + "style_fc1.", out);
  style_fc2.collect_parameters(prefix + "style_fc2.", out);
  for (size_t i = 0; i < content.size(); ++i) {
    content[i].collect_parameters(prefix + "content" + std::to_string(i) + ".", out);
  }
}

// ---------------------------------------------------------------------------

Networks::Networks(const ModelConfig& cfg, uint64_t seed) : config(cfg) {
  cfg.validate();
  Rng e_rng(derive_seed(seed, 1));
  Rng c_rng(derive_seed(seed, 2));
  Rng g_rng(derive_seed(seed, 3));
  Rng d_rng(derive_seed(seed, 4));
  encoder = StyleEncoder(cfg, e_rng);
  classifier = StyleEncoder(cfg, c_rng);
  generator = Generator(cfg, g_rng);
  discriminator = Discriminator(cfg, d_rng);
}

std::vector<NamedParameter> Networks::named_parameters() {
  std::vector<NamedParameter> out;
  encoder.collect_parameters("encoder.", out);
  classifier.collect_parameters("classifier.", out);
  generator.collect_parameters("generator.", out);
  discriminator.collect_parameters("discriminator.", out);
  return out;
}

namespace {

constexpr const char* kCheckpointFormat = "stylesketch-checkpoint";

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint manifest " + path.string());
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("format", "") != kCheckpointFormat) throw IoError(path.string() + " is not a checkpoint manifest");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, Networks& nets, const CheckpointMeta& meta) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::json params = nlohmann::json::array();
  for (const NamedParameter& np : nets.named_parameters()) {
    const std::string file = np.name + ".ptnsr";
    save_tensor(dir / file, np.param->value());
    params.push_back({{"name", np.name}, {"file", file}, {"shape", np.param->shape()}});
  }
  nlohmann::json manifest = {{"format", kCheckpointFormat},
                             {"version", 1},
                             {"config", to_json(nets.config)},
                             {"step", meta.step},
                             {"seed", meta.seed},
                             {"encoder_trained", nets.encoder.trained()},
                             {"classifier_trained", nets.classifier.trained()},
                             {"extra", meta.extra},
                             {"parameters", params}};
  const std::string text = manifest.dump(2) + "\n";
  write_file_bytes(dir / "manifest.json", std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

std::unique_ptr<Networks> load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta) {
  const nlohmann::json manifest = read_manifest(dir);
  std::unique_ptr<Networks> nets;
  std::map<std::string, std::string> files;
  try {
    ModelConfig cfg = model_config_from_json(manifest.at("config"));
    nets = std::make_unique<Networks>(cfg, 0);
    for (const auto& p : manifest.at("parameters")) files[p.at("name").get<std::string>()] = p.at("file");
    if (meta) {
      meta->step = manifest.at("step").get<int64_t>();
      meta->seed = manifest.at("seed").get<uint64_t>();
      meta->extra = manifest.value("extra", nlohmann::json::object());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("checkpoint " + dir.string() + " has an invalid config: " + e.what());
  }
  const auto named = nets->named_parameters();
  if (named.size() != files.size()) {
    throw IoError("checkpoint " + dir.string() + " lists " + std::to_string(files.size()) + " parameters, expected " +
                  std::to_string(named.size()));
  }
  for (const NamedParameter& np : named) {
    auto it = files.find(np.name);
    if (it == files.end()) throw IoError("checkpoint " + dir.string() + " lacks parameter " + np.name);
    Tensor t = load_tensor(dir / it->second);
    if (t.shape() != np.param->shape()) {
      throw ShapeError("checkpoint parameter " + np.name + " has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(np.param->shape()));
    }
    std::copy(t.data().begin(), t.data().end(), np.param->mutable_value().begin());
  }
  if (manifest.value("encoder_trained", false)) nets->encoder.mark_trained();
  if (manifest.value("classifier_trained", false)) nets->classifier.mark_trained();
  return nets;
}

uint64_t parameter_checksum(Module& m) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (Parameter* p : m.parameters()) {
    const auto bytes = std::as_bytes(p->value().data());
    for (std::byte b : bytes) {
      h ^= static_cast<uint8_t>(b);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace stylesketch
