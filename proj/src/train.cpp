#include "stylesketch/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "stylesketch/error.hpp"
#include "stylesketch/metrics.hpp"
#include "stylesketch/ops.hpp"

namespace stylesketch {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kOrderStream = 0x1000;
constexpr uint64_t kStylePickStream = 0x2000;
constexpr uint64_t kClassifierStream = 0x3000;

template <typename F>
void read_object(const nlohmann::json& j, const std::string& what, F&& on_key) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!on_key(key, value)) throw ConfigError("unknown " + what + " key '" + key + "'");
  }
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> value_of(const Tensor& t) {
  if (!t.defined()) return std::nullopt;
  return static_cast<double>(t.item());
}

double mean_of(const Tensor& a, const Tensor& b) { return 0.5 * (static_cast<double>(a.item()) + b.item()); }

std::optional<double> mean_of_optional(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) return std::nullopt;
  return mean_of(a, b);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d", epoch);
  return buf;
}

// Seeded permutation with no fixed points (for n >= 2).
std::vector<int64_t> derangement(int64_t n, uint64_t seed) {
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (int64_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % static_cast<uint64_t>(i + 1)]);
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t k = 0; k < n; ++k) out[order[k]] = order[(k + 1) % n];
  return out;
}

std::vector<int64_t> rows_of_style(const Dataset& ds, const std::vector<int64_t>& pool, int style) {
  std::vector<int64_t> out;
  for (int64_t i : pool) {
    if (ds.labels[i] == style) out.push_back(i);
  }
  return out;
}

StyleBundle style_of(const Networks& nets, const Dataset& ds, int64_t row) {
  StyleBundle b = extract_style(nets.encoder, ds.images_at({row}));
  b.style_sketch = ds.sketches_at({row});
  return b;
}

// Renders every input sketch with one reference style, in chunks.
Tensor render(const Networks& nets, const SketchMask& sketches, const StyleBundle& ref, int chunk) {
  NoGradGuard no_grad;
  std::vector<Tensor> parts;
  for (int64_t start = 0; start < sketches.batch(); start += chunk) {
    const int64_t end = std::min<int64_t>(sketches.batch(), start + chunk);
    const SketchMask part(slice(sketches.tensor(), 0, start, end));
    parts.push_back(nets.generator.forward(part, repeat_style(ref, end - start)));
  }
  return concat(parts, 0);
}

Tensor style_vectors(const StyleEncoder& e, const Tensor& images, int chunk) {
  std::vector<Tensor> parts;
  for (int64_t start = 0; start < images.size(0); start += chunk) {
    const int64_t end = std::min<int64_t>(images.size(0), start + chunk);
    parts.push_back(extract_style(e, slice(images, 0, start, end)).style_vec);
  }
  return concat(parts, 0);
}

struct StyleCase {
  Tensor generated;    // [T, 3, S, S]
  SketchMask input;    // [T, 1, S, S]
  Tensor reference;    // [1, 3, S, S]
  Tensor real;         // real images of this style for Frechet statistics
};

EvalReport score(const Networks& nets, const std::vector<StyleCase>& cases, const EvalOptions& options) {
  const int k = static_cast<int>(cases.size());
  EvalReport r;
  int64_t generated_total = 0;
  int64_t correct = 0;
  double gram_sum = 0.0;
  int64_t gram_count = 0;
  double pdar_in = 0.0, pdar_sh = 0.0, l1_in = 0.0, l1_sh = 0.0;
  std::vector<GaussianStats> gen_stats, real_stats;
  for (int s = 0; s < k; ++s) {
    const StyleCase& c = cases[s];
    const int64_t t = c.generated.size(0);
    generated_total += t;
    const std::vector<int> predicted = classify(nets.classifier, c.generated);
    correct += std::count(predicted.begin(), predicted.end(), s);

    gen_stats.push_back(gaussian_stats(style_vectors(nets.encoder, c.generated, options.batch_size)));
    real_stats.push_back(gaussian_stats(style_vectors(nets.encoder, c.real, options.batch_size)));

    const StyleBundle ref = extract_style(nets.encoder, c.reference);
    for (int64_t start = 0; start < t; start += options.batch_size) {
      const int64_t end = std::min<int64_t>(t, start + options.batch_size);
      const StyleBundle gen = extract_style(nets.encoder, slice(c.generated, 0, start, end));
      for (size_t tap = 0; tap < gen.feature_maps.size(); ++tap) {
        for (int64_t i = 0; i < end - start; ++i) {
          gram_sum += gram_l2(slice(gen.feature_maps[tap], 0, i, i + 1), ref.feature_maps[tap]);
          ++gram_count;
        }
      }
    }

    const SketchMask produced = extract_sketch(c.generated);
    const std::vector<int64_t> perm = derangement(t, derive_seed(options.seed, static_cast<uint64_t>(s)));
    const SketchMask shuffled(gather_rows(c.input.tensor(), perm));
    pdar_in += pdar(produced, c.input) * t;
    pdar_sh += pdar(produced, shuffled) * t;
    l1_in += edge_l1(produced, c.input) * t;
    l1_sh += edge_l1(produced, shuffled) * t;
  }

  r.classification = static_cast<double>(correct) / static_cast<double>(generated_total);
  double within = 0.0, cross = 0.0;
  int pairs = 0;
  for (int s = 0; s < k; ++s) {
    within += frechet_distance(gen_stats[s], real_stats[s]);
    for (int u = 0; u < k; ++u) {
      if (u == s) continue;
      cross += frechet_distance(gen_stats[s], real_stats[u]);
      ++pairs;
    }
  }
  r.frechet_within = within / k;
  r.frechet_cross = pairs ? cross / pairs : 0.0;
  r.gram_l2 = gram_count ? gram_sum / static_cast<double>(gram_count) : 0.0;
  const double n = static_cast<double>(generated_total);
  r.pdar_input = pdar_in / n;
  r.pdar_shuffled = pdar_sh / n;
  r.edge_l1_input = l1_in / n;
  r.edge_l1_shuffled = l1_sh / n;

  const int64_t samples = generated_total;
  r.rows = {
      {"classification", r.classification, samples, options.seed},
      {"frechet_within", r.frechet_within, samples, options.seed},
      {"frechet_cross", r.frechet_cross, samples, options.seed},
      {"gram_l2", r.gram_l2, gram_count, options.seed},
      {"pdar_input", r.pdar_input, samples, options.seed},
      {"pdar_shuffled", r.pdar_shuffled, samples, options.seed},
      {"edge_l1_input", r.edge_l1_input, samples, options.seed},
      {"edge_l1_shuffled", r.edge_l1_shuffled, samples, options.seed},
  };
  return r;
}

void require_ready(const Networks& nets) {
  if (!nets.encoder.trained() || !nets.classifier.trained()) {
    throw ContractError("evaluation needs a trained style encoder and classifier");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be even and at least 2");
  if (max_steps < 0) throw ConfigError("max_steps must be nonnegative");
  if (!(optimizer.lr > 0.0f) || !(optimizer.beta1 >= 0.0f && optimizer.beta1 < 1.0f) ||
      !(optimizer.beta2 >= 0.0f && optimizer.beta2 < 1.0f) || !(optimizer.eps > 0.0f)) {
    throw ConfigError("optimizer needs lr > 0, betas in [0, 1), eps > 0");
  }
  if (encoder.epochs < 1 || encoder.batch_size < 1 || !(encoder.lr > 0.0f)) {
    throw ConfigError("encoder training needs positive epochs, batch size, and lr");
  }
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
  if (sample_every < 0) throw ConfigError("sample_every must be nonnegative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"model", to_json(c.model)},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"max_steps", c.max_steps},
      {"optimizer", {{"lr", c.optimizer.lr}, {"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2},
                     {"eps", c.optimizer.eps}}},
      {"loss_weights", {{"adv", c.weights.adv}, {"style", c.weights.style}, {"content", c.weights.content},
                        {"recon", c.weights.recon}, {"grad", c.weights.grad},
                        {"grad_on_activations", c.weights.grad_on_activations}}},
      {"encoder", {{"epochs", c.encoder.epochs}, {"batch_size", c.encoder.batch_size}, {"lr", c.encoder.lr},
                   {"seed", c.encoder.seed}, {"target_accuracy", c.encoder.target_accuracy},
                   {"min_accuracy", c.encoder.min_accuracy}}},
      {"seed", c.seed},
      {"checkpoint_every", c.checkpoint_every},
      {"sample_every", c.sample_every},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    read_object(j, "train config", [&](const std::string& key, const nlohmann::json& v) {
      if (key == "model") c.model = model_config_from_json(v);
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "max_steps") c.max_steps = v.get<int64_t>();
      else if (key == "seed") c.seed = v.get<uint64_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = v.get<int>();
      else if (key == "sample_every") c.sample_every = v.get<int>();
      else if (key == "optimizer") {
        read_object(v, "optimizer", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "lr") c.optimizer.lr = x.get<float>();
          else if (k == "beta1") c.optimizer.beta1 = x.get<float>();
          else if (k == "beta2") c.optimizer.beta2 = x.get<float>();
          else if (k == "eps") c.optimizer.eps = x.get<float>();
          else return false;
          return true;
        });
      } else if (key == "loss_weights") {
        read_object(v, "loss_weights", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "adv") c.weights.adv = x.get<float>();
          else if (k == "style") c.weights.style = x.get<float>();
          else if (k == "content") c.weights.content = x.get<float>();
          else if (k == "recon") c.weights.recon = x.get<float>();
          else if (k == "grad") c.weights.grad = x.get<float>();
          else if (k == "grad_on_activations") c.weights.grad_on_activations = x.get<bool>();
          else return false;
          return true;
        });
      } else if (key == "encoder") {
        read_object(v, "encoder", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "epochs") c.encoder.epochs = x.get<int>();
          else if (k == "batch_size") c.encoder.batch_size = x.get<int>();
          else if (k == "lr") c.encoder.lr = x.get<float>();
          else if (k == "seed") c.encoder.seed = x.get<uint64_t>();
          else if (k == "target_accuracy") c.encoder.target_accuracy = x.get<double>();
          else if (k == "min_accuracy") c.encoder.min_accuracy = x.get<double>();
          else return false;
          return true;
        });
      } else {
        return false;
      }
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read train config " + path.string());
  try {
    return train_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("train config " + path.string() + " is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const LossRecord& r) {
  return {{"step", r.step},
          {"d_total", r.d_total},
          {"d_real", r.d_real},
          {"d_fake", r.d_fake},
          {"d_style", optional_json(r.d_style)},
          {"d_content", optional_json(r.d_content)},
          {"g_total", r.g_total},
          {"g_adv", r.g_adv},
          {"g_style", optional_json(r.g_style)},
          {"g_content", optional_json(r.g_content)},
          {"g_recon", optional_json(r.g_recon)},
          {"g_grad", r.g_grad}};
}

bool operator==(const LossRecord& a, const LossRecord& b) {
  return a.step == b.step && a.d_total == b.d_total && a.d_real == b.d_real && a.d_fake == b.d_fake &&
         a.d_style == b.d_style && a.d_content == b.d_content && a.g_total == b.g_total && a.g_adv == b.g_adv &&
         a.g_grad == b.g_grad && a.g_style == b.g_style && a.g_content == b.g_content && a.g_recon == b.g_recon;
}

TrainBatch make_batch(const Dataset& ds, const StyleEncoder& e, const std::vector<int64_t>& content_rows,
                      const std::vector<int64_t>& style_rows, bool paired) {
  if (content_rows.size() != style_rows.size() || content_rows.empty()) {
    throw ContractError("a batch needs equally many content and style rows");
  }
  if (paired && content_rows != style_rows) throw ContractError("a paired batch takes its style from its content rows");
  TrainBatch b;
  b.sketch = ds.sketches_at(content_rows);
  b.style_images = ds.images_at(style_rows);
  b.style = extract_style(e, b.style_images);
  b.style.style_sketch = ds.sketches_at(style_rows);
  b.paired = paired;
  b.content_rows = content_rows;
  b.style_rows = style_rows;
  return b;
}

Optimizers::Optimizers(Networks& nets, const AdamOptions& options)
    : g(nets.generator.parameters(), options), d(nets.discriminator.parameters(), options) {}

nlohmann::json parameter_census(Networks& nets) {
  nlohmann::json out = nlohmann::json::array();
  std::vector<NamedParameter> params;
  nets.generator.collect_parameters("generator.", params);
  nets.discriminator.collect_parameters("discriminator.", params);
  for (const NamedParameter& np : params) {
    double sq = 0.0;
    bool finite = true;
    for (float v : np.param->value().data()) {
      finite = finite && std::isfinite(v);
      sq += static_cast<double>(v) * v;
    }
    out.push_back({{"name", np.name}, {"norm", finite ? nlohmann::json(std::sqrt(sq)) : nlohmann::json("non-finite")},
                   {"finite", finite}});
  }
  return out;
}

LossRecord train_step(Networks& nets, Optimizers& opt, const TrainBatch& paired, const TrainBatch& unpaired,
                      const LossWeights& w, nlohmann::json* diagnostic) {
  if (!nets.encoder.trained()) throw ContractError("train_step needs a frozen, trained style encoder");
  if (!paired.paired || unpaired.paired) throw ContractError("train_step takes one paired and one unpaired batch");

  auto abort_if_non_finite = [&](const Tensor& loss, const char* phase) {
    const float v = loss.item();
    if (std::isfinite(v)) return;
    if (diagnostic) {
      *diagnostic = {{"phase", phase},
                     {"loss", std::to_string(v)},
                     {"paired_rows", paired.content_rows},
                     {"unpaired_content_rows", unpaired.content_rows},
                     {"unpaired_style_rows", unpaired.style_rows},
                     {"parameters", parameter_census(nets)}};
    }
    throw NumericError(std::string("non-finite ") + phase + " loss (" + std::to_string(v) + ")");
  };

  const Tensor fake_p = nets.generator.forward(paired.sketch, paired.style);
  const Tensor fake_u = nets.generator.forward(unpaired.sketch, unpaired.style);

  opt.d.zero_grad();
  const Tensor real = concat({paired.style_images, unpaired.style_images}, 0);
  const DiscriminatorOutput real_out = nets.discriminator.forward(real);
  const DiscriminatorOutput fake_out = nets.discriminator.forward(concat({fake_p, fake_u}, 0).detach());
  const DLossTerms dt = d_loss_terms(
      real_out, fake_out, concat({paired.style.style_vec, unpaired.style.style_vec}, 0),
      concat({paired.style.style_sketch.tensor(), unpaired.style.style_sketch.tensor()}, 0));
  abort_if_non_finite(dt.total, "discriminator");
  dt.total.backward();
  opt.d.step();

  opt.g.zero_grad();
  GLossTerms gp = g_loss_terms(nets.discriminator.forward(fake_p), paired.style.style_vec,
                               paired.sketch.tensor(), fake_p, paired.style_images, true, w);
  GLossTerms gu = g_loss_terms(nets.discriminator.forward(fake_u), unpaired.style.style_vec,
                               unpaired.sketch.tensor(), fake_u, unpaired.style_images, false, w);
  if (w.grad_on_activations) {
    for (auto [terms, fake, batch] : {std::tuple{&gp, &fake_p, &paired}, std::tuple{&gu, &fake_u, &unpaired}}) {
      const Tensor act = activation_gradient_match(nets.encoder.run(*fake).taps, batch->style.feature_maps);
      if (!act.defined()) continue;
      terms->grad = terms->grad + act;
      terms->total = terms->total + act * w.grad;
    }
  }
  const Tensor g_total = (gp.total + gu.total) * 0.5f;
  abort_if_non_finite(g_total, "generator");
  g_total.backward();
  opt.g.step();
  opt.d.zero_grad();

  LossRecord r;
  r.d_total = dt.total.item();
  r.d_real = dt.real.item();
  r.d_fake = dt.fake.item();
  r.d_style = value_of(dt.style);
  r.d_content = value_of(dt.content);
  r.g_total = g_total.item();
  r.g_adv = mean_of(gp.adv, gu.adv);
  r.g_grad = mean_of(gp.grad, gu.grad);
  r.g_style = mean_of_optional(gp.style, gu.style);
  r.g_content = mean_of_optional(gp.content, gu.content);
  // Unpaired rows contribute no reconstruction term.
  if (gp.recon.defined()) r.g_recon = 0.5 * gp.recon.item();
  return r;
}

// ---------------------------------------------------------------------------

const MetricRow* EvalReport::find(const std::string& name) const {
  for (const MetricRow& r : rows) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const MetricRow& m : r.rows) {
    rows.push_back({{"metric", m.name}, {"value", m.value}, {"samples", m.samples}, {"seed", m.seed}});
  }
  return rows;
}

bool operator==(const EvalReport& a, const EvalReport& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (size_t i = 0; i < a.rows.size(); ++i) {
    const MetricRow &x = a.rows[i], &y = b.rows[i];
    if (x.name != y.name || x.value != y.value || x.samples != y.samples || x.seed != y.seed) return false;
  }
  return true;
}

EvalReport evaluate(const Networks& nets, const Dataset& ds, const EvalOptions& options) {
  require_ready(nets);
  if (ds.test.empty()) throw ContractError("evaluation needs a nonempty test split");
  const int k = static_cast<int>(ds.spec.styles.size());
  const SketchMask inputs = ds.sketches_at(ds.test);
  std::vector<int64_t> all(static_cast<size_t>(ds.size()));
  for (int64_t i = 0; i < ds.size(); ++i) all[i] = i;
  std::vector<StyleCase> cases;
  for (int s = 0; s < k; ++s) {
    std::vector<int64_t> refs = rows_of_style(ds, ds.test, s);
    if (refs.empty()) refs = rows_of_style(ds, ds.train, s);
    if (refs.empty()) throw ContractError("style " + std::to_string(s) + " has no images");
    StyleCase c;
    c.reference = ds.images_at({refs.front()});
    c.generated = render(nets, inputs, style_of(nets, ds, refs.front()), options.batch_size);
    c.input = inputs;
    c.real = ds.images_at(rows_of_style(ds, all, s));
    cases.push_back(std::move(c));
  }
  return score(nets, cases, options);
}

EvalReport evaluate_real(const Networks& nets, const Dataset& ds, const EvalOptions& options) {
  require_ready(nets);
  const int k = static_cast<int>(ds.spec.styles.size());
  std::vector<StyleCase> cases;
  for (int s = 0; s < k; ++s) {
    const std::vector<int64_t> rows = rows_of_style(ds, ds.test, s);
    if (rows.empty()) throw ContractError("style " + std::to_string(s) + " has no test images");
    StyleCase c;
    c.generated = ds.images_at(rows);
    c.input = ds.sketches_at(rows);
    c.reference = ds.images_at({rows.front()});
    c.real = c.generated;
    cases.push_back(std::move(c));
  }
  return score(nets, cases, options);
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const RunReport& r) {
  nlohmann::json losses = nlohmann::json::array();
  for (const LossRecord& l : r.losses) losses.push_back(to_json(l));
  auto enc = [](const EncoderReport& e) {
    return nlohmann::json{
        {"train_accuracy", e.train_accuracy}, {"val_accuracy", e.val_accuracy}, {"epochs_run", e.epochs_run}};
  };
  return {{"config", to_json(r.config)},
          {"encoder", enc(r.encoder)},
          {"classifier", enc(r.classifier)},
          {"metrics", to_json(r.metrics)},
          {"losses", losses},
          {"wall_seconds", r.wall_seconds}};
}

std::string format_report(const RunReport& r) {
  std::ostringstream out;
  const ModelConfig& m = r.config.model;
  out << "run: seed " << r.config.seed << ", " << r.config.epochs << " epochs, batch " << r.config.batch_size
      << ", image " << m.image_size << ", dmi " << (m.dmi ? "on" : "off") << ", fmt " << (m.fmt ? "on" : "off")
      << ", d_heads " << to_string(m.d_heads) << "\n";
  out << "style encoder: val accuracy " << r.encoder.val_accuracy << " after " << r.encoder.epochs_run << " epochs\n";
  out << "classifier:    val accuracy " << r.classifier.val_accuracy << " after " << r.classifier.epochs_run
      << " epochs\n";
  out << "steps: " << r.losses.size() << ", wall clock " << r.wall_seconds << " s\n\n";

  char line[160];
  std::snprintf(line, sizeof line, "%-18s %14s %8s %6s\n", "metric", "value", "samples", "seed");
  out << line;
  for (const MetricRow& row : r.metrics.rows) {
    std::snprintf(line, sizeof line, "%-18s %14.6f %8lld %6llu\n", row.name.c_str(), row.value,
                  static_cast<long long>(row.samples), static_cast<unsigned long long>(row.seed));
    out << line;
  }

  if (!r.losses.empty()) {
    out << "\nloss by epoch (mean d_total / g_total)\n";
    const int64_t per_epoch =
        std::max<int64_t>(1, static_cast<int64_t>(r.losses.size()) / std::max(1, r.config.epochs));
    for (int64_t start = 0, epoch = 0; start < static_cast<int64_t>(r.losses.size()); start += per_epoch, ++epoch) {
      const int64_t end = std::min<int64_t>(static_cast<int64_t>(r.losses.size()), start + per_epoch);
      double d = 0.0, g = 0.0;
      for (int64_t i = start; i < end; ++i) {
        d += r.losses[i].d_total;
        g += r.losses[i].g_total;
      }
      std::snprintf(line, sizeof line, "  %3lld  %10.5f  %10.5f\n", static_cast<long long>(epoch), d / (end - start),
                    g / (end - start));
      out << line;
    }
  }
  return out.str();
}

Trainer::Trainer(TrainConfig cfg, const Dataset& ds)
    : cfg_((cfg.validate(), std::move(cfg))), ds_(ds), nets_(cfg_.model, cfg_.seed), opt_(nets_, cfg_.optimizer) {
  if (ds.spec.resolution != cfg_.model.image_size) {
    throw ConfigError("dataset resolution " + std::to_string(ds.spec.resolution) + " differs from model image size " +
                      std::to_string(cfg_.model.image_size));
  }
  if (static_cast<int>(ds.spec.styles.size()) != cfg_.model.num_styles) {
    throw ConfigError("dataset has " + std::to_string(ds.spec.styles.size()) + " styles, model expects " +
                      std::to_string(cfg_.model.num_styles));
  }
  if (static_cast<int64_t>(ds.train.size()) < cfg_.batch_size) throw ConfigError("train split smaller than a batch");
}

void Trainer::prepare() {
  const Tensor tr = ds_.images_at(ds_.train), te = ds_.images_at(ds_.test);
  const std::vector<int> ltr = ds_.labels_at(ds_.train), lte = ds_.labels_at(ds_.test);
  if (!nets_.encoder.trained()) encoder_report_ = train_encoder(nets_.encoder, tr, ltr, te, lte, cfg_.encoder);
  if (!nets_.classifier.trained()) {
    EncoderTrainConfig c = cfg_.encoder;
    c.seed = derive_seed(c.seed, kClassifierStream);
    classifier_report_ = train_encoder(nets_.classifier, tr, ltr, te, lte, c);
  }
}

std::vector<LossRecord> Trainer::run_epoch(int epoch) {
  const int64_t n = static_cast<int64_t>(ds_.train.size());
  std::vector<int64_t> order = ds_.train;
  Rng order_rng(derive_seed(cfg_.seed, kOrderStream + static_cast<uint64_t>(epoch)));
  for (int64_t i = n - 1; i > 0; --i) std::swap(order[i], order[order_rng() % static_cast<uint64_t>(i + 1)]);
  Rng pick(derive_seed(cfg_.seed, kStylePickStream + static_cast<uint64_t>(epoch)));

  const int64_t half = cfg_.batch_size / 2;
  std::vector<LossRecord> records;
  for (int64_t start = 0; start + cfg_.batch_size <= n; start += cfg_.batch_size) {
    if (cfg_.max_steps > 0 && step_ >= cfg_.max_steps) break;
    const std::vector<int64_t> paired(order.begin() + start, order.begin() + start + half);
    const std::vector<int64_t> content(order.begin() + start + half, order.begin() + start + cfg_.batch_size);
    std::vector<int64_t> style;
    for (int64_t c : content) {
      int64_t j = static_cast<int64_t>(pick() % static_cast<uint64_t>(n));
      if (ds_.train[j] == c) j = (j + 1) % n;
      style.push_back(ds_.train[j]);
    }
    const TrainBatch bp = make_batch(ds_, nets_.encoder, paired, paired, true);
    const TrainBatch bu = make_batch(ds_, nets_.encoder, content, style, false);
    nlohmann::json diagnostic;
    try {
      LossRecord r = train_step(nets_, opt_, bp, bu, cfg_.weights, &diagnostic);
      r.step = step_++;
      records.push_back(r);
    } catch (const NumericError&) {
      if (!diagnostic_dir_.empty()) {
        diagnostic["step"] = step_;
        diagnostic["epoch"] = epoch;
        write_text(diagnostic_dir_ / "diagnostic.json", diagnostic.dump(2));
      }
      throw;
    }
  }
  return records;
}

void Trainer::write_samples(const fs::path& path) const {
  NoGradGuard no_grad;
  const int k = cfg_.model.num_styles;
  const int64_t cols = std::min<int64_t>(4, static_cast<int64_t>(ds_.test.size()));
  const std::vector<int64_t> rows(ds_.test.begin(), ds_.test.begin() + cols);
  const SketchMask sketches = ds_.sketches_at(rows);
  const Tensor shown = sketches.tensor() * 2.0f + (-1.0f);
  std::vector<Tensor> tiles = {concat({shown, shown, shown}, 1)};
  for (int s = 0; s < k; ++s) {
    std::vector<int64_t> refs = rows_of_style(ds_, ds_.test, s);
    if (refs.empty()) continue;
    tiles.push_back(render(nets_, sketches, style_of(nets_, ds_, refs.front()), static_cast<int>(cols)));
  }
  save_png(image_grid(concat(tiles, 0), static_cast<int>(cols)), path);
}

RunReport Trainer::run(const fs::path& run_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool write = !run_dir.empty();
  if (write) {
    std::error_code ec;
    fs::create_directories(run_dir / "checkpoints", ec);
    if (cfg_.sample_every > 0) fs::create_directories(run_dir / "samples", ec);
    if (ec) throw IoError("cannot create run directory " + run_dir.string() + ": " + ec.message());
    write_text(run_dir / "config.json", to_json(cfg_).dump(2) + "\n");
    diagnostic_dir_ = run_dir;
  }

  RunReport report;
  report.config = cfg_;
  prepare();
  report.encoder = encoder_report_;
  report.classifier = classifier_report_;

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::vector<LossRecord> records = run_epoch(epoch);
    report.losses.insert(report.losses.end(), records.begin(), records.end());
    const bool last = epoch + 1 == cfg_.epochs || (cfg_.max_steps > 0 && step_ >= cfg_.max_steps);
    if (write) {
      if (cfg_.sample_every > 0 && ((epoch + 1) % cfg_.sample_every == 0 || last)) {
        write_samples(run_dir / "samples" / (epoch_name(epoch) + ".png"));
      }
      if ((epoch + 1) % cfg_.checkpoint_every == 0 || last) {
        CheckpointMeta meta{step_, cfg_.seed, {{"epoch", epoch}}};
        save_checkpoint(run_dir / "checkpoints" / (last ? std::string("final") : epoch_name(epoch)), nets_, meta);
      }
    }
    if (last) break;
  }

  report.metrics = evaluate(nets_, ds_, EvalOptions{cfg_.seed});
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (write) {
    write_text(run_dir / "report.json", to_json(report).dump(2) + "\n");
    write_text(run_dir / "report.txt", format_report(report));
  }
  return report;
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, TrainConfig>> ablation_grid(const TrainConfig& base) {
  auto with = [&](bool dmi, bool fmt, DHeads heads) {
    TrainConfig c = base;
    c.model.dmi = dmi;
    c.model.fmt = fmt;
    c.model.d_heads = heads;
    return c;
  };
  return {
      {"baseline", with(false, false, DHeads::none)},
      {"dmi", with(true, false, DHeads::none)},
      {"fmt", with(true, true, DHeads::none)},
      {"2b", with(true, true, DHeads::two_branch)},
      {"idn", with(true, true, DHeads::idn)},
  };
}

std::vector<RunReport> run_ablation(const TrainConfig& base, const Dataset& ds, const fs::path& run_dir) {
  std::vector<RunReport> reports;
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& [name, cfg] : ablation_grid(base)) {
    Trainer t(cfg, ds);
    reports.push_back(t.run(run_dir.empty() ? fs::path() : run_dir / name));
    summary.push_back({{"name", name}, {"metrics", to_json(reports.back().metrics)}});
  }
  if (!run_dir.empty()) write_text(run_dir / "ablation.json", summary.dump(2) + "\n");
  return reports;
}

}  // namespace stylesketch
