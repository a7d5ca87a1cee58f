#include "stylesketch/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "stylesketch/error.hpp"
#include "stylesketch/nn.hpp"
#include "stylesketch/ops.hpp"

namespace stylesketch {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kSplitStream = 0x5011;

std::string texture_name(TextureKind t) {
  switch (t) {
    case TextureKind::flat: return "flat";
    case TextureKind::noise: return "noise";
    case TextureKind::vertical_gradient: return "vertical-gradient";
    case TextureKind::stripes: return "stripes";
  }
  return "?";
}

TextureKind texture_from(const std::string& s) {
  for (TextureKind t : {TextureKind::flat, TextureKind::noise, TextureKind::vertical_gradient, TextureKind::stripes}) {
    if (texture_name(t) == s) return t;
  }
  throw ConfigError("unknown texture '" + s + "'");
}

std::string contour_name(ContourStyle c) { return c == ContourStyle::sharp ? "sharp" : "soft"; }

ContourStyle contour_from(const std::string& s) {
  if (s == "sharp") return ContourStyle::sharp;
  if (s == "soft") return ContourStyle::soft;
  throw ConfigError("unknown contour style '" + s + "'");
}

void validate_recipe(const StyleRecipe& r, size_t index) {
  const std::string where = "style " + std::to_string(index) + " ('" + r.name + "')";
  if (r.palette.size() < 2) throw ConfigError(where + " needs a background and at least one shape colour");
  for (const Color& c : r.palette) {
    for (float v : c) {
      if (!std::isfinite(v) || v < -1.0f || v > 1.0f) throw ConfigError(where + " has a colour outside [-1, 1]");
    }
  }
  if (!std::isfinite(r.texture_amount) || r.texture_amount < 0.0f || r.texture_amount > 0.5f) {
    throw ConfigError(where + " texture_amount must be in [0, 0.5]");
  }
  if (!std::isfinite(r.stripe_period) || r.stripe_period < 2.0f) {
    throw ConfigError(where + " stripe_period must be at least 2 pixels");
  }
}

// ---------------------------------------------------------------------------
// Primitive rasterisation by signed distance (inside positive, pixel units).

struct Vec2 {
  double x, y;
};

struct Primitive {
  enum Kind { horizon, disk, triangle, rectangle } kind;
  Vec2 a{}, b{}, c{};  // horizon: a.y/b.y at x=0/x=S; disk: a centre, b.x radius
  Color color{};

  double signed_distance(Vec2 p, double size) const {
    switch (kind) {
      case horizon: {
        const double slope = (b.y - a.y) / size;
        return (p.y - (a.y + slope * p.x)) / std::sqrt(1.0 + slope * slope);
      }
      case disk: return b.x - std::hypot(p.x - a.x, p.y - a.y);
      case rectangle: return std::min({p.x - a.x, b.x - p.x, p.y - a.y, b.y - p.y});
      case triangle: {
        double d = std::numeric_limits<double>::infinity();
        const Vec2 v[3] = {a, b, c};
        for (int i = 0; i < 3; ++i) {
          const Vec2 u = v[i], w = v[(i + 1) % 3];
          const double ex = w.x - u.x, ey = w.y - u.y;
          d = std::min(d, (ex * (p.y - u.y) - ey * (p.x - u.x)) / std::hypot(ex, ey));
        }
        return d;
      }
    }
    return 0.0;
  }
};

Primitive random_primitive(const StyleRecipe& r, double s, Rng& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  Primitive p{};
  p.kind = static_cast<Primitive::Kind>(rng() % 4);
  p.color = r.palette[1 + rng() % (r.palette.size() - 1)];
  switch (p.kind) {
    case Primitive::horizon:
      p.a.y = u(0.7, 0.88) * s;
      p.b.y = u(0.7, 0.88) * s;
      break;
    case Primitive::disk:
      p.a = {u(0.2, 0.8) * s, u(0.2, 0.8) * s};
      p.b.x = u(0.08, 0.16) * s;
      break;
    case Primitive::rectangle: {
      const double w = u(0.12, 0.3) * s, h = u(0.12, 0.3) * s;
      p.a = {u(0.05 * s, 0.95 * s - w), u(0.05 * s, 0.95 * s - h)};
      p.b = {p.a.x + w, p.a.y + h};
      break;
    }
    case Primitive::triangle: {
      // Counter-clockwise in image coordinates (y down) with a minimum area.
      for (;;) {
        const Vec2 o{u(0.1, 0.6) * s, u(0.1, 0.6) * s};
        const double span = u(0.2, 0.3) * s;
        p.a = {o.x + u(0, span), o.y + u(0, span)};
        p.b = {o.x + u(0, span), o.y + u(0, span)};
        p.c = {o.x + u(0, span), o.y + u(0, span)};
        const double cross = (p.b.x - p.a.x) * (p.c.y - p.a.y) - (p.b.y - p.a.y) * (p.c.x - p.a.x);
        if (std::abs(cross) < 0.04 * s * s) continue;
        if (cross < 0) std::swap(p.b, p.c);
        break;
      }
      break;
    }
  }
  return p;
}

std::vector<float> render_image(const StyleRecipe& r, int size, Rng& rng) {
  const int64_t plane = static_cast<int64_t>(size) * size;
  std::vector<double> rgb(static_cast<size_t>(3 * plane));
  for (int ch = 0; ch < 3; ++ch) std::fill_n(rgb.begin() + ch * plane, plane, r.palette[0][ch]);

  const int count = 2 + static_cast<int>(rng() % 4);
  const double s = size;
  for (int k = 0; k < count; ++k) {
    const Primitive p = random_primitive(r, s, rng);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double d = p.signed_distance({x + 0.5, y + 0.5}, s);
        const double a = r.contour == ContourStyle::sharp ? (d >= 0.0 ? 1.0 : 0.0) : std::clamp(0.5 + d / 1.2, 0.0, 1.0);
        if (a == 0.0) continue;
        for (int ch = 0; ch < 3; ++ch) {
          double& v = rgb[ch * plane + y * size + x];
          v = (1.0 - a) * v + a * p.color[ch];
        }
      }
    }
  }

  std::normal_distribution<double> noise(0.0, r.texture_amount);
  std::vector<float> out(rgb.size());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double t = 0.0;
      switch (r.texture) {
        case TextureKind::flat: break;
        case TextureKind::noise: t = noise(rng); break;
        case TextureKind::vertical_gradient: t = r.texture_amount * (y / (s - 1.0) - 0.5); break;
        case TextureKind::stripes: t = r.texture_amount * std::sin(2.0 * std::numbers::pi * x / r.stripe_period); break;
      }
      for (int ch = 0; ch < 3; ++ch) {
        const int64_t i = ch * plane + y * size + x;
        // Stored on the 8-bit grid so that saved datasets reload exactly.
        out[i] = from_byte(to_byte(static_cast<float>(std::clamp(rgb[i] + t, -1.0, 1.0))));
      }
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  double total = 0.0;
  for (int d = -r; d <= r; ++d) total += k[d + r] = std::exp(-(d * d) / (2.0 * sigma * sigma));
  for (double& v : k) v /= total;
  return k;
}

// Separable blur with replicated borders.
std::vector<double> blur(const std::vector<double>& img, int64_t h, int64_t w, double sigma) {
  const std::vector<double> k = gaussian_kernel(sigma);
  const int64_t r = static_cast<int64_t>(k.size() / 2);
  std::vector<double> tmp(img.size()), out(img.size());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t d = -r; d <= r; ++d) acc += k[d + r] * img[y * w + std::clamp<int64_t>(x + d, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t d = -r; d <= r; ++d) acc += k[d + r] * tmp[std::clamp<int64_t>(y + d, 0, h - 1) * w + x];
      out[y * w + x] = acc;
    }
  return out;
}

std::string index_name(int64_t i) {
  std::ostringstream s;
  s.width(4);
  s.fill('0');
  s << i;
  return s.str() + ".png";
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<StyleRecipe> default_styles() {
  return {
      {"ember", {{-0.1f, -0.9f, -1.0f}, {1.0f, 0.6f, -0.2f}, {0.95f, 0.8f, 0.3f}}, TextureKind::flat, 0.0f, 8.0f,
       ContourStyle::sharp},
      {"tide", {{-0.2f, 0.7f, 1.0f}, {-1.0f, -0.9f, -0.3f}, {-0.9f, -0.8f, -0.6f}}, TextureKind::noise, 0.06f, 8.0f,
       ContourStyle::soft},
      {"moss", {{0.3f, 1.0f, 0.0f}, {-0.9f, -0.3f, -1.0f}, {-0.8f, -0.5f, -0.9f}}, TextureKind::vertical_gradient, 0.3f,
       8.0f, ContourStyle::sharp},
      {"violet", {{1.0f, 0.4f, 0.9f}, {-0.5f, -1.0f, -0.5f}, {-0.3f, -0.95f, -0.1f}}, TextureKind::stripes, 0.15f, 6.0f,
       ContourStyle::soft},
  };
}

void CorpusSpec::validate() const {
  if (styles.size() < 2) throw ConfigError("a corpus needs at least two styles");
  if (resolution != 32 && resolution != 64) {
    throw ConfigError("corpus resolution must be 32 or 64, got " + std::to_string(resolution));
  }
  if (n_images < static_cast<int>(styles.size())) throw ConfigError("n_images must cover every style at least once");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must be in (0, 1)");
  for (size_t i = 0; i < styles.size(); ++i) validate_recipe(styles[i], i);
}

nlohmann::json to_json(const CorpusSpec& s) {
  nlohmann::json styles = nlohmann::json::array();
  for (const StyleRecipe& r : s.styles) {
    styles.push_back({{"name", r.name},
                      {"palette", r.palette},
                      {"texture", texture_name(r.texture)},
                      {"texture_amount", r.texture_amount},
                      {"stripe_period", r.stripe_period},
                      {"contour", contour_name(r.contour)}});
  }
  return {{"n_images", s.n_images},
          {"resolution", s.resolution},
          {"seed", s.seed},
          {"train_fraction", s.train_fraction},
          {"styles", styles}};
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("corpus spec must be a JSON object");
  CorpusSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_images") s.n_images = value.get<int>();
      else if (key == "resolution") s.resolution = value.get<int>();
      else if (key == "seed") s.seed = value.get<uint64_t>();
      else if (key == "train_fraction") s.train_fraction = value.get<double>();
      else if (key == "styles") {
        s.styles.clear();
        for (const auto& js : value) {
          StyleRecipe r;
          for (const auto& [k, v] : js.items()) {
            if (k == "name") r.name = v.get<std::string>();
            else if (k == "palette") r.palette = v.get<std::vector<Color>>();
            else if (k == "texture") r.texture = texture_from(v.get<std::string>());
            else if (k == "texture_amount") r.texture_amount = v.get<float>();
            else if (k == "stripe_period") r.stripe_period = v.get<float>();
            else if (k == "contour") r.contour = contour_from(v.get<std::string>());
            else throw ConfigError("unknown style recipe key '" + k + "'");
          }
          s.styles.push_back(std::move(r));
        }
      } else {
        throw ConfigError("unknown corpus spec key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corpus spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

SketchMask extract_sketch(const Tensor& images, const SketchParams& params) {
  Tensor batch = images.dim() == 3 ? reshape(images, {1, images.size(0), images.size(1), images.size(2)}) : images;
  if (batch.dim() != 4 || batch.size(1) != 3) {
    throw ShapeError("extract_sketch expects [3,H,W] or [N,3,H,W], got " + shape_str(images.shape()));
  }
  const int64_t n = batch.size(0), h = batch.size(2), w = batch.size(3), plane = h * w;
  const auto src = batch.data();
  std::vector<float> out(static_cast<size_t>(n * plane));
  std::vector<double> gray(static_cast<size_t>(plane));
  for (int64_t b = 0; b < n; ++b) {
    const float* img = src.data() + b * 3 * plane;
    for (int64_t i = 0; i < plane; ++i) {
      gray[i] = 0.299 * img[i] + 0.587 * img[plane + i] + 0.114 * img[2 * plane + i];
    }
    const std::vector<double> g1 = blur(gray, h, w, params.sigma);
    const std::vector<double> g2 = blur(gray, h, w, params.k * params.sigma);
    for (int64_t i = 0; i < plane; ++i) out[b * plane + i] = (g1[i] - g2[i]) < -params.tau ? 1.0f : 0.0f;
  }
  return SketchMask(Tensor({n, 1, h, w}, std::move(out)));
}

// ---------------------------------------------------------------------------

Tensor Dataset::images_at(const std::vector<int64_t>& rows) const { return gather_rows(images, rows); }

SketchMask Dataset::sketches_at(const std::vector<int64_t>& rows) const {
  return SketchMask(gather_rows(sketches, rows));
}

std::vector<int> Dataset::labels_at(const std::vector<int64_t>& rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (int64_t r : rows) out.push_back(labels.at(static_cast<size_t>(r)));
  return out;
}

void split_indices(int64_t n, double train_fraction, uint64_t seed, std::vector<int64_t>& train,
                   std::vector<int64_t>& test) {
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, kSplitStream));
  for (int64_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % static_cast<uint64_t>(i + 1)]);
  const auto n_train = static_cast<int64_t>(std::floor(train_fraction * static_cast<double>(n)));
  train.assign(order.begin(), order.begin() + n_train);
  test.assign(order.begin() + n_train, order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
}

double style_separability(const Tensor& images, const std::vector<int>& labels, int num_styles) {
  const int64_t n = images.size(0), plane = images.size(2) * images.size(3);
  if (static_cast<int64_t>(labels.size()) != n) throw ShapeError("style_separability: label count mismatch");
  std::vector<std::array<double, 3>> means(static_cast<size_t>(n));
  const auto v = images.data();
  for (int64_t i = 0; i < n; ++i)
    for (int ch = 0; ch < 3; ++ch) {
      double acc = 0.0;
      for (int64_t p = 0; p < plane; ++p) acc += v[(i * 3 + ch) * plane + p];
      means[i][ch] = acc / static_cast<double>(plane);
    }
  std::vector<std::array<double, 3>> centroid(static_cast<size_t>(num_styles), {0, 0, 0});
  std::vector<int> count(static_cast<size_t>(num_styles), 0);
  for (int64_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < 3; ++ch) centroid[labels[i]][ch] += means[i][ch];
    ++count[labels[i]];
  }
  for (int s = 0; s < num_styles; ++s) {
    if (count[s] == 0) throw ConfigError("style " + std::to_string(s) + " has no images");
    for (double& c : centroid[s]) c /= count[s];
  }
  auto dist2 = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]);
  };
  std::vector<double> spread(static_cast<size_t>(num_styles), 0.0);
  for (int64_t i = 0; i < n; ++i) spread[labels[i]] += dist2(means[i], centroid[labels[i]]);
  double worst_spread = 0.0;
  for (int s = 0; s < num_styles; ++s) worst_spread = std::max(worst_spread, std::sqrt(spread[s] / count[s]));
  double closest = std::numeric_limits<double>::infinity();
  for (int s = 0; s < num_styles; ++s)
    for (int t = s + 1; t < num_styles; ++t) closest = std::min(closest, std::sqrt(dist2(centroid[s], centroid[t])));
  return worst_spread == 0.0 ? std::numeric_limits<double>::infinity() : closest / worst_spread;
}

Dataset generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const int k = static_cast<int>(spec.styles.size());
  const int64_t n = spec.n_images, s = spec.resolution, per_image = 3 * s * s;
  Dataset ds;
  ds.spec = spec;
  std::vector<float> pixels(static_cast<size_t>(n * per_image));
  for (int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % k);
    ds.labels.push_back(label);
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(i)));
    const std::vector<float> img = render_image(spec.styles[label], spec.resolution, rng);
    std::copy(img.begin(), img.end(), pixels.begin() + i * per_image);
  }
  ds.images = Tensor({n, 3, s, s}, std::move(pixels));
  ds.sketches = extract_sketch(ds.images).tensor();
  split_indices(n, spec.train_fraction, spec.seed, ds.train, ds.test);
  if (n >= 2 * k) {
    const double ratio = style_separability(ds.images, ds.labels, k);
    if (!(ratio > 3.0)) {
      throw ConfigError("style recipes are not separable by mean colour (ratio " + std::to_string(ratio) +
                        ", need > 3)");
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------

uint8_t to_byte(float v) {
  const double x = (std::clamp(static_cast<double>(v), -1.0, 1.0) + 1.0) * 127.5;
  return static_cast<uint8_t>(std::round(x));
}

Tensor load_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const int64_t c = gray ? 1 : 3, h = img.height, w = img.width;
  std::vector<float> v(static_cast<size_t>(c * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch) v[(ch * h + y) * w + x] = from_byte(buf[(y * w + x) * c + ch]);
  return Tensor({c, h, w}, std::move(v));
}

void save_png(const Tensor& image, const fs::path& path) {
  Tensor t = image;
  if (t.dim() == 4 && t.size(0) == 1) t = reshape(t, {t.size(1), t.size(2), t.size(3)});
  if (t.dim() != 3 || (t.size(0) != 1 && t.size(0) != 3)) {
    throw ShapeError("save_png expects [C,H,W] with C in {1,3}, got " + shape_str(image.shape()));
  }
  const int64_t c = t.size(0), h = t.size(1), w = t.size(2);
  std::vector<uint8_t> buf(static_cast<size_t>(c * h * w));
  const auto v = t.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch) buf[(y * w + x) * c + ch] = to_byte(v[(ch * h + y) * w + x]);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

SketchMask load_sketch_png(const fs::path& path) {
  Tensor t = load_png(path);
  if (t.size(0) != 1) {
    // Colour sketches are reduced to their first channel.
    t = slice(t, 0, 0, 1);
  }
  std::vector<float> v(t.data().begin(), t.data().end());
  for (float& x : v) x = x > from_byte(127) ? 1.0f : 0.0f;
  return SketchMask(Tensor({1, 1, t.size(1), t.size(2)}, std::move(v)));
}

void save_sketch_png(const SketchMask& sketch, int64_t index, const fs::path& path) {
  Tensor one = slice(sketch.tensor(), 0, index, index + 1);
  save_png(add_scalar(mul_scalar(one, 2.0f), -1.0f), path);
}

Tensor image_grid(const Tensor& images, int cols) {
  if (images.dim() != 4) throw ShapeError("image_grid expects [N,C,H,W], got " + shape_str(images.shape()));
  if (cols < 1) throw ConfigError("image_grid needs at least one column");
  const int64_t n = images.size(0), c = images.size(1), h = images.size(2), w = images.size(3);
  const int64_t rows = (n + cols - 1) / cols;
  const int64_t gh = rows * (h + 1) + 1, gw = cols * (w + 1) + 1;
  std::vector<float> out(static_cast<size_t>(c * gh * gw), 1.0f);
  const auto v = images.data();
  for (int64_t i = 0; i < n; ++i) {
    const int64_t oy = (i / cols) * (h + 1) + 1, ox = (i % cols) * (w + 1) + 1;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        std::copy_n(v.begin() + ((i * c + ch) * h + y) * w, w, out.begin() + (ch * gh + oy + y) * gw + ox);
  }
  return Tensor({c, gh, gw}, std::move(out));
}

// ---------------------------------------------------------------------------

void save_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "sketches", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  const SketchMask sketches(ds.sketches);
  for (int64_t i = 0; i < ds.size(); ++i) {
    save_png(slice(ds.images, 0, i, i + 1), dir / "images" / index_name(i));
    save_sketch_png(sketches, i, dir / "sketches" / index_name(i));
  }
  std::vector<char> is_train(static_cast<size_t>(ds.size()), 0);
  for (int64_t i : ds.train) is_train[i] = 1;
  std::ofstream labels(dir / "labels.tsv");
  labels << "index\tstyle\tsplit\n";
  for (int64_t i = 0; i < ds.size(); ++i) {
    labels << i << '\t' << ds.labels[i] << '\t' << (is_train[i] ? "train" : "test") << '\n';
  }
  std::ofstream spec(dir / "spec.json");
  spec << to_json(ds.spec).dump(2) << '\n';
  if (!labels || !spec) throw IoError("cannot write dataset metadata in " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  const fs::path spec_path = dir / "spec.json";
  std::ifstream spec_in(spec_path);
  if (!spec_in) throw IoError("missing dataset spec " + spec_path.string());
  try {
    ds.spec = corpus_spec_from_json(nlohmann::json::parse(spec_in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset spec " + spec_path.string() + ": " + e.what());
  }

  const fs::path labels_path = dir / "labels.tsv";
  std::ifstream labels(labels_path);
  if (!labels) throw IoError("missing dataset labels " + labels_path.string());
  std::string line;
  std::getline(labels, line);
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    int64_t index = -1;
    int style = -1;
    std::string split;
    if (!(row >> index >> style >> split) || index != ds.size() || style < 0 ||
        style >= static_cast<int>(ds.spec.styles.size()) || (split != "train" && split != "test")) {
      throw IoError("malformed row in " + labels_path.string() + ": '" + line + "'");
    }
    ds.labels.push_back(style);
    (split == "train" ? ds.train : ds.test).push_back(index);
  }
  if (ds.size() != ds.spec.n_images) {
    throw IoError(labels_path.string() + " lists " + std::to_string(ds.size()) + " images, spec says " +
                  std::to_string(ds.spec.n_images));
  }

  const int64_t n = ds.size(), s = ds.spec.resolution;
  std::vector<float> pixels(static_cast<size_t>(n * 3 * s * s)), marks(static_cast<size_t>(n * s * s));
  for (int64_t i = 0; i < n; ++i) {
    const fs::path ip = dir / "images" / index_name(i);
    const Tensor img = load_png(ip);
    if (img.shape() != Shape{3, s, s}) throw IoError(ip.string() + " has shape " + shape_str(img.shape()));
    std::copy(img.data().begin(), img.data().end(), pixels.begin() + i * 3 * s * s);
    const fs::path sp = dir / "sketches" / index_name(i);
    const SketchMask m = load_sketch_png(sp);
    if (m.height() != s || m.width() != s) throw IoError(sp.string() + " has the wrong size");
    std::copy(m.tensor().data().begin(), m.tensor().data().end(), marks.begin() + i * s * s);
  }
  ds.images = Tensor({n, 3, s, s}, std::move(pixels));
  ds.sketches = Tensor({n, 1, s, s}, std::move(marks));
  return ds;
}

}  // namespace stylesketch
