#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylesketch/layers.hpp"
#include "stylesketch/tensor.hpp"

namespace stylesketch {

using Color = std::array<float, 3>;  // RGB in [-1, 1]

enum class TextureKind { flat, noise, vertical_gradient, stripes };
enum class ContourStyle { sharp, soft };

struct StyleRecipe {
  std::string name;
  // palette[0] fills the background; primitives draw from the rest.
  std::vector<Color> palette;
  TextureKind texture = TextureKind::flat;
  float texture_amount = 0.0f;  // noise sigma, gradient span, or stripe amplitude
  float stripe_period = 8.0f;   // pixels; stripes only
  ContourStyle contour = ContourStyle::sharp;
};

// Four recipes separable by mean colour: warm, blue, green, violet.
std::vector<StyleRecipe> default_styles();

struct CorpusSpec {
  int n_images = 512;
  std::vector<StyleRecipe> styles = default_styles();
  int resolution = 64;
  uint64_t seed = 7;
  double train_fraction = 0.9;

  // ConfigError on fewer than two styles, unsupported resolution, or an
  // invalid recipe.
  void validate() const;
};

nlohmann::json to_json(const CorpusSpec& s);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);  // ConfigError on bad fields

struct SketchParams {
  double sigma = 1.0;
  double k = 1.6;
  double tau = 0.1;
};

// Luma, difference of Gaussians at sigma and k*sigma (replicated borders),
// contour where the response falls below -tau. Accepts [3, H, W] or
// [N, 3, H, W]; returns [N, 1, H, W].
SketchMask extract_sketch(const Tensor& images, const SketchParams& params = {});

struct Dataset {
  CorpusSpec spec;
  Tensor images;    // [N, 3, H, W] in [-1, 1]
  Tensor sketches;  // [N, 1, H, W], binary
  std::vector<int> labels;
  std::vector<int64_t> train;  // ascending indices
  std::vector<int64_t> test;   // ascending indices

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  Tensor images_at(const std::vector<int64_t>& rows) const;
  SketchMask sketches_at(const std::vector<int64_t>& rows) const;
  std::vector<int> labels_at(const std::vector<int64_t>& rows) const;
};

// Deterministic from spec.seed: image i has style i mod k and its own derived
// RNG stream. ConfigError if the generated styles are not separable, meaning
// the closest pair of style mean colours is not more than 3x the largest
// within-style RMS spread.
Dataset generate_corpus(const CorpusSpec& spec);

// Closest between-style centroid distance over largest within-style RMS
// spread, both on per-image channel means.
double style_separability(const Tensor& images, const std::vector<int>& labels, int num_styles);

// Seeded Fisher-Yates permutation; the first floor(fraction * n) indices form
// the train split. Both splits are returned sorted.
void split_indices(int64_t n, double train_fraction, uint64_t seed, std::vector<int64_t>& train,
                   std::vector<int64_t>& test);

// ---------------------------------------------------------------------------
// PNG: byte b <-> 2b/255 - 1, inverse rounded half away from zero after
// clamping to [-1, 1].

// [C, H, W] with C = 1 for grayscale input, 3 otherwise (alpha dropped).
Tensor load_png(const std::filesystem::path& path);
// Accepts [C, H, W] or [1, C, H, W] with C in {1, 3}.
void save_png(const Tensor& image, const std::filesystem::path& path);
uint8_t to_byte(float v);
inline float from_byte(uint8_t b) { return 2.0f * static_cast<float>(b) / 255.0f - 1.0f; }

SketchMask load_sketch_png(const std::filesystem::path& path);  // pixel > 127 marks contour
void save_sketch_png(const SketchMask& sketch, int64_t index, const std::filesystem::path& path);

// Tiles [N, C, H, W] images into a grid with `cols` columns and a 1-pixel
// white border.
Tensor image_grid(const Tensor& images, int cols);

// images/NNNN.png, sketches/NNNN.png, labels.tsv (index, style, split) and
// spec.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);  // IoError naming the path

}  // namespace stylesketch
