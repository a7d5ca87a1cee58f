#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylesketch/tensor.hpp"

// Golden directories hold manifest.json plus portable tensor files:
//
//   {"format": "stylesketch-goldens", "version": 1, "seed": 0,
//    "cases": [{"id": "dmi_0", "op": "dmi", "attrs": {...},
//               "tolerance": {"forward_abs": 1e-4, "grad_rel": 1e-3},
//               "files": [{"role": "input:f", "path": "dmi_0/f.ptnsr",
//                          "sha256": "<hex>"}, ...]}]}
//
// Roles are "input:<name>", "param:<name>", "output:<name>",
// "grad:<input or param name>" and optionally "cotangent:<output name>".
// Gradients are of sum over outputs of cotangent * output (cotangent defaults
// to ones).
//
// Ops and their tensor names:
//   conv2d             x, param weight, param bias (optional); attrs stride, padding -> y
//   pooling_chain      x -> y (max_pool(5,3) while larger than 10, then 4x4 adaptive average)
//   instance_stats     x -> mean, std
//   adain              f, style_mean, style_std -> y
//   dmi                f, mask, params w_c b_c w_p b_p -> y
//   fmt                f_style, style_sketch, input_sketch -> y
//   idn                f, mu_pred -> f_content, sigma_pred
//   attn_res_block     f, style, params named as the block's parameters -> y
//   gradient_match     image, target -> loss
//   gram_l2            a, b ([1,C,H,W]) -> value
//   frechet_distance   a, b (rows are samples) -> value
namespace stylesketch {

inline constexpr const char* kGoldenFormat = "stylesketch-goldens";

struct GoldenFile {
  std::string role;
  std::string path;  // relative to the golden directory
  std::string sha256;
};

struct GoldenCase {
  std::string id;
  std::string op;
  nlohmann::json attrs = nlohmann::json::object();
  double forward_abs = 1e-4;
  double grad_rel = 1e-3;
  std::vector<GoldenFile> files;
};

struct GoldenManifest {
  int version = 1;
  uint64_t seed = 0;
  std::vector<GoldenCase> cases;
};

std::string sha256_hex(std::span<const uint8_t> bytes);

nlohmann::json to_json(const GoldenManifest& m);
// IoError if manifest.json is missing or malformed.
GoldenManifest load_golden_manifest(const std::filesystem::path& dir);
void save_golden_manifest(const std::filesystem::path& dir, const GoldenManifest& m);

// IntegrityError naming the first file that is missing, fails its hash, or
// does not parse as a tensor.
void verify_golden_integrity(const std::filesystem::path& dir, const GoldenManifest& m);

struct GoldenResult {
  std::string id;
  std::string op;
  double forward_error = 0.0;  // max abs over outputs
  double grad_error = 0.0;     // max relative error over listed gradients
  bool passed = false;
};

// Recomputes one case with the library. ConfigError on an unknown op or a
// case lacking a tensor its op needs.
GoldenResult check_golden_case(const std::filesystem::path& dir, const GoldenCase& c);

// Integrity first, then every case.
std::vector<GoldenResult> verify_goldens(const std::filesystem::path& dir);

std::string format_golden_table(const std::vector<GoldenResult>& results);

}  // namespace stylesketch
