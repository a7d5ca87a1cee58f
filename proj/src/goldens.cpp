#include "stylesketch/goldens.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "stylesketch/error.hpp"
#include "stylesketch/layers.hpp"
#include "stylesketch/losses.hpp"
#include "stylesketch/metrics.hpp"
#include "stylesketch/ops.hpp"
#include "stylesketch/tensor_io.hpp"

namespace stylesketch {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::span<const uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

json to_json(const GoldenManifest& m) {
  json cases = json::array();
  for (const GoldenCase& c : m.cases) {
    json files = json::array();
    for (const GoldenFile& f : c.files) files.push_back({{"role", f.role}, {"path", f.path}, {"sha256", f.sha256}});
    cases.push_back({{"id", c.id},
                     {"op", c.op},
                     {"attrs", c.attrs},
                     {"tolerance", {{"forward_abs", c.forward_abs}, {"grad_rel", c.grad_rel}}},
                     {"files", files}});
  }
  return {{"format", kGoldenFormat}, {"version", m.version}, {"seed", m.seed}, {"cases", cases}};
}

GoldenManifest load_golden_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::is_regular_file(path)) throw IoError("missing golden manifest " + path.string());
  std::ifstream in(path);
  GoldenManifest m;
  try {
    const json j = json::parse(in);
    if (j.at("format").get<std::string>() != kGoldenFormat) {
      throw IoError(path.string() + ": format is not " + std::string(kGoldenFormat));
    }
    m.version = j.at("version").get<int>();
    m.seed = j.value("seed", uint64_t{0});
    for (const json& jc : j.at("cases")) {
      GoldenCase c;
      c.id = jc.at("id").get<std::string>();
      c.op = jc.at("op").get<std::string>();
      c.attrs = jc.value("attrs", json::object());
      if (jc.contains("tolerance")) {
        c.forward_abs = jc["tolerance"].value("forward_abs", c.forward_abs);
        c.grad_rel = jc["tolerance"].value("grad_rel", c.grad_rel);
      }
      for (const json& jf : jc.at("files")) {
        c.files.push_back({jf.at("role").get<std::string>(), jf.at("path").get<std::string>(),
                           jf.at("sha256").get<std::string>()});
      }
      m.cases.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed golden manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void save_golden_manifest(const fs::path& dir, const GoldenManifest& m) {
  fs::create_directories(dir);
  const fs::path path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(m).dump(2) << "\n";
}

namespace {

Tensor load_verified(const fs::path& dir, const GoldenFile& f) {
  const fs::path path = dir / f.path;
  if (!fs::is_regular_file(path)) throw IntegrityError("golden file missing: " + path.string());
  std::vector<uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error& e) {
    throw IntegrityError("golden file unreadable: " + path.string() + ": " + e.what());
  }
  if (sha256_hex(bytes) != f.sha256) throw IntegrityError("sha256 mismatch: " + path.string());
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw IntegrityError("golden file does not parse: " + path.string() + ": " + e.what());
  }
}

struct CaseTensors {
  std::map<std::string, Tensor> inputs;
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> outputs;
  std::map<std::string, Tensor> grads;
  std::map<std::string, Tensor> cotangents;
};

CaseTensors load_case(const fs::path& dir, const GoldenCase& c) {
  CaseTensors t;
  for (const GoldenFile& f : c.files) {
    const auto colon = f.role.find(':');
    if (colon == std::string::npos) throw ConfigError(c.id + ": role without a name: " + f.role);
    const std::string kind = f.role.substr(0, colon);
    const std::string name = f.role.substr(colon + 1);
    Tensor v = load_verified(dir, f);
    if (kind == "input") t.inputs[name] = v;
    else if (kind == "param") t.params[name] = v;
    else if (kind == "output") t.outputs[name] = v;
    else if (kind == "grad") t.grads[name] = v;
    else if (kind == "cotangent") t.cotangents[name] = v;
    else throw ConfigError(c.id + ": unknown role " + f.role);
  }
  return t;
}

// Live tensors for one evaluation: inputs as grad-requiring leaves, params as
// Parameters so modules can adopt them.
struct Bound {
  const GoldenCase* c = nullptr;
  std::map<std::string, Tensor> inputs;
  std::map<std::string, Parameter> params;

  const Tensor& in(const std::string& name) const {
    auto it = inputs.find(name);
    if (it == inputs.end()) throw ConfigError(c->id + ": op " + c->op + " needs input " + name);
    return it->second;
  }
  Parameter& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError(c->id + ": op " + c->op + " needs param " + name);
    return it->second;
  }
};

using Outputs = std::map<std::string, Tensor>;
// Scalar-valued metrics computed in double precision outside the tape.
using Scalars = std::map<std::string, double>;

void adopt_parameters(Module& m, Bound& b) {
  for (NamedParameter& np : m.named_parameters()) {
    Parameter& src = b.param(np.name);
    if (src.shape() != np.param->shape()) {
      throw ConfigError(b.c->id + ": param " + np.name + " has shape " + shape_str(src.shape()) + ", expected " +
                        shape_str(np.param->shape()));
    }
    *np.param = src;
  }
}

int attr_int(const GoldenCase& c, const char* key, int fallback) { return c.attrs.value(key, fallback); }
float attr_eps(const GoldenCase& c) { return c.attrs.value("eps", kNormEps); }

Outputs run_op(Bound& b, Scalars& scalars, std::vector<std::pair<std::string, Parameter*>>& module_params,
               std::vector<std::unique_ptr<Module>>& keep) {
  const GoldenCase& c = *b.c;
  const std::string& op = c.op;
  if (op == "conv2d") {
    const Tensor bias = b.params.count("bias") ? b.param("bias").value() : Tensor();
    return {{"y", conv2d(b.in("x"), b.param("weight").value(), bias, attr_int(c, "stride", 1),
                         attr_int(c, "padding", 0))}};
  }
  if (op == "pooling_chain") {
    const Tensor& x = b.in("x");
    const Tensor all = Tensor::ones({x.size(0), 1, x.size(2), x.size(3)});
    return {{"y", fmt_pool(x, all, FmtConfig{}).value}};
  }
  if (op == "instance_stats") {
    const Moments m = instance_stats(b.in("x"));
    return {{"mean", m.mean}, {"std", m.std}};
  }
  if (op == "adain") {
    return {{"y", adain(b.in("f"), StyleMoments{b.in("style_mean"), b.in("style_std")}, attr_eps(c))}};
  }
  if (op == "dmi") {
    DmiParams p{b.param("w_c"), b.param("b_c"), b.param("w_p"), b.param("b_p")};
    return {{"y", dmi_forward(b.in("f"), SketchMask(b.in("mask").detach()), p)}};
  }
  if (op == "fmt") {
    const Tensor& f = b.in("f_style");
    FmtConfig cfg;
    cfg.resolutions = {static_cast<int>(f.size(2))};
    return {{"y", fmt(f, SketchMask(b.in("style_sketch").detach()), SketchMask(b.in("input_sketch").detach()), cfg)}};
  }
  if (op == "idn") {
    const IdnOutput o = idn_with_mean(b.in("f"), b.in("mu_pred"), attr_eps(c));
    return {{"f_content", o.f_content}, {"sigma_pred", o.sigma_pred}};
  }
  if (op == "attn_res_block") {
    const Tensor& f = b.in("f");
    const Tensor& v = b.in("style");
    Rng rng(0);
    auto block = std::make_unique<AttnResBlock>(static_cast<int>(f.size(1)), static_cast<int>(v.size(1)), rng);
    adopt_parameters(*block, b);
    for (NamedParameter& np : block->named_parameters()) module_params.emplace_back(np.name, np.param);
    Outputs out{{"y", block->forward(f, v)}};
    keep.push_back(std::move(block));
    return out;
  }
  if (op == "gradient_match") {
    return {{"loss", gradient_match(b.in("image"), b.in("target"))}};
  }
  if (op == "gram_l2") {
    scalars["value"] = gram_l2(b.in("a"), b.in("b"));
    return {};
  }
  if (op == "frechet_distance") {
    scalars["value"] = frechet_distance(gaussian_stats(b.in("a")), gaussian_stats(b.in("b")));
    return {};
  }
  throw ConfigError(c.id + ": unsupported op " + op);
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

double rel_error(std::span<const float> actual, std::span<const float> expected) {
  double diff = 0.0, na = 0.0, ne = 0.0;
  for (size_t i = 0; i < actual.size(); ++i) {
    const double d = static_cast<double>(actual[i]) - expected[i];
    diff += d * d;
    na += static_cast<double>(actual[i]) * actual[i];
    ne += static_cast<double>(expected[i]) * expected[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(ne), 1e-12});
}

}  // namespace

void verify_golden_integrity(const fs::path& dir, const GoldenManifest& m) {
  for (const GoldenCase& c : m.cases) {
    for (const GoldenFile& f : c.files) load_verified(dir, f);
  }
}

GoldenResult check_golden_case(const fs::path& dir, const GoldenCase& c) {
  const CaseTensors t = load_case(dir, c);
  Bound b;
  b.c = &c;
  for (const auto& [name, v] : t.inputs) {
    b.inputs[name] = Tensor(v.shape(), std::vector<float>(v.data().begin(), v.data().end()), true);
  }
  for (const auto& [name, v] : t.params) b.params.emplace(name, Parameter(v.detach()));

  Scalars scalars;
  std::vector<std::pair<std::string, Parameter*>> module_params;
  std::vector<std::unique_ptr<Module>> keep;
  const Outputs out = run_op(b, scalars, module_params, keep);

  GoldenResult r{c.id, c.op, 0.0, 0.0, false};
  bool shapes_ok = true;
  for (const auto& [name, expected] : t.outputs) {
    if (auto s = scalars.find(name); s != scalars.end()) {
      if (expected.numel() != 1) throw ConfigError(c.id + ": output " + name + " must be a scalar");
      r.forward_error = std::max(r.forward_error, std::abs(s->second - expected.data()[0]));
      continue;
    }
    auto it = out.find(name);
    if (it == out.end()) throw ConfigError(c.id + ": op " + c.op + " has no output " + name);
    if (it->second.numel() != expected.numel()) {
      shapes_ok = false;
      r.forward_error = INFINITY;
      continue;
    }
    r.forward_error = std::max(r.forward_error, max_abs_diff(it->second.data(), expected.data()));
  }

  if (!t.grads.empty() && shapes_ok) {
    if (out.empty()) throw ConfigError(c.id + ": op " + c.op + " has no differentiable outputs");
    std::vector<Tensor> terms;
    for (const auto& [name, y] : out) {
      auto ct = t.cotangents.find(name);
      const Tensor w = ct != t.cotangents.end() ? ct->second.detach() : Tensor::ones(y.shape());
      if (w.numel() != y.numel()) throw ConfigError(c.id + ": cotangent " + name + " does not match its output");
      terms.push_back(sum(mul(y, reshape(w, y.shape()))));
    }
    Tensor loss = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) loss = add(loss, terms[i]);
    loss.backward();
    for (const auto& [name, expected] : t.grads) {
      std::vector<float> actual;
      if (auto in = b.inputs.find(name); in != b.inputs.end()) {
        const auto g = in->second.grad();
        actual.assign(g.begin(), g.end());
        if (actual.empty()) actual.assign(static_cast<size_t>(in->second.numel()), 0.0f);
      } else {
        Parameter* p = nullptr;
        for (auto& [pname, pp] : module_params) {
          if (pname == name) p = pp;
        }
        if (!p && b.params.count(name)) p = &b.params.at(name);
        if (!p) throw ConfigError(c.id + ": gradient for unknown tensor " + name);
        actual = p->gradient();
      }
      if (actual.size() != static_cast<size_t>(expected.numel())) {
        r.grad_error = INFINITY;
        continue;
      }
      r.grad_error = std::max(r.grad_error, rel_error(actual, expected.data()));
    }
  }
  r.passed = std::isfinite(r.forward_error) && std::isfinite(r.grad_error) && r.forward_error <= c.forward_abs &&
             r.grad_error <= c.grad_rel;
  return r;
}

std::vector<GoldenResult> verify_goldens(const fs::path& dir) {
  const GoldenManifest m = load_golden_manifest(dir);
  verify_golden_integrity(dir, m);
  std::vector<GoldenResult> results;
  for (const GoldenCase& c : m.cases) results.push_back(check_golden_case(dir, c));
  return results;
}

std::string format_golden_table(const std::vector<GoldenResult>& results) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %-18s %14s %14s  %s\n", "case", "op", "max_abs_err", "grad_rel_err",
                "result");
  os << line;
  for (const GoldenResult& r : results) {
    std::snprintf(line, sizeof line, "%-28s %-18s %14.3e %14.3e  %s\n", r.id.c_str(), r.op.c_str(), r.forward_error,
                  r.grad_error, r.passed ? "PASS" : "FAIL");
    os << line;
  }
  return os.str();
}

}  // namespace stylesketch
