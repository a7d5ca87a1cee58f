// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `--only a,b` runs a subset; `--work DIR` keeps run outputs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "stylesketch/data.hpp"
#include "stylesketch/gradcheck.hpp"
#include "stylesketch/layers.hpp"
#include "stylesketch/losses.hpp"
#include "stylesketch/metrics.hpp"
#include "stylesketch/ops.hpp"
#include "stylesketch/train.hpp"

using namespace stylesketch;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Verdict()> run;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_work;

const Dataset& desk_corpus() {
  static const Dataset ds = generate_corpus(CorpusSpec{});
  return ds;
}

// ---------------------------------------------------------------------------

constexpr int kAuditSeeds = 20;
constexpr double kAuditTolerance = 1e-3;
constexpr double kAuditBudgetSeconds = 300.0;

Verdict gradient_audit() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::vector<std::string> failed;
  for (const GradcheckCase& c : gradcheck_cases()) {
    const GradcheckSummary s = run_gradcheck_case(c, kAuditSeeds, 0xacce55, kAuditTolerance);
    if (!s.passed) failed.push_back(c.name);
    if (s.max_rel_error > worst) {
      worst = s.max_rel_error;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = failed.empty() && secs < kAuditBudgetSeconds;
  v.detail = fmt("%zu ops x %d seeds, worst rel err %.2e (%s), %.1f s", gradcheck_cases().size(), kAuditSeeds, worst,
                 worst_name.c_str(), secs);
  for (const auto& f : failed) v.detail += " FAILED:" + f;
  return v;
}

// ---------------------------------------------------------------------------

Verdict exact_identities() {
  std::vector<std::string> broken;
  Rng rng(0x1de);
  FmtConfig cfg;
  const std::array<int, 3> sizes{16, 32, 64};

  for (int t = 0; t < 50; ++t) {
    const int r = sizes[t % 3];
    const Tensor f = uniform_tensor({2, 5, r, r}, -3, 3, rng);
    const SketchMask m(oracle::random_mask({2, 1, r, r}, 0.05 * (t % 20), rng));
    const Tensor out = dmi_forward(f, m, DmiParams::identity(5));
    if (!std::equal(out.data().begin(), out.data().end(), f.data().begin())) {
      broken.push_back("dmi_identity");
      break;
    }
  }

  std::uniform_real_distribution<float> value(-4.0f, 4.0f);
  for (int t = 0; t < 50; ++t) {
    const int r = sizes[t % 3];
    const float c = value(rng);
    const double density = std::array<double, 5>{0.0, 0.03, 0.3, 0.8, 1.0}[t % 5];
    const SketchMask s(oracle::random_mask({2, 1, r, r}, density, rng));
    const SketchMask i(oracle::random_mask({2, 1, r, r}, 0.2, rng));
    const Tensor out = fmt(Tensor::full({2, 3, r, r}, c), s, i, cfg);
    if (!std::all_of(out.data().begin(), out.data().end(), [c](float v) { return v == c; })) {
      broken.push_back(fmt("fmt_constant(c=%.9g,r=%d)", c, r));
      break;
    }
  }

  for (int t = 0; t < 30; ++t) {
    const int r = sizes[t % 3];
    const Tensor f = uniform_tensor({2, 3, r, r}, -1, 1, rng);
    const SketchMask s(oracle::random_mask({2, 1, r, r}, 0.3, rng));
    const SketchMask in(oracle::random_mask({2, 1, r, r}, 0.3, rng));
    const Tensor out = fmt(f, s, in, cfg);
    const FmtBranches b = fmt_branches(f, s, cfg);
    const Tensor contour = upsample_nearest(b.contour, r / 4), plain = upsample_nearest(b.plain, r / 4);
    bool ok = true;
    for (int64_t n = 0; n < 2 && ok; ++n)
      for (int64_t ch = 0; ch < 3 && ok; ++ch)
        for (int64_t y = 0; y < r && ok; ++y)
          for (int64_t x = 0; x < r && ok; ++x) {
            const Tensor& want = in.tensor().at({n, 0, y, x}) == 1.0f ? contour : plain;
            ok = out.at({n, ch, y, x}) == want.at({n, ch, y, x});
          }
    if (!ok) {
      broken.push_back("fmt_partition");
      break;
    }
  }

  for (int t = 0; t < 20; ++t) {
    const Tensor f = uniform_tensor({1, 6, 8, 8}, -2, 2, rng);
    if (gram_l2(f, f) != 0.0) broken.push_back("gram_l2_self");
    const Tensor img = uniform_tensor({2, 3, 16, 16}, -1, 1, rng);
    if (gradient_match(img, img).item() != 0.0f) broken.push_back("gradient_match_self");
    const Tensor rows = normal_tensor({60, 12}, 0.5f, 2.0f, rng);
    const GaussianStats g = gaussian_stats(rows);
    const double fd = frechet_distance(g, g);
    if (!(std::abs(fd) < 1e-6)) broken.push_back(fmt("frechet_self=%.3e", fd));
    if (!broken.empty()) break;
  }

  Verdict v;
  v.pass = broken.empty();
  v.detail = "dmi identity, fmt constant, fmt partition, gram/gradient_match/frechet self-distance";
  for (const auto& b : broken) v.detail += " BROKEN:" + b;
  return v;
}

// ---------------------------------------------------------------------------

Verdict idn_invariant() {
  constexpr int kTrials = 1000;
  Rng rng(0x1d1);
  std::uniform_int_distribution<int> channels(1, 8);
  std::uniform_real_distribution<float> loc(-3.0f, 3.0f), spread(0.02f, 5.0f);
  int64_t checked = 0, skipped = 0;
  double worst = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    const int c = channels(rng);
    const int s = t % 2 == 0 ? 8 : 16;
    const Tensor f = normal_tensor({2, c, s, s}, loc(rng), spread(rng), rng);
    IdnOutput o;
    if (t % 3 == 0) {
      o = idn_with_mean(f, uniform_tensor({2, c, 1, 1}, -4, 4, rng));
    } else {
      IdnPredictor pred(c, s, rng);
      o = idn_forward(f, pred);
    }
    const int64_t hw = static_cast<int64_t>(s) * s;
    for (int64_t k = 0; k < 2 * c; ++k) {
      if (!(o.sigma_pred.data()[k] > 1e-4f)) {
        ++skipped;
        continue;
      }
      double mean = 0.0, sq = 0.0;
      for (int64_t p = 0; p < hw; ++p) mean += o.f_content.data()[k * hw + p];
      mean /= static_cast<double>(hw);
      for (int64_t p = 0; p < hw; ++p) {
        const double d = o.f_content.data()[k * hw + p] - mean;
        sq += d * d;
      }
      const double sd = std::sqrt(sq / static_cast<double>(hw));
      worst = std::max(worst, std::abs(sd - 1.0));
      ++checked;
    }
  }
  Verdict v;
  v.pass = worst <= 1e-3 && checked > 0;
  v.detail = fmt("%d trials, %lld channels checked (%lld below sigma floor), max |std-1| %.2e", kTrials,
                 static_cast<long long>(checked), static_cast<long long>(skipped), worst);
  return v;
}

// ---------------------------------------------------------------------------

Verdict fmt_oracle() {
  constexpr int kCases = 100;
  Rng rng(0xf37);
  float worst = 0.0f;
  const std::array<int, 3> sizes{16, 32, 64};
  const std::array<double, 6> densities{0.0, 0.02, 0.15, 0.4, 0.9, 1.0};
  for (int t = 0; t < kCases; ++t) {
    const int r = sizes[t % 3];
    const Tensor f = uniform_tensor({2, 3, r, r}, -2, 2, rng);
    const Tensor s = oracle::random_mask({2, 1, r, r}, densities[t % densities.size()], rng);
    const Tensor i = oracle::random_mask({2, 1, r, r}, densities[(t / 6) % densities.size()], rng);
    const Tensor got = fmt(f, SketchMask(s), SketchMask(i), FmtConfig{});
    worst = std::max(worst, oracle::max_abs_diff(got, oracle::fmt_literal(f, s, i)));
  }
  return {worst < 1e-6f, fmt("%d cases at 16/32/64, max abs err %.2e", kCases, worst)};
}

// ---------------------------------------------------------------------------

constexpr double kDeskBudgetSeconds = 3600.0;

Verdict desk_run() {
  const Dataset& ds = desk_corpus();
  const TrainConfig cfg;
  const auto t0 = Clock::now();
  Trainer trainer(cfg, ds);
  const RunReport r = trainer.run(g_work.empty() ? fs::path() : g_work / "desk");
  const double secs = seconds_since(t0);
  const EvalReport& m = r.metrics;
  const bool a = m.classification >= 0.5;
  const bool b = m.pdar_input < m.pdar_shuffled;
  const bool c = m.frechet_within < m.frechet_cross;
  Verdict v;
  v.pass = a && b && c && secs < kDeskBudgetSeconds;
  v.detail = fmt("(a) classification %.3f >= 0.5 %s; (b) pdar %.4f < shuffled %.4f %s; (c) frechet within %.1f < "
                 "cross %.1f %s; %lld steps, %.0f s",
                 m.classification, a ? "ok" : "NO", m.pdar_input, m.pdar_shuffled, b ? "ok" : "NO", m.frechet_within,
                 m.frechet_cross, c ? "ok" : "NO", static_cast<long long>(trainer.steps()), secs);
  return v;
}

// ---------------------------------------------------------------------------

constexpr int kAblationEpochs = 10;

Verdict fmt_ablation() {
  const Dataset& ds = desk_corpus();
  double sum_on = 0.0, sum_off = 0.0;
  std::string per_seed;
  for (uint64_t seed : {1, 2, 3}) {
    double g[2];
    for (int fmt_on = 0; fmt_on < 2; ++fmt_on) {
      TrainConfig cfg;
      cfg.epochs = kAblationEpochs;
      cfg.seed = seed;
      cfg.encoder.seed = seed;
      cfg.model.fmt = fmt_on == 1;
      cfg.sample_every = 0;
      Trainer trainer(cfg, ds);
      const std::string name = fmt("fmt_%s_seed%llu", fmt_on ? "on" : "off", static_cast<unsigned long long>(seed));
      g[fmt_on] = trainer.run(g_work.empty() ? fs::path() : g_work / "ablation" / name).metrics.gram_l2;
    }
    sum_off += g[0];
    sum_on += g[1];
    per_seed += fmt(" seed%llu on %.2f off %.2f;", static_cast<unsigned long long>(seed), g[1], g[0]);
  }
  const double on = sum_on / 3.0, off = sum_off / 3.0;
  return {on <= off, fmt("mean gram_l2 fmt=on %.3f <= fmt=off %.3f over 3 seeds, %d epochs each;%s", on, off,
                         kAblationEpochs, per_seed.c_str())};
}

// ---------------------------------------------------------------------------

Verdict determinism() {
  const Dataset& ds = desk_corpus();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.max_steps = 8;
  cfg.sample_every = 0;
  auto start = [&](uint64_t seed) {
    TrainConfig c = cfg;
    c.seed = seed;
    auto t = std::make_unique<Trainer>(c, ds);
    t->prepare();
    return t;
  };
  const auto a = start(1), b = start(1), other = start(2);
  const auto ra = a->run_epoch(0);
  const auto rb = b->run_epoch(0);
  const auto rc = other->run_epoch(0);
  const bool same = ra == rb && !ra.empty();
  const bool differs = ra != rc;

  const EvalReport before = evaluate(a->networks(), ds, EvalOptions{1});
  const fs::path dir = (g_work.empty() ? fs::temp_directory_path() / "stylesketch_acceptance" : g_work) / "ckpt";
  fs::remove_all(dir);
  save_checkpoint(dir, a->networks(), CheckpointMeta{a->steps(), 1});
  const auto loaded = load_checkpoint(dir);
  const EvalReport after = evaluate(*loaded, ds, EvalOptions{1});
  const bool round_trip = before == after;
  if (g_work.empty()) fs::remove_all(dir);
  return {same && differs && round_trip,
          fmt("same-seed traces identical over %zu steps: %s; other seed differs: %s; checkpoint round-trip metrics "
              "identical: %s",
              ra.size(), same ? "yes" : "NO", differs ? "yes" : "NO", round_trip ? "yes" : "NO")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<std::string> only;
  std::string work;
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--work", work, "Keep run directories here");
  CLI11_PARSE(app, argc, argv);
  if (!work.empty()) g_work = work;

  const std::vector<Criterion> criteria = {
      {"gradient_audit", gradient_audit},   {"exact_identities", exact_identities},
      {"idn_invariant", idn_invariant},     {"fmt_oracle", fmt_oracle},
      {"desk_run", desk_run},               {"fmt_ablation", fmt_ablation},
      {"determinism_checkpoint", determinism},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", c.name.c_str(), v.detail.c_str());
    std::fflush(stdout);
    failures += !v.pass;
  }
  return failures == 0 ? 0 : 1;
}
