#include "cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "stylesketch/data.hpp"
#include "stylesketch/error.hpp"
#include "stylesketch/goldens.hpp"
#include "stylesketch/gradcheck.hpp"
#include "stylesketch/ops.hpp"
#include "stylesketch/train.hpp"

namespace stylesketch::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for checks that fail on valid input (gradcheck, goldens), so the
// caller exits 1 after the table is already printed.
class ValidationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int exit_code_for(const Error& e) {
  const std::string kind = e.kind();
  return kind == "io" || kind == "config" ? kExitIoConfig : kExitValidation;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  err << json{{"error", kind}, {"message", message}, {"exit", code}}.dump() << "\n";
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void gen_data(const std::string& spec_path, const std::string& out_dir, std::ostream& out) {
  const CorpusSpec spec = spec_path.empty() ? CorpusSpec{} : corpus_spec_from_json(read_json_file(spec_path));
  const Dataset ds = generate_corpus(spec);
  save_dataset(ds, out_dir);
  out << "wrote " << ds.labels.size() << " images (" << ds.train.size() << " train, " << ds.test.size()
      << " test) to " << out_dir << "\n";
}

void extract(const std::string& in_path, const std::string& out_path, const SketchParams& params, std::ostream& out) {
  const Tensor image = load_png(in_path);
  if (image.size(0) != 3) throw ShapeError(in_path + ": expected an RGB image, got " + shape_str(image.shape()));
  const SketchMask sketch = extract_sketch(image, params);
  save_sketch_png(sketch, 0, out_path);
  out << "wrote " << out_path << " (" << sketch.contour_pixels() << " contour pixels)\n";
}

void train(const std::string& config_path, const std::string& data_dir, const std::string& run_dir, bool ablation,
           std::ostream& out) {
  const TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  const Dataset ds = load_dataset(data_dir);
  if (ablation) {
    const auto grid = ablation_grid(cfg);
    const auto reports = run_ablation(cfg, ds, run_dir);
    for (size_t i = 0; i < reports.size(); ++i) {
      out << "== " << grid[i].first << " ==\n" << format_report(reports[i]);
    }
    out << "wrote " << reports.size() << " reports under " << run_dir << "\n";
    return;
  }
  Trainer trainer(cfg, ds);
  const RunReport report = trainer.run(run_dir);
  out << format_report(report) << "wrote " << run_dir << "\n";
}

void synth(const std::string& checkpoint, const std::string& sketch_path, const std::vector<std::string>& styles,
           std::vector<float> weights, const std::string& out_path, std::ostream& out) {
  if (!weights.empty() && weights.size() != styles.size()) {
    throw ConfigError("got " + std::to_string(weights.size()) + " weights for " + std::to_string(styles.size()) +
                      " style images");
  }
  if (weights.empty()) weights.assign(styles.size(), 1.0f);
  const auto nets = load_checkpoint(checkpoint);
  const int size = nets->config.image_size;
  const SketchMask sketch = load_sketch_png(sketch_path);
  if (sketch.height() != size || sketch.width() != size) {
    throw ShapeError(sketch_path + ": sketch is " + std::to_string(sketch.height()) + "x" +
                     std::to_string(sketch.width()) + ", model expects " + std::to_string(size));
  }
  std::vector<StyleBundle> bundles;
  for (const std::string& path : styles) {
    const Tensor image = load_png(path);
    if (image.size(0) != 3 || image.size(1) != size || image.size(2) != size) {
      throw ShapeError(path + ": style image is " + shape_str(image.shape()) + ", model expects [3," +
                       std::to_string(size) + "," + std::to_string(size) + "]");
    }
    const Tensor batch = reshape(image, {1, 3, size, size});
    NoGradGuard no_grad;
    StyleBundle b = extract_style(nets->encoder, batch);
    b.style_sketch = extract_sketch(batch);
    bundles.push_back(std::move(b));
  }
  NoGradGuard no_grad;
  const StyleBundle style = blend_styles(bundles, weights);
  const Tensor image = nets->generator.forward(sketch, style);
  save_png(reshape(image, {3, size, size}), out_path);
  out << "wrote " << out_path << "\n";
}

void eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out_path, uint64_t seed,
          std::ostream& out) {
  if (!fs::is_directory(checkpoint)) throw IoError("missing checkpoint " + checkpoint);
  const auto nets = load_checkpoint(checkpoint);
  const Dataset ds = load_dataset(data_dir);
  EvalOptions options;
  options.seed = seed;
  const EvalReport report = evaluate(*nets, ds, options);
  std::ostringstream table;
  for (const MetricRow& row : report.rows) {
    table << row.name << "\t" << row.value << "\tsamples=" << row.samples << "\tseed=" << row.seed << "\n";
  }
  out << table.str();
  if (!out_path.empty()) write_text(out_path, to_json(report).dump(2) + "\n");
}

void gradcheck_cmd(const std::vector<std::string>& ops, int seeds, double tolerance, std::ostream& out) {
  std::vector<const GradcheckCase*> selected;
  for (const GradcheckCase& c : gradcheck_cases()) {
    if (ops.empty() || std::find(ops.begin(), ops.end(), c.name) != ops.end()) selected.push_back(&c);
  }
  for (const std::string& name : ops) {
    const bool known = std::any_of(gradcheck_cases().begin(), gradcheck_cases().end(),
                                   [&](const GradcheckCase& c) { return c.name == name; });
    if (!known) throw ConfigError("unknown gradcheck op " + name);
  }
  int failures = 0;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %6s %14s  %s\n", "op", "seeds", "max_rel_err", "result");
  out << line;
  for (const GradcheckCase* c : selected) {
    const GradcheckSummary s = run_gradcheck_case(*c, seeds, 0x5eed, tolerance);
    std::snprintf(line, sizeof line, "%-28s %6d %14.3e  %s\n", s.name.c_str(), s.seeds, s.max_rel_error,
                  s.passed ? "PASS" : "FAIL");
    out << line;
    failures += !s.passed;
  }
  if (failures > 0) throw ValidationFailure(std::to_string(failures) + " gradcheck op(s) exceeded tolerance");
}

void goldens_verify(const std::string& dir, std::ostream& out) {
  const auto results = verify_goldens(dir);
  out << format_golden_table(results);
  const auto failures = std::count_if(results.begin(), results.end(), [](const GoldenResult& r) { return !r.passed; });
  if (failures > 0) throw ValidationFailure(std::to_string(failures) + " golden case(s) outside tolerance");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Style-conditioned sketch-to-image synthesis", "stylesketch"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic style corpus");
  gen->add_option("--spec", spec_path, "CorpusSpec JSON (defaults when omitted)");
  gen->add_option("--out", out_dir, "Dataset directory")->required();

  std::string image_in, sketch_out;
  SketchParams sketch_params;
  auto* ext = app.add_subcommand("extract-sketch", "Binary contour map of an RGB PNG");
  ext->add_option("--in", image_in, "Input image")->required();
  ext->add_option("--out", sketch_out, "Output sketch PNG")->required();
  ext->add_option("--sigma", sketch_params.sigma, "Inner Gaussian sigma");
  ext->add_option("--k", sketch_params.k, "Outer sigma multiplier");
  ext->add_option("--tau", sketch_params.tau, "Threshold on the DoG response");

  std::string config_path, data_dir, run_dir;
  bool ablation = false;
  auto* tr = app.add_subcommand("train", "Train G and D, write checkpoints and a report");
  tr->add_option("--config", config_path, "TrainConfig JSON (defaults when omitted)");
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--run", run_dir, "Run directory")->required();
  tr->add_flag("--ablation", ablation, "Run baseline, +DMI, +FMT, +2B, +IDN into run/<name>");

  std::string checkpoint, sketch_in, synth_out;
  std::vector<std::string> styles;
  std::vector<float> weights;
  auto* sy = app.add_subcommand("synth", "Render a sketch in one or a blend of styles");
  sy->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  sy->add_option("--sketch", sketch_in, "Sketch PNG")->required();
  sy->add_option("--style", styles, "Style image PNG (repeatable)")->required();
  sy->add_option("--weight", weights, "Blend weight per style image, in order (all 1 when omitted)");
  sy->add_option("--out", synth_out, "Output PNG")->required();

  std::string eval_checkpoint, eval_data, eval_out;
  uint64_t eval_seed = 1;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's test split");
  ev->add_option("--checkpoint", eval_checkpoint, "Checkpoint directory")->required();
  ev->add_option("--data", eval_data, "Dataset directory")->required();
  ev->add_option("--out", eval_out, "Write the report as JSON");
  ev->add_option("--seed", eval_seed, "Seed for the shuffled-sketch pairing");

  std::vector<std::string> ops;
  int seeds = 20;
  double tolerance = 1e-3;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference audit of every differentiable op");
  gc->add_option("--ops", ops, "Op names (all when omitted)")->delimiter(',');
  gc->add_option("--seeds", seeds, "Random seeds per op")->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", tolerance, "Maximum relative error");

  std::string goldens_dir;
  auto* gv = app.add_subcommand("goldens-verify", "Check goldens against this implementation");
  gv->add_option("--dir", goldens_dir, "Goldens directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what(), kExitIoConfig);
    return kExitIoConfig;
  }

  try {
    if (*gen) gen_data(spec_path, out_dir, out);
    else if (*ext) extract(image_in, sketch_out, sketch_params, out);
    else if (*tr) train(config_path, data_dir, run_dir, ablation, out);
    else if (*sy) synth(checkpoint, sketch_in, styles, weights, synth_out, out);
    else if (*ev) eval(eval_checkpoint, eval_data, eval_out, eval_seed, out);
    else if (*gc) gradcheck_cmd(ops, seeds, tolerance, out);
    else if (*gv) goldens_verify(goldens_dir, out);
  } catch (const ValidationFailure& e) {
    report_error(err, "validation", e.what(), kExitValidation);
    return kExitValidation;
  } catch (const Error& e) {
    const int code = exit_code_for(e);
    report_error(err, e.kind(), e.what(), code);
    return code;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "io", e.what(), kExitIoConfig);
    return kExitIoConfig;
  }
  return kExitOk;
}

}  // namespace stylesketch::cli
