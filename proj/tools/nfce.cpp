// nfce: dataset generation, training, evaluation and gradient checks.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "nfce/nfce.hpp"

namespace {

using namespace nfce;

const char* error_prefix(ErrorCode code, const Error& e) {
  if (dynamic_cast<const IoError*>(&e)) return "E_IO";
  if (dynamic_cast<const FormatError*>(&e)) return "E_FORMAT";
  switch (code) {
    case ErrorCode::invalid_argument: return "E_USAGE";
    case ErrorCode::numerical: return "E_NUMERIC";
    default: return "E_IO";
  }
}

std::vector<double> parse_list(const std::string& text) { return parse_snr_grid(text); }

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string out;
  std::size_t samples = 1000;
  std::size_t antennas = 256;
  std::string scenario = "hybrid";
  std::string lf = "u0-10";
  std::string ln = "u0-10";
  std::uint64_t seed = 1;
};

int cmd_generate(const GenerateArgs& a) {
  require(a.samples >= 1, "--samples must be positive");
  const ArrayConfig cfg = ArrayConfig::half_wavelength(a.antennas);
  ScenarioSpec scen;
  if (a.scenario == "hybrid") {
    scen = ScenarioSpec::hybrid(PathCount::parse(a.lf), PathCount::parse(a.ln));
  } else if (a.scenario == "far") {
    scen = ScenarioSpec::far_only(PathCount::parse(a.lf));
  } else if (a.scenario == "near") {
    scen = ScenarioSpec::near_only(PathCount::parse(a.ln));
  } else {
    throw InvalidArgument("unknown scenario '" + a.scenario + "' (far|near|hybrid)");
  }
  scen.validate();
  const Dataset ds = generate_dataset(cfg, scen, a.samples, a.seed);
  io::save_dataset(a.out, ds);

  double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& r : ds.records) {
    const double e = r.h.squaredNorm();
    sum += e;
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  std::printf("wrote %s: %zu samples, M=%zu, scenario=%s L_f=%s L_n=%s, %zu bytes\n",
              a.out.c_str(), ds.size(), a.antennas, scen.name.c_str(),
              scen.far.to_string().c_str(), scen.near.to_string().c_str(),
              io::dataset_file_bytes(a.antennas, ds.size()));
  std::printf("energy |h|^2: mean %.6g min %.6g max %.6g (expected mean %.6g)\n",
              sum / static_cast<double>(ds.size()), lo, hi,
              scen.gain_variance * static_cast<double>(a.antennas));
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string out;
  std::string loss_csv;
  std::string variant = "racnn";
  std::size_t epochs = 40;
  double lr = 1e-3;
  std::size_t batch = 128;
  std::string snrs = "10,15";
  std::uint64_t seed = 1;
  std::size_t depth = 3;
  std::size_t width = 64;
  std::string precision = "f32";
  double val_fraction = 0.1;
  bool quiet = false;
};

template <typename T>
int train_typed(const TrainArgs& a, const Dataset& ds) {
  const ModelConfig mc =
      ModelConfig::for_antennas(ds.antennas, a.width, a.depth, parse_variant(a.variant));
  Racnn<T> model = build_model<T>(mc, derive_seed(a.seed, 0x1417));
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.train_snrs_db = parse_list(a.snrs);
  tc.seed = a.seed;
  tc.val_fraction = a.val_fraction;
  tc.adam.learning_rate = a.lr;
  const auto t0 = std::chrono::steady_clock::now();
  if (!a.quiet) {
    tc.on_epoch = [&](const EpochStats& s) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "epoch %zu/%zu train_mse %.6g val_mse %.6g (%.1fs)\n", s.epoch,
                   a.epochs, s.train_mse, s.val_mse, secs);
    };
  }
  const TrainResult result = train(model, ds, tc);

  std::ostringstream csv;
  csv << "epoch,train_mse,val_mse\n";
  for (const auto& s : result.history) {
    csv << s.epoch << ',' << format_double(s.train_mse) << ',' << format_double(s.val_mse)
        << '\n';
  }
  const std::string csv_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  write_text(csv_path, csv.str());

  nlohmann::json meta{{"seed", a.seed},
                      {"epochs", a.epochs},
                      {"batch_size", a.batch},
                      {"learning_rate", a.lr},
                      {"train_snrs_db", tc.train_snrs_db},
                      {"precision", a.precision},
                      {"train_samples", result.train_samples},
                      {"val_samples", result.val_samples},
                      {"skipped_steps", result.skipped_steps},
                      {"final_train_mse", result.history.back().train_mse},
                      {"final_val_mse", result.history.back().val_mse}};
  io::save_model_file(a.out, to_model_file(model, meta));
  std::printf("wrote %s (%s, %zu parameters) and %s; final train_mse %.6g val_mse %.6g\n",
              a.out.c_str(), to_string(mc.variant).c_str(), model.parameter_count(),
              csv_path.c_str(), result.history.back().train_mse, result.history.back().val_mse);
  return 0;
}

int cmd_train(const TrainArgs& a) {
  const Dataset ds = io::load_dataset(a.data);
  if (a.precision == "f32") return train_typed<float>(a, ds);
  if (a.precision == "f64") return train_typed<double>(a, ds);
  throw InvalidArgument("unknown precision '" + a.precision + "' (f32|f64)");
}

// ---------------------------------------------------------------- fit-mmse

struct FitMmseArgs {
  std::string data;
  std::string out;
};

int cmd_fit_mmse(const FitMmseArgs& a) {
  const Dataset ds = io::load_dataset(a.data);
  std::vector<ComplexVector> hs;
  for (const auto& r : ds.records) hs.push_back(r.h);
  const MmseFilter f = fit_mmse(std::span<const ComplexVector>(hs));
  io::save_model_file(a.out, to_model_file(f, {{"source", a.data}}));
  std::printf("wrote %s: MMSE covariance %zux%zu from %zu channels (trace %.6g)\n",
              a.out.c_str(), static_cast<std::size_t>(f.dim()),
              static_cast<std::size_t>(f.dim()), f.sample_count,
              f.covariance.trace().real());
  return 0;
}

// ---------------------------------------------------------------- eval / sweep

struct ReportArgs {
  std::vector<std::string> models;
  std::string baselines = "ls,mmse";
  std::string snrs = "0:4:20";
  std::string out;
  std::string format;
  std::size_t batch = 256;
};

struct SweepArgs : ReportArgs {
  std::string scenario_grid = "hybrid:u0-10/u0-10";
  std::size_t samples_per_cell = 1000;
  std::size_t antennas = 0;  // 0: taken from the models, else 256
  std::size_t calibration = 10000;
  std::uint64_t seed = 1;
};

struct EvalArgs : ReportArgs {
  std::string data;
  std::string calibration_data;
};

std::vector<std::unique_ptr<Estimator>> make_estimators(const ReportArgs& a,
                                                        std::size_t calibration,
                                                        std::size_t& antennas) {
  std::vector<std::unique_ptr<Estimator>> out;
  for (const auto& b : split(a.baselines, ',')) {
    if (b == "ls") {
      out.push_back(std::make_unique<LsEstimator>());
    } else if (b == "mmse") {
      out.push_back(std::make_unique<MmseEstimator>(calibration));
    } else if (b == "oracle") {
      out.push_back(std::make_unique<OracleEstimator>());
    } else if (b != "none") {
      throw InvalidArgument("unknown baseline '" + b + "' (ls|mmse|oracle|none)");
    }
  }
  auto check_antennas = [&](std::size_t m, const std::string& path) {
    if (antennas != 0 && antennas != m) {
      throw InvalidArgument("model '" + path + "' is for M=" + std::to_string(m) +
                            ", but the evaluation uses M=" + std::to_string(antennas));
    }
    antennas = m;
  };
  for (const auto& path : a.models) {
    const ModelFile mf = io::load_model_file(path);
    if (mf.kind == ModelKind::mmse) {
      MmseFilter f = mmse_from_model_file(mf);
      check_antennas(static_cast<std::size_t>(f.dim()), path);
      out.push_back(std::make_unique<MmseEstimator>(std::move(f)));
    } else {
      Racnn<float> model = racnn_from_model_file<float>(mf);
      check_antennas(model.config().antennas(), path);
      std::string name = std::filesystem::path(path).stem().string();
      out.push_back(std::make_unique<DenoiserEstimator<float>>(std::move(model), name, a.batch));
    }
  }
  require(!out.empty(), "no estimators selected");
  return out;
}

void emit_report(const ReportArgs& a, const NmseReport& report) {
  std::string format = a.format;
  if (format.empty()) {
    format = a.out.size() >= 5 && a.out.ends_with(".json") ? "json" : "csv";
  }
  std::string text;
  if (format == "csv") {
    text = report.to_csv();
  } else if (format == "json") {
    text = report.to_json().dump(2) + "\n";
  } else {
    throw InvalidArgument("unknown format '" + format + "' (csv|json)");
  }
  if (a.out.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_text(a.out, text);
    std::printf("wrote %s (%zu cells)\n", a.out.c_str(), report.cells.size());
  }
  for (const auto& c : report.cells) {
    if (!c.error.empty()) {
      std::fprintf(stderr, "warning: %s at %g dB (%s): %s\n", c.estimator.c_str(), c.snr_db,
                   c.scenario.c_str(), c.error.c_str());
    }
  }
}

std::vector<Estimator*> raw(const std::vector<std::unique_ptr<Estimator>>& v) {
  std::vector<Estimator*> out;
  for (const auto& e : v) out.push_back(e.get());
  return out;
}

int cmd_sweep(const SweepArgs& a) {
  SweepConfig cfg;
  cfg.scenarios = parse_scenario_grid(a.scenario_grid);
  cfg.snrs_db = parse_snr_grid(a.snrs);
  cfg.samples_per_cell = a.samples_per_cell;
  cfg.seed = a.seed;
  std::size_t antennas = a.antennas;
  auto estimators = make_estimators(a, a.calibration, antennas);
  cfg.array = ArrayConfig::half_wavelength(antennas == 0 ? 256 : antennas);
  const auto ptrs = raw(estimators);
  emit_report(a, run_sweep(ptrs, cfg));
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const Dataset ds = io::load_dataset(a.data);
  std::vector<ComplexVector> calibration;
  if (!a.calibration_data.empty()) {
    const Dataset cal = io::load_dataset(a.calibration_data);
    require(cal.antennas == ds.antennas, "calibration dataset has a different antenna count");
    for (const auto& r : cal.records) calibration.push_back(r.h);
  } else {
    for (const auto& r : ds.records) calibration.push_back(r.h);
  }
  std::size_t antennas = ds.antennas;
  auto estimators = make_estimators(a, 0, antennas);
  const auto snrs = parse_snr_grid(a.snrs);
  const auto ptrs = raw(estimators);
  emit_report(a, run_dataset_eval(ptrs, ds, snrs, calibration));
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::string layer;
  double tolerance = 1e-4;
  std::size_t instances = 5;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  GradcheckSuiteOptions opt;
  opt.layer = a.layer;
  opt.tolerance = a.tolerance;
  opt.instances = a.instances;
  const auto reports = run_gradcheck_suite(opt);
  std::size_t failed = 0;
  for (const auto& r : reports) {
    std::size_t checked = 0, skipped = 0;
    for (const auto& g : r.groups) {
      checked += g.checked;
      skipped += g.skipped;
    }
    std::printf("%-4s %-14s max_rel_err %.3e tol %.1e checked %zu skipped %zu%s%s\n",
                r.passed ? "PASS" : "FAIL", r.name.c_str(), r.max_rel_error(), r.tolerance,
                checked, skipped, r.message.empty() ? "" : " ", r.message.c_str());
    if (!r.passed) ++failed;
  }
  std::printf("%zu/%zu checks passed\n", reports.size() - failed, reports.size());
  if (failed) {
    std::fprintf(stderr, "E_NUMERIC: %zu gradient checks exceeded tolerance %g\n", failed,
                 a.tolerance);
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Near-field ELAA channel estimation workbench"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a clean channel dataset");
  g->add_option("--out", gen.out, "Output dataset file")->required();
  g->add_option("--samples", gen.samples, "Number of channels")->capture_default_str();
  g->add_option("--antennas", gen.antennas, "Array size M")->capture_default_str();
  g->add_option("--scenario", gen.scenario, "far|near|hybrid")->capture_default_str();
  g->add_option("--lf", gen.lf, "Far path count: N or uLO-HI")->capture_default_str();
  g->add_option("--ln", gen.ln, "Near path count: N or uLO-HI")->capture_default_str();
  g->add_option("--seed", gen.seed, "Base seed")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a denoiser on a dataset");
  t->add_option("--data", tr.data, "Training dataset")->required();
  t->add_option("--out", tr.out, "Output model file")->required();
  t->add_option("--loss-csv", tr.loss_csv, "Per-epoch loss CSV (default <out>.loss.csv)");
  t->add_option("--variant", tr.variant, "racnn|cnn")->capture_default_str();
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--snrs", tr.snrs, "Training SNRs in dB")->capture_default_str();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_option("--depth", tr.depth, "Number of body blocks")->capture_default_str();
  t->add_option("--width", tr.width, "Trunk channels")->capture_default_str();
  t->add_option("--precision", tr.precision, "f32|f64")->capture_default_str();
  t->add_option("--val-fraction", tr.val_fraction)->capture_default_str();
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  FitMmseArgs fm;
  auto* f = app.add_subcommand("fit-mmse", "Fit an MMSE covariance on a dataset");
  f->add_option("--data", fm.data)->required();
  f->add_option("--out", fm.out)->required();

  auto add_report_options = [](CLI::App* cmd, ReportArgs& r) {
    cmd->add_option("--model", r.models, "Model file (repeatable)");
    cmd->add_option("--baselines", r.baselines, "ls,mmse,oracle or none")->capture_default_str();
    cmd->add_option("--snrs", r.snrs, "start:step:stop or a,b,c")->capture_default_str();
    cmd->add_option("--out", r.out, "Report file (stdout when absent)");
    cmd->add_option("--format", r.format, "csv|json (default from --out extension)");
    cmd->add_option("--batch", r.batch, "Denoiser batch size")->capture_default_str();
  };

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "NMSE sweep over a scenario and SNR grid");
  add_report_options(s, sw);
  s->add_option("--scenario-grid", sw.scenario_grid, "e.g. far:3,5,7;hybrid:6/3")
      ->capture_default_str();
  s->add_option("--samples-per-cell", sw.samples_per_cell)->capture_default_str();
  s->add_option("--antennas", sw.antennas, "Array size (default: from models, else 256)");
  s->add_option("--calibration", sw.calibration, "MMSE calibration channels per scenario")
      ->capture_default_str();
  s->add_option("--seed", sw.seed)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "NMSE on the channels of a dataset file");
  add_report_options(e, ev);
  e->add_option("--data", ev.data, "Evaluation dataset")->required();
  e->add_option("--calibration-data", ev.calibration_data,
                "MMSE calibration dataset (default: the evaluation dataset)");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every layer in f64");
  c->add_option("--layer", gc.layer, "conv2d|relu|batchnorm|attention|ra_block|mse|racnn");
  c->add_option("--tolerance", gc.tolerance)->capture_default_str();
  c->add_option("--instances", gc.instances)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::fprintf(stderr, "E_USAGE: %s\n", ex.what());
    return 1;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*f) return cmd_fit_mmse(fm);
    if (*s) return cmd_sweep(sw);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_gradcheck(gc);
  } catch (const Error& ex) {
    std::fprintf(stderr, "%s: %s\n", error_prefix(ex.code(), ex), ex.what());
    return ex.exit_code();
  } catch (const nlohmann::json::exception& ex) {
    std::fprintf(stderr, "E_FORMAT: %s\n", ex.what());
    return 2;
  } catch (const std::bad_alloc&) {
    std::fprintf(stderr, "E_IO: out of memory\n");
    return 2;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "E_NUMERIC: %s\n", ex.what());
    return 3;
  }
  return 1;
}
