// chno: dataset generation, training, evaluation and prediction.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
// Failures also print one JSON line on stderr prefixed with "error: ".

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "chno/datasets.hpp"
#include "chno/evaluation.hpp"
#include "chno/operators.hpp"
#include "chno/training.hpp"

namespace fs = std::filesystem;
using namespace chno;

namespace {

constexpr const char *kVersion = "1.0.0";

int error_exit(const std::string &type, int code, const std::string &message) {
  nlohmann::json j{{"type", type}, {"exit_code", code}, {"message", message}};
  std::cerr << "error: " << j.dump() << std::endl;
  return code;
}

struct Common {
  std::uint64_t seed = 0;
  bool deterministic = false;
  int threads = 1;
};

std::string config_file_unused; // parsed before CLI11 sees argv; declared for --help

void add_common(CLI::App *sub, Common &c) {
  sub->add_option("--config", config_file_unused,
                  "key = value file; keys are long option names, explicit flags override them");
  sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
  sub->add_flag("--deterministic", c.deterministic, "single worker, byte-reproducible outputs");
  sub->add_option("--threads", c.threads, "worker threads (generation)")
      ->envname("CHNO_THREADS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

int effective_threads(const Common &c) { return c.deterministic ? 1 : c.threads; }

/// Resolved options of `sub` as key = value lines (re-usable with --config),
/// followed by derived settings as comments.
void write_run_config(const fs::path &dir, const CLI::App *sub, const std::vector<std::string> &resolved = {}) {
  fs::create_directories(dir);
  std::ofstream os(dir / "run_config.txt");
  os << "# chno " << kVersion << " " << sub->get_name() << "\n";
  for (const CLI::Option *opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string key = opt->get_lnames().front();
    if (key == "help" || key == "config") continue;
    std::string value;
    if (opt->get_expected_min() == 0)
      value = opt->count() > 0 ? "true" : "false";
    else if (opt->count() > 0)
      value = opt->results().back();
    else
      value = opt->get_default_str();
    if (!value.empty()) os << key << " = " << value << '\n';
  }
  for (const auto &line : resolved) os << "# " << line << '\n';
  if (!os) throw IoError("cannot write " + (dir / "run_config.txt").string());
}

std::vector<std::string> kv_lines(const std::map<std::string, std::string> &m, const std::string &prefix) {
  std::vector<std::string> out;
  for (const auto &[k, v] : m) out.push_back(prefix + k + " = " + v);
  return out;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  Common common;
  std::string profile = "desk";
  std::string out;
  bool force = false;
  std::optional<int> n_sims, frames, fragments, nx;
  std::optional<double> epsilon;
};

int cmd_generate(const GenerateArgs &a, const CLI::App *sub) {
  DatasetManifest m = profile_by_name(a.profile);
  m.base_seed = a.common.seed;
  if (a.n_sims) m.n_sims = *a.n_sims;
  if (a.frames) m.frames_per_sim = *a.frames;
  if (a.fragments) m.fragments_per_sim = *a.fragments;
  if (a.nx) m.grid = m.grid.with_size(*a.nx, *a.nx);
  if (a.epsilon) m.params.epsilon = *a.epsilon;
  m.validate();

  GenerateOptions opt;
  opt.force = a.force;
  opt.threads = effective_threads(a.common);
  int done = 0;
  opt.progress = [&](int id, bool ok) {
    ++done;
    std::cout << "case " << id << " " << (ok ? "ok" : "FAILED") << " (" << done << "/" << m.n_sims << ")" << std::endl;
  };
  const auto written = generate(m, a.out, opt);
  write_run_config(a.out, sub, kv_lines(manifest_to_map(written), "manifest."));
  if (!written.failed_cases.empty())
    std::cout << "solver diverged in " << written.failed_cases.size() << " case(s): "
              << detail::join_ints(written.failed_cases) << std::endl;
  if (!written.bound_violations.empty())
    std::cout << "max|phi| > 1.05 in " << written.bound_violations.size() << " case(s): "
              << detail::join_ints(written.bound_violations) << std::endl;
  std::cout << "manifest: " << (fs::path(a.out) / "manifest.txt").string() << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  Common common;
  std::string data, out;
  std::string model = "uno";
  std::string equivariant = "off";
  std::string data_loss = "l2";
  int epochs = 200;
  int batch = 16;
  int width_div = 1;
  double eq_weight = 1.0;
  int eq_sample = 0;
  double lr_init = 5e-4, lr_final = 1e-5;
};

ModelConfig model_config_for(const std::string &kind, int width_div) {
  ModelConfig c;
  c.kind = model_kind_from_string(kind);
  if (c.kind == ModelKind::UNO)
    c.uno = uno_width_scaled(width_div);
  else
    c.fno = fno_width_scaled(width_div);
  return c;
}

int cmd_train(const TrainArgs &a, const CLI::App *sub) {
  const Dataset ds(a.data);
  const auto &man = ds.manifest();
  auto mc = model_config_for(a.model, a.width_div);
  mc.n_in = man.n_in;
  mc.n_out = man.n_out;
  mc.seed = a.common.seed;
  OperatorModel model(mc);
  (void)model.layer_resolutions(man.grid.ny, man.grid.nx);

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.n_in = man.n_in;
  tc.n_out = man.n_out;
  tc.lr_schedule = {a.lr_init, a.lr_final, a.epochs};
  tc.seed = a.common.seed;
  LossConfig lc;
  lc.data_loss = data_loss_from_string(a.data_loss);
  lc.eq_weight = a.equivariant == "on" ? a.eq_weight : 0.0;
  lc.eq_sample = a.eq_sample;

  auto resolved = kv_lines(config_to_map(mc), "model.");
  resolved.push_back("model.parameters = " + std::to_string(model.parameter_count()));
  resolved.push_back("loss.eq_weight = " + format_double(lc.eq_weight));
  resolved.push_back("dataset.dir = " + a.data);
  for (auto &l : kv_lines(manifest_to_map(man), "dataset."))
    if (l.rfind("dataset.split.", 0) != 0) resolved.push_back(l);
  write_run_config(a.out, sub, resolved);

  const auto train = ds.samples(Split::Train), val = ds.samples(Split::Val);
  std::cout << to_string(mc.kind) << (lc.eq_weight > 0 ? " (equivariant)" : "") << ": " << model.parameter_count()
            << " parameters, " << train.size() << " training / " << val.size() << " validation samples" << std::endl;
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = fit(model, train, val, tc, lc, man.grid, [&](const EpochRecord &r) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "epoch " << r.epoch << " lr " << r.lr << " train " << r.train_loss << " val " << r.val_loss
              << " eq " << r.eq_loss << " (" << s << " s)" << std::endl;
  });
  const auto out = fs::path(a.out);
  save_model((out / "model.chck").string(), (out / "model.cfg").string(), model);
  write_report_csv((out / "training_report.csv").string(), report);
  std::cout << "best epoch " << report.best_epoch << " val " << report.best_val << std::endl;
  std::cout << "checkpoint: " << (out / "model.chck").string() << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  Common common;
  std::string data, model_dir, out;
  std::string split = "test";
  int superres = 0;
  int windows = 4;
  std::optional<int> n_in;
  bool error_maps = false;
};

OperatorModel load_from_dir(const std::string &dir) {
  const auto d = fs::path(dir);
  return load_model((d / "model.chck").string(), (d / "model.cfg").string());
}

std::vector<std::pair<double, double>> by_tstar(const std::vector<FrameError> &rows) {
  std::vector<std::pair<double, double>> out;
  for (const auto &r : rows) out.emplace_back(r.t_star, r.rel_error);
  return out;
}

int cmd_eval(const EvalArgs &a, const CLI::App *sub) {
  const Dataset ds(a.data);
  const auto &man = ds.manifest();
  auto model = load_from_dir(a.model_dir);
  const auto &mc = model.config();
  if (a.n_in && *a.n_in != mc.n_in)
    throw ConfigError("--n-in " + std::to_string(*a.n_in) + " differs from the checkpoint's n_in " +
                      std::to_string(mc.n_in));
  if (mc.n_in != man.n_in || mc.n_out != man.n_out)
    throw ConfigError("checkpoint expects n_in/n_out " + std::to_string(mc.n_in) + "/" + std::to_string(mc.n_out) +
                      " but the dataset has " + std::to_string(man.n_in) + "/" + std::to_string(man.n_out));
  if (a.superres < 0) throw ConfigError("--superres must be a positive factor");
  (void)model.layer_resolutions(man.grid.ny, man.grid.nx);
  if (a.superres > 1) (void)model.layer_resolutions(man.grid.ny * a.superres, man.grid.nx * a.superres);
  write_run_config(a.out, sub, kv_lines(config_to_map(mc), "model."));
  const auto out = fs::path(a.out);

  std::vector<FrameError> frames, fine_frames;
  std::vector<EnergyRow> energy;
  std::ofstream eq = open_csv((out / "equivariance.csv").string(), "case_id,deviation");
  int undefined = 0;
  const auto cases = ds.cases(split_from_string(a.split));
  if (cases.empty()) throw ConfigError("split '" + a.split + "' has no usable cases");
  for (int id : cases) {
    const auto truth = ds.trajectory(id);
    const auto r = evaluate_rollout(model, truth, id);
    for (const auto &e : r.errors) undefined += std::isfinite(e.rel_error) ? 0 : 1;
    frames.insert(frames.end(), r.errors.begin(), r.errors.end());
    const auto rows = energy_rows(truth, r, man.params);
    energy.insert(energy.end(), rows.begin(), rows.end());

    std::vector<const ScalarField2D *> first;
    for (int k = 0; k < mc.n_in; ++k) first.push_back(&truth.fields[k]);
    eq << id << ',' << equivariance_deviation(model, stack_frames(first)) << '\n';

    if (a.error_maps) {
      fs::create_directories(out / "error_maps");
      std::vector<ScalarField2D> maps;
      for (std::size_t k = 0; k < r.prediction.size(); ++k)
        maps.push_back(error_map(truth.fields[mc.n_in + k], r.prediction.fields[k]));
      io::write_frames((out / "error_maps" / case_file_name(id)).string(), maps);
    }
    if (a.superres > 1) {
      const auto fine = fine_reference(man, truth, a.superres);
      const auto fe = superres_eval(model, fine, mc.n_in, mc.n_out, id);
      fine_frames.insert(fine_frames.end(), fe.begin(), fe.end());
    }
    std::cout << "case " << id << " done" << std::endl;
  }
  eq.close();
  write_frame_errors_csv((out / "frame_errors.csv").string(), frames);
  write_window_stats_csv((out / "window_stats.csv").string(), window_stats(by_tstar(frames), a.windows));
  write_energy_csv((out / "energy.csv").string(), energy);
  if (a.superres > 1) {
    write_frame_errors_csv((out / "superres_frame_errors.csv").string(), fine_frames);
    write_window_stats_csv((out / "superres_window_stats.csv").string(),
                           window_stats(by_tstar(fine_frames), a.windows));
  }
  if (undefined > 0) std::cout << undefined << " frame(s) with an undefined relative error (zero reference)" << std::endl;
  std::vector<double> all;
  for (const auto &f : frames)
    if (std::isfinite(f.rel_error)) all.push_back(f.rel_error);
  if (!all.empty()) std::cout << "median rel_error " << median_of(all) << std::endl;
  std::cout << "results: " << out.string() << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  Common common;
  std::string model_dir, input, out;
  std::string boundary = "neumann";
  int windows = 1;
  double dt = 0.01;
};

int cmd_predict(const PredictArgs &a, const CLI::App *) {
  if (a.windows < 1) throw ConfigError("--windows must be at least 1");
  auto model = load_from_dir(a.model_dir);
  const int n_in = model.config().n_in;
  const auto frames = io::read_frames(a.input, boundary_from_string(a.boundary));
  if (static_cast<int>(frames.size()) < n_in)
    throw ShapeError(a.input + " holds " + std::to_string(frames.size()) + " frames, the model needs " +
                     std::to_string(n_in));
  Trajectory hist;
  hist.dt = a.dt;
  hist.fields.assign(frames.end() - n_in, frames.end());
  std::vector<ScalarField2D> predicted;
  double total = 0.0;
  for (int w = 0; w < a.windows; ++w) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto step = rollout(model, hist, 1);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    total += s;
    std::cout << "timing window=" << w << " seconds=" << s << std::endl;
    for (const auto &f : step.fields) {
      predicted.push_back(f);
      hist.fields.erase(hist.fields.begin());
      hist.fields.push_back(f);
    }
  }
  io::write_frames(a.out, predicted);
  std::cout << "timing mean_seconds_per_window=" << total / a.windows << std::endl;
  std::cout << "wrote " << predicted.size() << " frames to " << a.out << std::endl;
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Cahn-Hilliard solver and neural-operator workbench"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", std::string("chno ") + kVersion);

  GenerateArgs ga;
  auto *gen = app.add_subcommand("generate", "simulate a dataset");
  add_common(gen, ga.common);
  gen->add_option("--profile", ga.profile, "dataset scale")->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
  gen->add_option("--out", ga.out, "output directory")->required();
  gen->add_flag("--force", ga.force, "overwrite a non-empty output directory");
  gen->add_option("--n-sims", ga.n_sims, "override the number of simulations");
  gen->add_option("--frames", ga.frames, "override frames per simulation");
  gen->add_option("--fragments", ga.fragments, "override fragments per simulation");
  gen->add_option("--nx", ga.nx, "override the grid size (square)");
  gen->add_option("--epsilon", ga.epsilon, "override the interface parameter");

  TrainArgs ta;
  auto *train = app.add_subcommand("train", "train an operator on a dataset");
  add_common(train, ta.common);
  train->add_option("--data", ta.data, "dataset directory")->required();
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--model", ta.model, "architecture")->check(CLI::IsMember({"fno", "uno"}))->capture_default_str();
  train->add_option("--equivariant", ta.equivariant, "add the D4 equivariance loss")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  train->add_option("--data-loss", ta.data_loss, "data term")->check(CLI::IsMember({"l2", "h1"}))->capture_default_str();
  train->add_option("--epochs", ta.epochs, "training epochs")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--batch", ta.batch, "mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--width-div", ta.width_div, "divide every channel count by this")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_option("--eq-weight", ta.eq_weight, "equivariance loss weight when enabled")->capture_default_str();
  train->add_option("--eq-sample", ta.eq_sample, "group elements drawn per batch (0: all)")->capture_default_str();
  train->add_option("--lr-init", ta.lr_init, "initial learning rate")->capture_default_str();
  train->add_option("--lr-final", ta.lr_final, "final learning rate")->capture_default_str();

  EvalArgs ea;
  auto *eval = app.add_subcommand("eval", "roll out and score a trained model");
  add_common(eval, ea.common);
  eval->add_option("--data", ea.data, "dataset directory")->required();
  eval->add_option("--model-dir", ea.model_dir, "directory with model.chck and model.cfg")->required();
  eval->add_option("--out", ea.out, "output directory")->required();
  eval->add_option("--split", ea.split, "cases to evaluate")->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  eval->add_option("--superres", ea.superres, "also evaluate at this resolution factor (0: off)")->capture_default_str();
  eval->add_option("--windows", ea.windows, "time windows for box statistics")->check(CLI::PositiveNumber)->capture_default_str();
  eval->add_option("--n-in", ea.n_in, "expected input frames (checked against the checkpoint)");
  eval->add_flag("--error-maps", ea.error_maps, "dump per-frame error fields");

  PredictArgs pa;
  auto *pred = app.add_subcommand("predict", "autoregressive rollout from a field file");
  add_common(pred, pa.common);
  pred->add_option("--model-dir", pa.model_dir, "directory with model.chck and model.cfg")->required();
  pred->add_option("--input", pa.input, "field file; the last n_in frames seed the rollout")->required();
  pred->add_option("--out", pa.out, "output field file")->required();
  pred->add_option("--windows", pa.windows, "rollout windows")->capture_default_str();
  pred->add_option("--boundary", pa.boundary, "basis of the input fields")
      ->check(CLI::IsMember({"neumann", "periodic"}))
      ->capture_default_str();
  pred->add_option("--dt", pa.dt, "frame spacing")->capture_default_str();

  auto *ver = app.add_subcommand("version", "print version and file-format versions");

  // Expand "--config FILE" after the subcommand into --key=value tokens placed
  // before the explicit flags, which therefore win.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t k = 1; k < args.size(); ++k) {
      std::string path;
      std::size_t n_remove = 0;
      if (args[k] == "--config" && k + 1 < args.size()) {
        path = args[k + 1];
        n_remove = 2;
      } else if (args[k].rfind("--config=", 0) == 0) {
        path = args[k].substr(9);
        n_remove = 1;
      } else {
        continue;
      }
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(k), args.begin() + static_cast<std::ptrdiff_t>(k + n_remove));
      std::vector<std::string> expanded;
      for (const auto &[key, value] : read_kv(path)) expanded.push_back("--" + key + "=" + value);
      args.insert(args.begin() + 1, expanded.begin(), expanded.end());
      break;
    }
  } catch (const Error &e) {
    return error_exit("ConfigError", 2, e.what());
  }
  std::reverse(args.begin(), args.end()); // CLI11 takes a reversed argument vector

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return error_exit("UsageError", 2, e.what());
  }

  try {
    if (*gen) return cmd_generate(ga, gen);
    if (*train) return cmd_train(ta, train);
    if (*eval) return cmd_eval(ea, eval);
    if (*pred) return cmd_predict(pa, pred);
    if (*ver) {
      std::cout << "chno " << kVersion << "\n"
                << "field format " << io::kFieldVersion << "\n"
                << "checkpoint format " << nn::kCheckpointVersion << "\n"
                << "dataset format " << kDatasetFormatVersion << std::endl;
      return 0;
    }
  } catch (const ConfigError &e) {
    return error_exit("ConfigError", 2, e.what());
  } catch (const ShapeError &e) {
    return error_exit("ShapeError", 2, e.what());
  } catch (const ChecksumError &e) {
    return error_exit("ChecksumError", 1, e.what());
  } catch (const VersionError &e) {
    return error_exit("VersionError", 1, e.what());
  } catch (const MissingFileError &e) {
    return error_exit("MissingFileError", 1, e.what());
  } catch (const DivergenceError &e) {
    return error_exit("DivergenceError", 1, e.what());
  } catch (const RolloutError &e) {
    return error_exit("RolloutError", 1, e.what());
  } catch (const Error &e) {
    return error_exit("Error", 1, e.what());
  } catch (const std::exception &e) {
    return error_exit("InternalError", 1, e.what());
  }
  return 0;
}
