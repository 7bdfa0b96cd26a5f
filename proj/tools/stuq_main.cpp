// Command-line front end: synthetic data generation, point training,
// full experiments, sample-complexity sweeps, plot-data emission, and the
// standalone oracle suites. Exit codes: 0 success, 1 invalid input or a
// failed oracle, 2 numerical divergence during training or sampling.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stuq/harness.hpp"

namespace fs = std::filesystem;
using namespace stuq;

namespace {

struct SharedFlags {
  std::string config, method, out, samples;
  std::uint64_t seed = 0;
  double rho = 0.05;
};

void add_shared(CLI::App* sub, SharedFlags& sh) {
  sub->add_option("--config", sh.config, "experiment config file (sectioned key = value)");
  sub->add_option("--seed", sh.seed, "override the run seed");
  sub->add_option("--method", sh.method,
                  "override the method tag (point, bootstrap, quantile, sq, mis, "
                  "mc-dropout, sg-mcmc)");
  sub->add_option("--rho", sh.rho, "override the target miscoverage level");
  sub->add_option("--out", sh.out, "override the output directory");
  sub->add_option("--samples", sh.samples, "override the sweep sample counts, e.g. 5,25");
}

ExperimentConfig resolve_config(const CLI::App* sub, const SharedFlags& sh) {
  ExperimentConfig cfg;
  if (!sh.config.empty()) cfg = config_from_ini(load_ini(sh.config));
  if (sub->count("--seed")) cfg.run.seed = sh.seed;
  if (sub->count("--method")) cfg.method.tag = sh.method;
  if (sub->count("--rho")) cfg.method.rho = sh.rho;
  if (sub->count("--out")) cfg.run.out = sh.out;
  if (sub->count("--samples")) cfg.sweep.counts = parse_count_list(sh.samples);
  cfg.validate();
  return cfg;
}

int cmd_synth(const CLI::App* sub, const SharedFlags& sh) {
  ExperimentConfig cfg = resolve_config(sub, sh);
  require(cfg.dataset.kind == "synthetic", "synth: [dataset] kind must be synthetic");
  if (sub->count("--seed")) cfg.dataset.data_seed = sh.seed;  // seed drives generation here
  Dataset ds = build_dataset(cfg.dataset);
  const fs::path out(cfg.run.out);
  fs::create_directories(out);
  write_dataset_csv(ds, (out / "data.csv").string());
  if (ds.graph.has_value()) {
    write_adjacency_csv(*ds.graph, ds.node_ids, (out / "adjacency.csv").string());
    std::printf("wrote %s\n", (out / "adjacency.csv").c_str());
  }
  write_text_atomic((out / "dataset.ini").string(), ini_to_text(config_to_ini(cfg)));
  std::printf("wrote %s (T=%lld, P=%lld, D=%lld, generator=%s)\n", (out / "data.csv").c_str(),
              static_cast<long long>(ds.values.shape[0]),
              static_cast<long long>(ds.values.shape[1]),
              static_cast<long long>(ds.values.shape[2]), ds.truth.kind.c_str());
  return 0;
}

int cmd_train(const CLI::App* sub, const SharedFlags& sh) {
  ExperimentConfig cfg = resolve_config(sub, sh);
  Dataset ds = build_dataset(cfg.dataset);
  TrainedModel tm = train_point(ds, cfg.model, cfg.train, cfg.run.seed);
  const fs::path out(cfg.run.out);
  save_checkpoint((out / "checkpoint").string(), tm.model, ini_to_json(config_to_ini(cfg)));
  std::string curves = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < tm.result.train_loss.size(); ++e)
    curves += std::to_string(e + 1) + "," + fmt_g17(tm.result.train_loss[e]) + "," +
              fmt_g17(tm.result.val_loss[e]) + "\n";
  write_text_atomic((out / "curves.csv").string(), curves);
  std::printf("trained %lld epochs; best validation loss %.6g at epoch %lld\n",
              static_cast<long long>(tm.result.epochs_run), tm.result.best_val,
              static_cast<long long>(tm.result.best_epoch + 1));
  std::printf("wrote %s and %s\n", (out / "checkpoint.json").c_str(),
              (out / "curves.csv").c_str());
  return 0;
}

int cmd_run(const CLI::App* sub, const SharedFlags& sh) {
  ExperimentConfig cfg = resolve_config(sub, sh);
  ExperimentResult res = run_experiment(cfg);
  std::printf("method=%s seed=%llu windows=%zu wall=%.2fs\n", cfg.method.tag.c_str(),
              static_cast<unsigned long long>(cfg.run.seed), res.forecast.windows.size(),
              res.wall_clock_seconds);
  for (const HorizonMetrics& h : res.per_horizon) {
    if (h.has_interval)
      std::printf("  step %lld: mae=%.4f rmse=%.4f mis=%.4f width=%.4f coverage=%.3f\n",
                  static_cast<long long>(h.step), h.mae, h.rmse, h.mis, h.width, h.coverage);
    else
      std::printf("  step %lld: mae=%.4f rmse=%.4f\n", static_cast<long long>(h.step), h.mae,
                  h.rmse);
  }
  if (res.forecast.has_interval)
    std::printf("  overall: mae=%.4f rmse=%.4f mis=%.4f width=%.4f coverage=%.3f\n",
                res.overall.mae, res.overall.rmse, res.overall.mis, res.overall.interval_width,
                res.overall.coverage);
  else
    std::printf("  overall: mae=%.4f rmse=%.4f\n", res.overall.mae, res.overall.rmse);
  std::printf("wrote %s\n", (fs::path(cfg.run.out) / "results.json").c_str());
  return 0;
}

int cmd_sweep(const CLI::App* sub, const SharedFlags& sh) {
  ExperimentConfig cfg = resolve_config(sub, sh);
  SweepTable tab = sample_complexity_sweep(cfg);
  const fs::path out(cfg.run.out);
  write_text_atomic((out / "sweep.csv").string(), sweep_csv(tab));
  for (const auto& [s, m] : tab.means)
    std::printf("samples=%lld mean mis=%.6g\n", static_cast<long long>(s), m);
  std::printf("wrote %s\n", (out / "sweep.csv").c_str());
  return 0;
}

int cmd_plot_data(const std::string& kind, const std::vector<std::string>& inputs,
                  const std::string& out_dir) {
  const fs::path out(out_dir);
  std::string name, payload;
  if (kind == "forecast-band") {
    name = "forecast_band.csv";
    payload = forecast_band_csv(inputs);
  } else if (kind == "sweep") {
    require(inputs.size() == 1, "plot: the sweep kind takes exactly one sweep.csv input");
    name = "sweep.csv";
    payload = sweep_csv(parse_sweep_csv(read_text_file(inputs[0])));
  } else if (kind == "coverage-vs-width") {
    name = "coverage_width.csv";
    payload = coverage_vs_width_csv(inputs);
  } else {
    throw ValidationError("plot: unknown kind '" + kind +
                          "' (expected forecast-band, sweep, or coverage-vs-width)");
  }
  write_text_atomic((out / name).string(), payload);
  std::printf("wrote %s\n", (out / name).c_str());
  return 0;
}

int cmd_oracle() {
  bool all_pass = true;
  for (const OracleOutcome& o : run_oracle_suites()) {
    std::printf("%s %-18s %6.2fs  %s\n", o.pass ? "PASS" : "FAIL", o.name.c_str(),
                o.runtime_seconds, o.detail.c_str());
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatiotemporal forecasting with uncertainty estimates"};
  app.require_subcommand(1);

  SharedFlags synth_sh, train_sh, run_sh, sweep_sh;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset as CSV");
  add_shared(synth, synth_sh);
  CLI::App* train = app.add_subcommand("train", "train a point model and save a checkpoint");
  add_shared(train, train_sh);
  CLI::App* run = app.add_subcommand("run", "run one experiment end to end");
  add_shared(run, run_sh);
  CLI::App* sweep = app.add_subcommand("sweep", "sample-complexity sweep over seeds");
  add_shared(sweep, sweep_sh);

  std::string plot_kind, plot_out = "out";
  std::vector<std::string> plot_inputs;
  CLI::App* plot = app.add_subcommand("plot-data", "emit plot-ready CSV from run artifacts");
  plot->add_option("--kind", plot_kind, "forecast-band | sweep | coverage-vs-width")
      ->required();
  plot->add_option("inputs", plot_inputs, "result directories, results.json files, or sweep.csv")
      ->required();
  plot->add_option("--out", plot_out, "output directory");

  CLI::App* oracle = app.add_subcommand("oracle", "run the independent verification suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth, synth_sh);
    if (train->parsed()) return cmd_train(train, train_sh);
    if (run->parsed()) return cmd_run(run, run_sh);
    if (sweep->parsed()) return cmd_sweep(sweep, sweep_sh);
    if (plot->parsed()) return cmd_plot_data(plot_kind, plot_inputs, plot_out);
    if (oracle->parsed()) return cmd_oracle();
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
