#include <CLI11.hpp>

#include "polykin/run_config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"polykin - higher-order hard-sphere kinetics workbench"};
  app.require_subcommand(0, 1);

  std::string config_path;
  polykin::CliOverrides overrides;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out_dir;

  app.add_option("--config", config_path, "experiment configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "override the RNG seed");
  auto* threads_opt =
      app.add_option("--threads", threads,
                     "worker threads (fallback: POLYKIN_THREADS)");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");
  app.add_flag("--check", overrides.check,
               "evaluate acceptance thresholds and fail on violation");

  std::string plot_in, plot_out;
  auto* plot = app.add_subcommand("emit-plot-data",
                                  "convert a result CSV to tidy long format");
  plot->add_option("input", plot_in, "result CSV")->required();
  plot->add_option("output", plot_out, "tidy CSV destination")->required();

  CLI11_PARSE(app, argc, argv);

  if (plot->parsed()) return polykin::emit_plot_data(plot_in, plot_out);

  if (config_path.empty()) {
    std::cerr << "validation error: --config is required\n";
    return polykin::kValidationError;
  }
  if (*seed_opt) overrides.seed = seed;
  if (*threads_opt) overrides.threads = threads;
  if (*out_opt) overrides.out_dir = out_dir;
  return polykin::run(config_path, overrides);
}
