#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "liqa/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Lifelong blind-IQA experiment harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, method_override;
  std::vector<std::uint64_t> seed_overrides;
  bool figures = false;
  int orders = 5;

  CLI::App* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--method", method_override, "Override the configured method");
  run->add_option("--seed", seed_overrides, "Override the configured seeds");
  run->add_option("--out", out_dir, "Override the output directory");

  CLI::App* resume = app.add_subcommand("resume", "Continue interrupted runs");
  resume->add_option("--out", out_dir, "Output directory (root or one method dir)")->required();

  CLI::App* report = app.add_subcommand("report", "Rebuild summaries and figures");
  report->add_option("--out", out_dir, "Output directory")->required();
  report->add_flag("--figures", figures, "Also emit t-SNE feature projections");

  CLI::App* permute = app.add_subcommand("permute", "Run the task-permutation suite");
  permute->add_option("--config", config_path, "Experiment config (JSON)")->required();
  permute->add_option("--orders", orders, "Number of permutation orders");
  permute->add_option("--out", out_dir, "Override the output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      liqa::harness::ExperimentConfig cfg = liqa::harness::ExperimentConfig::load(config_path);
      if (!method_override.empty()) cfg.method = method_override;
      if (!seed_overrides.empty()) cfg.seeds = seed_overrides;
      if (!out_dir.empty()) cfg.out = out_dir;
      cfg.validate();
      const liqa::harness::ResultBundle rb = liqa::harness::run_experiment(cfg);
      std::printf("method=%s seeds=%zu C_bar=%.4f F_bar=%.4f\n", cfg.method.c_str(),
                  cfg.seeds.size(), rb.c_bar, rb.f_bar);
    } else if (resume->parsed()) {
      const liqa::harness::ResultBundle rb = liqa::harness::resume_experiment(out_dir);
      std::printf("resumed: C_bar=%.4f F_bar=%.4f\n", rb.c_bar, rb.f_bar);
    } else if (report->parsed()) {
      liqa::harness::write_report(out_dir, figures);
      std::printf("report written under %s\n", out_dir.c_str());
    } else if (permute->parsed()) {
      liqa::harness::ExperimentConfig cfg = liqa::harness::ExperimentConfig::load(config_path);
      if (!out_dir.empty()) cfg.out = out_dir;
      cfg.validate();
      const auto rows = liqa::harness::permutation_suite(cfg, orders);
      double lo = rows.front().c_bar, hi = rows.front().c_bar;
      for (const auto& r : rows) {
        std::printf("order%d seed=%llu C_bar=%.4f F_bar=%.4f\n", r.order_index,
                    static_cast<unsigned long long>(r.permutation_seed), r.c_bar, r.f_bar);
        lo = std::min(lo, r.c_bar);
        hi = std::max(hi, r.c_bar);
      }
      std::printf("C_bar spread (max-min) = %.4f\n", hi - lo);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
