// Command-line driver: search, pretrain, linear-probe, ablate, report.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "headsearch/error.hpp"
#include "headsearch/pipeline.hpp"

namespace fs = std::filesystem;
using namespace headsearch;

namespace {

struct Common {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config_path, "experiment config (key=value)");
  if (needs_config) opt->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (defaults to the config's out key)");
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--set", c.overrides, "config override key=value (repeatable)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese head architecture search"};
  app.require_subcommand(1);

  Common search_opts, pretrain_opts, probe_opts, ablate_opts;
  std::string genotype_path, resume_path, checkpoint_path, report_out;
  std::vector<std::string> report_inputs;

  auto* search = app.add_subcommand("search", "bi-level search; writes genotype.json and the search log");
  add_common(search, search_opts);

  auto* pretrain = app.add_subcommand("pretrain", "pretrain backbone + heads of a genotype");
  add_common(pretrain, pretrain_opts);
  pretrain->add_option("--genotype", genotype_path, "genotype JSON")->required()->check(CLI::ExistingFile);
  pretrain->add_option("--resume", resume_path, "checkpoint to resume from")->check(CLI::ExistingFile);

  auto* probe = app.add_subcommand("linear-probe", "linear classifier on frozen backbone features");
  add_common(probe, probe_opts);
  probe->add_option("--checkpoint", checkpoint_path, "pretraining checkpoint (omit for a random backbone)")
      ->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "S vs S' and augmentation on/off, per seed");
  add_common(ablate, ablate_opts);

  auto* report = app.add_subcommand("report", "summary CSV and SVG plots from metrics files");
  report->add_option("metrics", report_inputs, "metrics CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    // Usage of the subcommand that failed, or of the whole tool.
    const CLI::App* scope = &app;
    for (const CLI::App* sub : app.get_subcommands()) scope = sub;
    std::fprintf(stderr, "error: %s\n\n%s", e.what(), scope->help().c_str());
    return e.get_exit_code() != 0 ? e.get_exit_code() : 1;
  }

  try {
    if (search->parsed()) {
      const auto cfg = resolve(search_opts);
      const auto run = pipeline::cmd_search(cfg, cfg.out);
      std::printf("genotype: %s\nskip_fraction: %.4f\nsearch_collapsed: %s (tail mean %.4f)\n",
                  run.genotype_path.string().c_str(), skip_fraction(run.result.genotype),
                  run.result.collapse.collapsed ? "yes" : "no", run.result.collapse.mean_tail);
    } else if (pretrain->parsed()) {
      const auto cfg = resolve(pretrain_opts);
      std::optional<fs::path> resume;
      if (!resume_path.empty()) resume = resume_path;
      const auto run = pipeline::cmd_pretrain(cfg, genotype_path, cfg.out, resume);
      std::printf("checkpoint: %s\nfinal_loss: %.6f\ncollapsed: %s\n", run.checkpoint_path.string().c_str(),
                  run.epochs.empty() ? 0.0 : run.epochs.back().loss, run.collapse.collapsed ? "yes" : "no");
    } else if (probe->parsed()) {
      const auto cfg = resolve(probe_opts);
      std::optional<fs::path> ckpt;
      if (!checkpoint_path.empty()) ckpt = checkpoint_path;
      const auto run = pipeline::cmd_linear_probe(cfg, ckpt, cfg.out);
      std::printf("top1: %.2f\n", run.result.top1);
      if (run.result.top5) std::printf("top5: %.2f\n", *run.result.top5);
    } else if (ablate->parsed()) {
      const auto cfg = resolve(ablate_opts);
      const auto arms = pipeline::cmd_ablate(cfg, cfg.out);
      std::printf("%-6s %-8s %8s %8s %10s\n", "seed", "arm", "top1", "skip", "collapsed");
      for (const auto& a : arms) {
        std::printf("%-6llu %-8s %8.2f %8.3f %10s\n", static_cast<unsigned long long>(a.seed), a.arm.c_str(),
                    a.top1, a.skip_fraction, a.search_collapsed ? "yes" : "no");
      }
    } else if (report->parsed()) {
      std::vector<fs::path> inputs(report_inputs.begin(), report_inputs.end());
      const auto summary = pipeline::cmd_report(inputs, report_out);
      for (const auto& d : summary.diagnostics) std::fprintf(stderr, "warning: %s\n", d.c_str());
      for (const auto& f : summary.files) std::printf("%s\n", f.string().c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
