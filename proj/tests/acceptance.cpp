// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,3,8] [--work DIR]
//
// Criteria 6-8 train on the desk config and take roughly half an hour on one core.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "headsearch/config.hpp"
#include "headsearch/pipeline.hpp"
#include "headsearch/supernet.hpp"

namespace fs = std::filesystem;
using namespace headsearch;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs a gtest binary with a filter; passes when it exits 0 and ran at least one test.
Outcome run_gtest(const std::string& binary, const std::string& filter, const fs::path& work, double limit_s = 0) {
  const fs::path log = work / (fs::path(binary).filename().string() + ".log");
  const std::string cmd = binary + " --gtest_filter='" + filter + "' > " + log.string() + " 2>&1";
  const auto t0 = Clock::now();
  const int status = std::system(cmd.c_str());
  const double took = seconds_since(t0);
  const std::string out = read_file(log);
  const bool exited_ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
  const auto pos = out.find("[  PASSED  ] ");
  const int passed = pos == std::string::npos ? 0 : std::atoi(out.c_str() + pos + 13);
  Outcome o;
  o.pass = exited_ok && passed > 0 && (limit_s <= 0 || took < limit_s);
  o.detail = fs::path(binary).filename().string() + " " + std::to_string(passed) + " tests passed in " +
             fmt("%.1f", took) + " s" + (limit_s > 0 ? " (limit " + fmt("%.0f", limit_s) + " s)" : "");
  if (!exited_ok) o.detail += ", failures in " + log.string();
  return o;
}

Outcome all_of(std::vector<Outcome> parts) {
  Outcome o{true, ""};
  for (const Outcome& p : parts) {
    o.pass = o.pass && p.pass;
    o.detail += (o.detail.empty() ? "" : "; ") + p.detail;
  }
  return o;
}

ExperimentConfig desk_config(const char* name) {
  return load_config(fs::path(HEADSEARCH_SOURCE_DIR) / "configs" / name);
}

// Softmax rows of every alpha snapshot in a real search log sum to 1.
Outcome snapshot_sums(const fs::path& work) {
  ExperimentConfig c = desk_config("desk.cfg");
  c.data.train_size = 256;
  c.data.test_size = 64;
  c.search.epochs = 5;
  const fs::path out = work / "c3_search";
  fs::remove_all(out);
  pipeline::cmd_search(c, out);
  double worst = 0.0;
  int files = 0;
  for (const auto& entry : fs::directory_iterator(out / "search_log" / "alphas")) {
    const auto j = nlohmann::json::parse(read_file(entry.path()));
    for (const char* cell : {"encoder", "predictor"}) {
      if (j[cell].is_null()) continue;
      for (const auto& row : j[cell]) {
        double s = 0.0;
        for (double w : row) s += w;
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
    ++files;
  }
  return {files == 5 && worst <= 1e-6,
          std::to_string(files) + " snapshots, worst |sum-1| " + fmt("%.2e", worst) + " (tol 1e-6)"};
}

struct Ablation {
  std::vector<pipeline::AblationArm> arms;
  double seconds = 0.0;
};

const Ablation& ablation(const fs::path& work) {
  static const Ablation result = [&] {
    Ablation a;
    const fs::path out = work / "ablation";
    fs::remove_all(out);
    const auto t0 = Clock::now();
    a.arms = pipeline::cmd_ablate(desk_config("desk.cfg"), out);
    a.seconds = seconds_since(t0);
    return a;
  }();
  return result;
}

const pipeline::AblationArm& arm(const Ablation& a, std::uint64_t seed, const std::string& name) {
  for (const auto& x : a.arms)
    if (x.seed == seed && x.arm == name) return x;
  throw std::runtime_error("missing ablation arm " + name);
}

std::vector<std::uint64_t> seeds_of(const Ablation& a) {
  std::set<std::uint64_t> s;
  for (const auto& x : a.arms) s.insert(x.seed);
  return {s.begin(), s.end()};
}

Outcome trend_pooling(const fs::path& work) {
  const Ablation& a = ablation(work);
  int wins = 0;
  std::string per;
  for (std::uint64_t s : seeds_of(a)) {
    const double S = arm(a, s, "S").top1, Sp = arm(a, s, "S_prime").top1;
    wins += S >= Sp;
    per += " seed " + std::to_string(s) + ": " + fmt("%.1f", S) + " vs " + fmt("%.1f", Sp) + ";";
  }
  const double minutes = a.seconds / 60.0;
  return {wins >= 2 && minutes < 45.0, "S top-1 >= S' in " + std::to_string(wins) + "/3 seeds (need 2);" + per +
                                           " ablation " + fmt("%.1f", minutes) + " min (limit 45)"};
}

Outcome trend_augment(const fs::path& work) {
  const Ablation& a = ablation(work);
  int wins = 0, collapse_off = 0, collapse_on = 0;
  std::string per;
  for (std::uint64_t s : seeds_of(a)) {
    const auto& on = arm(a, s, "S");
    const auto& off = arm(a, s, "S_noaug");
    wins += off.skip_fraction >= on.skip_fraction;
    collapse_on += on.search_collapsed;
    collapse_off += off.search_collapsed;
    per += " seed " + std::to_string(s) + ": skip " + fmt("%.2f", off.skip_fraction) + " vs " +
           fmt("%.2f", on.skip_fraction) + ", tail " + fmt("%.3f", off.search_tail_mean) + " vs " +
           fmt("%.3f", on.search_tail_mean) + ";";
  }
  const double minutes = a.seconds / 60.0;
  return {wins >= 2 && collapse_off >= collapse_on && minutes < 45.0,
          "off skip >= on skip in " + std::to_string(wins) + "/3 seeds (need 2), collapse off " +
              std::to_string(collapse_off) + " vs on " + std::to_string(collapse_on) + ";" + per + " ablation " +
              fmt("%.1f", minutes) + " min (limit 45, shared with the pooling arms)"};
}

// Pretrained frozen backbone vs the same backbone at initialization, same probe.
Outcome representation_quality(const fs::path& work) {
  const auto t0 = Clock::now();
  int wins = 0;
  std::string per;
  for (std::uint64_t s = 0; s < 3; ++s) {
    ExperimentConfig c = desk_config("desk_probe.cfg");
    c.seed = s;
    const fs::path dir = work / "c8" / ("seed_" + std::to_string(s));
    fs::remove_all(dir);
    fs::create_directories(dir);
    Genotype g;
    g.encoder.assign(3, OperationKind::LinBnReLU);
    g.predictor = std::vector<OperationKind>(2, OperationKind::LinBnReLU);
    g.seed = s;
    save_genotype(g, dir / "genotype.json");
    const auto pre = pipeline::cmd_pretrain(c, dir / "genotype.json", dir / "pretrain");
    const double trained = pipeline::cmd_linear_probe(c, pre.checkpoint_path, dir / "probe").result.top1;
    const double random = pipeline::cmd_linear_probe(c, std::nullopt, dir / "probe_random").result.top1;
    wins += trained - random > 5.0;
    per += " seed " + std::to_string(s) + ": " + fmt("%.1f", trained) + " vs " + fmt("%.1f", random) + ";";
  }
  const double minutes = seconds_since(t0) / 60.0;
  return {wins == 3 && minutes < 20.0, "pretrained beats random by > 5 points in " + std::to_string(wins) +
                                           "/3 seeds;" + per + " " + fmt("%.1f", minutes) + " min (limit 20)"};
}

Outcome full_recipe() {
  const ExperimentConfig c = desk_config("cifar10_full.cfg");
  const bool values = c.data.dataset == DatasetKind::Cifar10 && c.search.batch_size == 512 &&
                      c.pretrain.opt.batch_size == 512 && c.search.epochs == 100 &&
                      c.pretrain.opt.epochs == 800;
  const std::string readme = read_file(fs::path(HEADSEARCH_SOURCE_DIR) / "README.md");
  const bool documented = readme.find("cifar10_full.cfg") != std::string::npos &&
                          readme.find("91.2%") != std::string::npos &&
                          readme.find("not reproduced at desk scale") != std::string::npos;
  return {values && documented, std::string("configs/cifar10_full.cfg ") + (values ? "matches" : "DOES NOT match") +
                                    " batch 512 / 100 search / 800 pretrain; README reference " +
                                    (documented ? "present" : "missing")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  fs::path work = "acceptance_work";
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", [&] { return run_gtest(HS_TEST_GRADIENTS, "*", work, 60.0); }},
      {"simsiam loss contract",
       [&] {
         return all_of({run_gtest(HS_TEST_SIAMESE, "SimSiamLoss.*", work),
                        run_gtest(HS_TEST_OPS, "Stopgrad.*:NegativeCosine.*", work)});
       }},
      {"mixed operation contract",
       [&] {
         return all_of({run_gtest(HS_TEST_HEADS, "MixedForward.*:CellForward.*", work), snapshot_sums(work)});
       }},
      {"bilevel fidelity",
       [&] {
         return all_of({run_gtest(HS_TEST_BILEVEL,
                                  "Bilevel.HandSteppedMicroRun:Bilevel.Partition*:Bilevel.Zero*:Bilevel.Deterministic",
                                  work),
                        run_gtest(HS_TEST_PIPELINE, "Pipeline.SearchIsBitwiseDeterministic", work)});
       }},
      {"genotype contract",
       [&] {
         return all_of({run_gtest(HS_TEST_HEADS, "Genotype.*", work),
                        run_gtest(HS_TEST_BILEVEL, "Bilevel.SingleEpoch*:Bilevel.SPrime*", work),
                        run_gtest(HS_TEST_PIPELINE, "Pipeline.SPrimeGenotypeHasNoPooling", work)});
       }},
      {"ablation trend: pooling", [&] { return trend_pooling(work); }},
      {"ablation trend: augmentation", [&] { return trend_augment(work); }},
      {"pretrained vs random probe", [&] { return representation_quality(work); }},
      {"nt-xent oracle", [&] { return run_gtest(HS_TEST_SIAMESE, "NTXent.*", work); }},
      {"reproducibility",
       [&] {
         return run_gtest(HS_TEST_PIPELINE,
                          "Pipeline.SearchIsBitwiseDeterministic:Pipeline.ResumeMatchesStraightRun:"
                          "Pipeline.CmdResumeContinuesMetrics",
                          work);
       }},
      {"full cifar-10 recipe documented", [&] { return full_recipe(); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
