#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ffzo/bench.hpp"
#include "ffzo/io.hpp"
#include "ffzo/prototypes.hpp"

namespace fs = std::filesystem;
using namespace ffzo;

namespace {

void apply_overrides(bench::ExperimentPlan& plan, const std::string& out,
                     const std::string& scale, bool has_seed, unsigned long long seed) {
  if (!out.empty()) plan.out_dir = out;
  if (!scale.empty()) plan.scale = scale;
  if (has_seed) plan.seeds = {seed};
}

void warn_paper_scale(const bench::ExperimentPlan& plan) {
  if (plan.scale == "paper") {
    std::cerr << "warning: paper scale runs the full published budgets "
              << "(60k-sample corpora, 100 epochs); expect hours per cell\n";
  }
}

int report_results(const std::vector<bench::CellResult>& results,
                   const bench::ExperimentPlan& plan) {
  bool all_ok = true;
  for (const auto& r : results) {
    const char* status = r.skipped ? "cached" : (r.ok ? "ok" : "FAILED");
    std::cout << std::left << std::setw(7) << status << r.config.key();
    if (r.ok) {
      std::cout << "  metric=" << std::setprecision(6) << r.metric
                << "  evals=" << r.eval_count;
    } else {
      std::cout << "  error: " << r.error;
    }
    std::cout << "\n";
    all_ok = all_ok && r.ok;
  }
  std::cout << results.size() << " cell(s); results in " << plan.out_dir << "/results.csv\n";
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ffzo: layer-local training benchmarks and data utilities"};
  app.require_subcommand(1);

  std::string out_flag, scale_flag;
  unsigned long long seed_flag = 0;

  // ---- bench ----
  auto* bench_cmd = app.add_subcommand("bench", "Experiment sweeps and exports");
  bench_cmd->require_subcommand(1);

  std::string plan_path;
  auto* run_cmd = bench_cmd->add_subcommand("run", "Execute every cell of a plan");
  run_cmd->add_option("plan", plan_path, "Plan config file")
      ->required()
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--out", out_flag, "Output directory (overrides the plan)");
  run_cmd->add_option("--scale", scale_flag, "desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  run_cmd->add_option("--seed", seed_flag, "Single seed replacing the plan's seed axis");

  std::string dirs_path;
  std::vector<int> p_values;
  auto* dirs_cmd =
      bench_cmd->add_subcommand("directions", "Sweep direction counts on one base config");
  dirs_cmd->add_option("config", dirs_path, "Base plan config file")
      ->required()
      ->check(CLI::ExistingFile);
  dirs_cmd->add_option("--p", p_values, "Direction counts (default: the plan's axis)");
  dirs_cmd->add_option("--out", out_flag, "Output directory (overrides the plan)");
  dirs_cmd->add_option("--scale", scale_flag, "desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  dirs_cmd->add_option("--seed", seed_flag, "Single seed replacing the plan's seed axis");

  std::string ckpt_path, embed_dataset, embed_out = "embeddings.csv";
  std::string data_root = "bench_out/data";
  int embed_classes = 10;
  long long embed_samples = 512;
  auto* embed_cmd =
      bench_cmd->add_subcommand("embed", "Export per-unit tap vectors and prototypes");
  embed_cmd->add_option("checkpoint", ckpt_path, "Checkpoint JSON written by a plan run")
      ->required()
      ->check(CLI::ExistingFile);
  embed_cmd->add_option("dataset", embed_dataset,
                        "mnist | digits | synth1 | synth2 | mnist_reg")
      ->required();
  embed_cmd->add_option("--out", embed_out, "Output CSV path");
  embed_cmd->add_option("--scale", scale_flag, "desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  embed_cmd->add_option("--seed", seed_flag, "Data seed for the resolved split");
  embed_cmd->add_option("--classes", embed_classes, "Class count kept from the corpus");
  embed_cmd->add_option("--samples", embed_samples, "Max samples to export (0 = all)");
  embed_cmd->add_option("--data-root", data_root, "Directory hosting generated corpora");

  // ---- prototypes ----
  auto* proto_cmd = app.add_subcommand("prototypes", "Prototype vector utilities");
  proto_cmd->require_subcommand(1);
  int proto_classes = 10, proto_dim = 10;
  std::string proto_out = "prototypes.csv";
  auto* gen_cmd =
      proto_cmd->add_subcommand("gen", "Generate maximally separated class directions");
  gen_cmd->add_option("--classes", proto_classes, "Number of prototypes")->check(CLI::Range(2, 1 << 20));
  gen_cmd->add_option("--dim", proto_dim, "Ambient dimension (>= classes)");
  gen_cmd->add_option("--seed", seed_flag, "Rotation seed");
  gen_cmd->add_option("--out", proto_out, "Output CSV path");

  // ---- data ----
  auto* data_cmd = app.add_subcommand("data", "Dataset utilities");
  data_cmd->require_subcommand(1);

  int synth_function = 1;
  std::string synth_out = "synth_out";
  auto* synth_cmd = data_cmd->add_subcommand("synth", "Generate a synthetic regression corpus");
  synth_cmd->add_option("--function", synth_function, "Target function id")
      ->check(CLI::IsMember({1, 2}));
  synth_cmd->add_option("--seed", seed_flag, "Generation seed");
  synth_cmd->add_option("--out", synth_out, "Output directory");

  std::string check_dir;
  auto* check_cmd =
      data_cmd->add_subcommand("fetch-check", "Verify the configured image corpus");
  check_cmd->add_option("--dir", check_dir, "IDX directory (default: FFZO_MNIST_DIR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      auto plan = bench::plan_from_config(cfg::Config::parse_file(plan_path));
      apply_overrides(plan, out_flag, scale_flag, run_cmd->count("--seed") > 0, seed_flag);
      warn_paper_scale(plan);
      std::cout << "running " << plan.cells().size() << " cell(s) into " << plan.out_dir
                << "\n";
      return report_results(bench::run_plan(plan), plan);
    }

    if (dirs_cmd->parsed()) {
      auto plan = bench::plan_from_config(cfg::Config::parse_file(dirs_path));
      apply_overrides(plan, out_flag, scale_flag, dirs_cmd->count("--seed") > 0, seed_flag);
      warn_paper_scale(plan);
      const auto ps = p_values.empty() ? plan.directions : p_values;
      return report_results(bench::direction_sweep(plan, ps), plan);
    }

    if (embed_cmd->parsed()) {
      const auto ckpt = io::load_checkpoint(ckpt_path);
      bench::CellConfig cell;
      cell.dataset = embed_dataset;
      cell.arch = "mlp";  // data resolution only; the model comes from the checkpoint
      cell.scale = scale_flag.empty() ? "desk" : scale_flag;
      cell.classes = embed_classes;
      if (embed_cmd->count("--seed") > 0) cell.data_seed = seed_flag;
      const auto data = bench::resolve_cell_data(cell, data_root);
      bench::export_embeddings(ckpt.model,
                               ckpt.class_bank ? &*ckpt.class_bank : nullptr,
                               ckpt.regression_bank ? &*ckpt.regression_bank : nullptr,
                               data.test, embed_samples, embed_out);
      std::cout << "wrote " << embed_out << " from " << data.test.size()
                << " test samples (cap " << embed_samples << ")\n";
      return 0;
    }

    if (gen_cmd->parsed()) {
      Rng rng(seed_flag);
      const auto set = proto::make_prototypes(proto_classes, proto_dim, rng);
      proto::save_csv(set, proto_out);
      std::cout << "wrote " << set.num_classes() << " prototypes of dimension " << set.dim()
                << " to " << proto_out << "\n";
      return 0;
    }

    if (synth_cmd->parsed()) {
      data::SyntheticSpec spec;
      spec.function_id = synth_function;
      spec.input_dim = synth_function == 1 ? 2 : 5;
      spec.seed = seed_flag;
      Rng rng(seed_flag);
      const auto pair = data::generate_synthetic(spec, rng);
      fs::create_directories(synth_out);
      const auto train_path = (fs::path(synth_out) / "train.csv").string();
      const auto test_path = (fs::path(synth_out) / "test.csv").string();
      data::save_synthetic_csv(pair, train_path, test_path);
      std::cout << "wrote " << pair.train.size() << " train and " << pair.test.size()
                << " test samples under " << synth_out << "\n";
      return 0;
    }

    if (check_cmd->parsed()) {
      std::string dir = check_dir;
      if (dir.empty()) {
        if (const char* env = std::getenv("FFZO_MNIST_DIR"); env != nullptr) dir = env;
      }
      if (dir.empty()) {
        std::cout << "no external image corpus configured (FFZO_MNIST_DIR unset); "
                  << "plans will render the bundled procedural digit corpus on demand\n";
        return 0;
      }
      const auto pair = data::load_mnist_dir(dir);
      if (pair.train.dim() != 784 || pair.test.dim() != 784) {
        std::cerr << "corpus at " << dir << " is not 28x28\n";
        return 1;
      }
      if (pair.train.size() == 0 || pair.test.size() == 0 ||
          pair.train.labels.minCoeff() < 0 || pair.train.labels.maxCoeff() > 9) {
        std::cerr << "corpus at " << dir << " has bad labels or empty splits\n";
        return 1;
      }
      std::cout << "ok: " << dir << " holds " << pair.train.size() << " train / "
                << pair.test.size() << " test images\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
