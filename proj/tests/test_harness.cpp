#include <doctest.h>

#include "glnbias/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace glnbias;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_synthetic(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.task = Task::Synthetic;
  cfg.n_train = {30};
  cfg.n_val = 40;
  cfg.hidden = {3};
  cfg.contexts = {2};
  cfg.seeds = {0, 1, 2};
  cfg.synthetic_dim = 4;
  cfg.synthetic_margin = 0.3;
  cfg.train.schedule = {{1500, 0.1}, {500, 0.05}};
  cfg.variants = {"gd-gln", "svm-gln", "svm-l2"};
  cfg.output_dir = out;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("config parsing") {
  std::istringstream in(R"(
# comment
[experiment]
task = synthetic
n_train = 100, 200
hidden = 4
contexts = 2, 4
seeds = 2
median = false
loss = exponential
variants = gd-gln, svm-gln   # trailing comment
[train]
steps = 10, 20
rates = 0.1, 0.05
momentum = 0.5
[solver]
tol = 1e-5
)");
  const auto cfg = load_config(in);
  CHECK(cfg.task == Task::Synthetic);
  CHECK(cfg.n_train == std::vector<int>{100, 200});
  CHECK(cfg.contexts == std::vector<int>{2, 4});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK_FALSE(cfg.median);
  CHECK(cfg.train.loss == LossKind::Exponential);
  CHECK(cfg.variants == std::vector<std::string>{"gd-gln", "svm-gln"});
  CHECK(cfg.train.total_steps() == 30);
  CHECK(cfg.train.momentum == 0.5);
  CHECK(cfg.solver.tol == 1e-5);

  std::stringstream io;
  write_config(io, cfg);
  const auto again = load_config(io);
  CHECK(again.n_train == cfg.n_train);
  CHECK(again.seeds == cfg.seeds);
  CHECK(again.variants == cfg.variants);
  CHECK(again.train.schedule.size() == 2);
  CHECK(again.train.schedule[1].lr == 0.05);
}

TEST_CASE("config errors") {
  auto load = [](const std::string& s) {
    std::istringstream in(s);
    return load_config(in);
  };
  CHECK_THROWS_WITH(load("[experiment]\nvariants =\n"), doctest::Contains("no variants requested"));
  CHECK_THROWS_WITH(load("[experiment]\nvariants = gd-gln\nhiden = 3\n"), doctest::Contains("unknown key"));
  CHECK_THROWS_WITH(load("[experiment]\nvariants = gd-cnn\n"), doctest::Contains("unknown variant"));
  CHECK_THROWS_WITH(load("[experiment]\nvariants = gd-gln\nseeds = 0\n"), doctest::Contains("seeds"));
  CHECK_THROWS(load("[experiment]\nvariants = gd-gln\n[extras]\nx = 1\n"));
  CHECK_THROWS(load("[experiment]\nvariants = gd-gln\nvariants = svm-gln\n"));
  CHECK_THROWS(load("[experiment]\nvariants = gd-gln\ncontexts = 3\n"));
}

TEST_CASE("run_experiment counts rows and is deterministic") {
  const auto out = fs::temp_directory_path() / "glnbias_harness_a";
  fs::remove_all(out);
  const auto cfg = small_synthetic(out);
  const auto r = run_experiment(cfg);
  CHECK(r.comparisons.size() == 9);  // 3 pairs x 3 seeds
  CHECK(r.variants.size() == 9);
  for (const auto& row : r.comparisons) {
    CHECK(row.error_a >= 0.0);
    CHECK(row.error_a <= 1.0);
    CHECK(row.inconsistency <= 1.0);
    CHECK(row.baseline == doctest::Approx(2 * row.error_a * (1 - row.error_a)));
    if (row.variant_a == "gd-gln") {
      CHECK(std::isfinite(row.kkt_residual));
    } else {
      CHECK(std::isnan(row.kkt_residual));
    }
  }
  CHECK(fs::exists(out / "trajectories" / "gd-gln_H3_C2_n30_s0.csv"));
  const auto first = slurp(out / "comparisons.csv");
  run_experiment(cfg);
  CHECK(slurp(out / "comparisons.csv") == first);
  CHECK(slurp(out / "trajectories" / "gd-gln_H3_C2_n30_s2.csv").rfind("step,loss,", 0) == 0);
}

TEST_CASE("relu variants and panel tables") {
  const auto out = fs::temp_directory_path() / "glnbias_harness_b";
  fs::remove_all(out);
  auto cfg = small_synthetic(out);
  cfg.figure = "fig3";
  cfg.seeds = {0};
  cfg.variants = {"svm-hl", "gd-relu", "svm-rc", "svm-lc", "shallow"};
  const auto r = run_experiment(cfg);
  CHECK(r.variants.size() == 5);
  // GD first within the relu family, shallow alone in its family.
  CHECK(r.comparisons.size() == 6);
  CHECK(r.comparisons.front().variant_a == "gd-relu");
  write_panels(out, cfg, r);
  for (const char* f : {"panel_a.csv", "panel_b.csv", "panel_c.csv", "panel_d.csv"}) CHECK(fs::exists(out / f));
  const auto b = slurp(out / "panel_b.csv");
  CHECK(b.find(",baseline\n") != std::string::npos);
  const auto a = slurp(out / "panel_a.csv");
  for (const char* v : {"svm-rc", "svm-lc", "svm-hl"}) CHECK(a.find(v) != std::string::npos);
}

TEST_CASE("figure configs") {
  ExperimentConfig base;
  const auto desk = figure_config("fig2", Scale::Desk, base);
  CHECK(desk.n_train == std::vector<int>{500});
  CHECK(desk.hidden == std::vector<int>{10, 20});
  CHECK(desk.seeds.size() == 2);
  CHECK(desk.median);
  const auto paper = figure_config("fig3", Scale::Paper, base);
  CHECK(paper.hidden == std::vector<int>{10, 20, 50, 100});
  CHECK(paper.seeds.size() == 3);
  CHECK(std::find(paper.variants.begin(), paper.variants.end(), "svm-lc") != paper.variants.end());
  CHECK_THROWS(figure_config("fig4", Scale::Desk, base));
  CHECK_THROWS(parse_scale("huge"));
  CHECK(cell_seed(0, 10, 2, 500) != cell_seed(1, 10, 2, 500));
  CHECK(cell_seed(0, 10, 2, 500) == cell_seed(0, 10, 2, 500));
}
