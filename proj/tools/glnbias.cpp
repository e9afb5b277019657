// Command-line front end: ingest, train, solve, certify, norms, compare,
// reproduce and run.

#include "glnbias/analysis.hpp"
#include "glnbias/config.hpp"
#include "glnbias/data.hpp"
#include "glnbias/experiment.hpp"
#include "glnbias/format.hpp"
#include "glnbias/gating.hpp"
#include "glnbias/kkt.hpp"
#include "glnbias/lifted.hpp"
#include "glnbias/models.hpp"
#include "glnbias/norms.hpp"
#include "glnbias/solvers.hpp"
#include "glnbias/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace glnbias;

namespace {

fs::path mnist_dir_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MNIST_DIR"); env && *env) return env;
  throw std::runtime_error("no MNIST directory: pass --mnist-dir or set MNIST_DIR");
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Contexts the model family consumes: local contexts for GLNs, 0/1 gates for
// FReLUs, nothing for ReLU nets.
ContextMatrix contexts_for(const AnyModel& model, const ContextFunction* cf, const Matrix& inputs) {
  if (std::holds_alternative<ReluNet>(model)) return {};
  if (!cf) throw std::runtime_error("this model needs a context function file");
  if (std::holds_alternative<FReluNet>(model)) return binary_gates(*cf, inputs);
  return assign_contexts(*cf, inputs);
}

struct LoadedModel {
  Checkpoint ckpt;
  std::optional<ContextFunction> cf;
};

LoadedModel load_model(const fs::path& path, const std::string& contexts_flag) {
  LoadedModel m{read_checkpoint(path), std::nullopt};
  fs::path ctx = contexts_flag.empty() ? fs::path(m.ckpt.contexts) : fs::path(contexts_flag);
  if (!ctx.empty()) {
    if (ctx.is_relative() && !fs::exists(ctx)) ctx = path.parent_path() / ctx;
    m.cf = read_context_function(ctx);
  }
  return m;
}

std::vector<Stage> make_schedule(const std::vector<int>& steps, const std::vector<double>& rates) {
  if (steps.size() != rates.size()) throw std::invalid_argument("--steps and --rates need the same number of entries");
  std::vector<Stage> s;
  for (std::size_t i = 0; i < steps.size(); ++i) s.push_back({steps[i], rates[i]});
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit bias of gradient descent on gated linear networks: training, margin programs, certificates"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Build a binary MNIST (0-4 vs 5-9) or synthetic split as CSV");
  std::string in_mnist;
  std::size_t in_train = 500, in_val = 12000, in_dim = 20;
  std::uint64_t in_seed = 0;
  double in_margin = 0.1;
  bool in_synth = false;
  fs::path in_out = ".";
  ingest->add_option("--mnist-dir", in_mnist, "Directory with the IDX files (default: $MNIST_DIR)");
  ingest->add_option("--n-train", in_train, "Training samples")->capture_default_str();
  ingest->add_option("--n-val", in_val, "Validation samples")->capture_default_str();
  ingest->add_option("--seed", in_seed, "Permutation seed")->capture_default_str();
  ingest->add_flag("--synthetic", in_synth, "Separable synthetic data instead of MNIST");
  ingest->add_option("--dim", in_dim, "Synthetic dimension")->capture_default_str();
  ingest->add_option("--margin", in_margin, "Synthetic margin")->capture_default_str();
  ingest->add_option("--out", in_out, "Output directory for train.csv and val.csv")->capture_default_str();

  // train
  auto* trainc = app.add_subcommand("train", "Run full-batch gradient descent and save a checkpoint");
  fs::path tr_data, tr_out = "model.json", tr_traj, tr_ctx;
  std::string tr_family = "gln", tr_loss = "logistic";
  int tr_H = 10, tr_C = 2, tr_every = 100;
  std::uint64_t tr_seed = 0, tr_ctx_seed = 1;
  bool tr_no_median = false;
  double tr_momentum = 0.0;
  std::vector<int> tr_steps{1600, 1600};
  std::vector<double> tr_rates{0.04, 0.01};
  trainc->add_option("--data", tr_data, "Training CSV")->required();
  trainc->add_option("--family", tr_family, "gln, relu or frelu")->capture_default_str();
  trainc->add_option("--hidden,-H", tr_H, "Hidden units")->capture_default_str();
  trainc->add_option("--contexts,-C", tr_C, "Contexts per unit (gln)")->capture_default_str();
  trainc->add_option("--seed", tr_seed, "Initialization seed")->capture_default_str();
  trainc->add_option("--context-seed", tr_ctx_seed, "Context sampling seed")->capture_default_str();
  trainc->add_flag("--no-median", tr_no_median, "Keep Gaussian cutoffs instead of median cutoffs");
  trainc->add_option("--loss", tr_loss, "logistic or exponential")->capture_default_str();
  trainc->add_option("--steps", tr_steps, "Steps per stage")->capture_default_str()->delimiter(',');
  trainc->add_option("--rates", tr_rates, "Learning rate per stage")->capture_default_str()->delimiter(',');
  trainc->add_option("--momentum", tr_momentum, "Heavy-ball momentum (0.9 in the ReLU runs)")->capture_default_str();
  trainc->add_option("--snapshot-every", tr_every, "Snapshot interval")->capture_default_str();
  trainc->add_option("--out", tr_out, "Checkpoint path")->capture_default_str();
  trainc->add_option("--context-file", tr_ctx, "Where to write the context function (default: next to the checkpoint)");
  trainc->add_option("--trajectory", tr_traj, "Trajectory CSV path");

  // solve
  auto* solvec = app.add_subcommand("solve", "Solve a margin program from a problem dump or from data and contexts");
  fs::path so_problem, so_data, so_ctx, so_out, so_dump;
  std::string so_family = "gln", so_objective = "group_lasso";
  int so_C = 2;
  double so_tol = 1e-8;
  int so_iter = 50000;
  solvec->add_option("--problem", so_problem, "Problem dump written by --dump");
  solvec->add_option("--data", so_data, "Training CSV (with --context-file unless --family plain)");
  solvec->add_option("--context-file", so_ctx, "Context function file");
  solvec->add_option("--family", so_family, "gln, frelu, shallow or plain")->capture_default_str();
  solvec->add_option("--objective", so_objective, "group_lasso, quad_m or plain_l2")->capture_default_str();
  solvec->add_option("--contexts,-C", so_C, "Contexts per unit (gln)")->capture_default_str();
  solvec->add_option("--tol", so_tol, "Residual tolerance")->capture_default_str();
  solvec->add_option("--max-iter", so_iter, "Iteration cap")->capture_default_str();
  solvec->add_option("--dump", so_dump, "Also write the lifted problem here");
  solvec->add_option("--out", so_out, "Result JSON (default: stdout)");

  // certify
  auto* certc = app.add_subcommand("certify", "Margin-normalize a checkpoint and report its KKT residual");
  fs::path ce_ckpt, ce_data, ce_out;
  std::string ce_ctx;
  double ce_tol = 1e-4;
  certc->add_option("--checkpoint", ce_ckpt, "Checkpoint JSON")->required();
  certc->add_option("--data", ce_data, "Training CSV")->required();
  certc->add_option("--context-file", ce_ctx, "Override the checkpoint's context file");
  certc->add_option("--margin-tol", ce_tol, "Relative support tolerance")->capture_default_str();
  certc->add_option("--out", ce_out, "Report JSON (default: stdout)");

  // norms
  auto* normc = app.add_subcommand("norms", "GLN norm of a BetaTable (CSV) or of a GLN checkpoint");
  fs::path no_table, no_ckpt, no_out, no_table_out;
  double no_tol = 1e-8;
  normc->add_option("--table", no_table, "BetaTable CSV");
  normc->add_option("--checkpoint", no_ckpt, "Two-layer GLN checkpoint");
  normc->add_option("--tol", no_tol, "Variational solver tolerance")->capture_default_str();
  normc->add_option("--table-out", no_table_out, "Write the BetaTable CSV here");
  normc->add_option("--out", no_out, "Report JSON (default: stdout)");

  // compare
  auto* cmpc = app.add_subcommand("compare", "Errors and inconsistency of two checkpoints on one dataset");
  fs::path cm_a, cm_b, cm_data, cm_out;
  std::string cm_ctx_a, cm_ctx_b;
  cmpc->add_option("--a", cm_a, "First checkpoint")->required();
  cmpc->add_option("--b", cm_b, "Second checkpoint")->required();
  cmpc->add_option("--data", cm_data, "Evaluation CSV")->required();
  cmpc->add_option("--context-file-a", cm_ctx_a, "Override the first checkpoint's context file");
  cmpc->add_option("--context-file-b", cm_ctx_b, "Override the second checkpoint's context file");
  cmpc->add_option("--out", cm_out, "Comparison CSV (default: stdout)");

  // reproduce
  auto* repc = app.add_subcommand("reproduce", "Run a figure's grid and write its panel CSVs");
  std::string re_fig, re_scale = "desk", re_mnist;
  fs::path re_out;
  double re_momentum = 0.0, re_relu_momentum = 0.9, re_tol = 1e-6;
  int re_iter = 20000;
  bool re_no_median = false, re_no_traj = false;
  repc->add_option("figure", re_fig, "fig2 or fig3")->required()->check(CLI::IsMember({"fig2", "fig3"}));
  repc->add_option("--scale", re_scale, "desk or paper")->capture_default_str()->check(CLI::IsMember({"desk", "paper"}));
  repc->add_option("--mnist-dir", re_mnist, "Directory with the IDX files (default: $MNIST_DIR)");
  repc->add_option("--out", re_out, "Output directory (default: results/<figure>-<scale>)");
  repc->add_option("--momentum", re_momentum, "GD-GLN momentum")->capture_default_str();
  repc->add_option("--relu-momentum", re_relu_momentum, "GD-ReLU momentum")->capture_default_str();
  repc->add_flag("--no-median", re_no_median, "Gaussian cutoffs instead of median cutoffs");
  repc->add_flag("--no-trajectories", re_no_traj, "Skip the per-run trajectory CSVs");
  repc->add_option("--tol", re_tol, "Solver tolerance")->capture_default_str();
  repc->add_option("--max-iter", re_iter, "Solver iteration cap")->capture_default_str();

  // run
  auto* runc = app.add_subcommand("run", "Run an experiment described by a config file");
  fs::path ru_config;
  std::string ru_mnist;
  runc->add_option("--config", ru_config, "Config file")->required();
  runc->add_option("--mnist-dir", ru_mnist, "Overrides mnist_dir (default: config, then $MNIST_DIR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      Dataset train_set, val_set;
      if (in_synth) {
        const auto all = gen_synthetic(in_train + in_val, in_dim, in_margin, in_seed).data;
        const auto n = static_cast<Eigen::Index>(in_train);
        const auto v = static_cast<Eigen::Index>(in_val);
        train_set = Dataset{all.inputs.topRows(n), all.labels.head(n)};
        val_set = Dataset{all.inputs.bottomRows(v), all.labels.tail(v)};
      } else {
        const auto [images, labels] = find_mnist_files(mnist_dir_or_env(in_mnist));
        std::tie(train_set, val_set) = make_binary_task(load_mnist(images, labels), in_train, in_val, in_seed);
      }
      fs::create_directories(in_out);
      write_dataset_csv(in_out / "train.csv", train_set);
      write_dataset_csv(in_out / "val.csv", val_set);
      std::cout << "train " << train_set.size() << " x " << train_set.dim() << ", val " << val_set.size() << '\n';
    } else if (*trainc) {
      const auto data = read_dataset_csv(tr_data);
      const auto family = parse_family(tr_family);
      TrainConfig tc;
      tc.schedule = make_schedule(tr_steps, tr_rates);
      tc.momentum = tr_momentum;
      tc.loss = parse_loss_kind(tr_loss);
      tc.snapshot_every = tr_every;
      tc.validate();
      const int C = family == Family::Gln ? tr_C : 2;
      auto model = init_model(family, {tr_H, C, data.dim()}, tr_seed);
      ContextMatrix ctx;
      Checkpoint ckpt;
      if (family != Family::Relu) {
        const auto cf = sample_contexts(data.dim(), tr_H, C, &data, !tr_no_median, tr_ctx_seed);
        const fs::path cpath = tr_ctx.empty() ? fs::path(tr_out).replace_extension(".contexts") : tr_ctx;
        write_context_function(cpath, cf);
        ckpt.contexts = cpath.string();
        ctx = contexts_for(model, &cf, data.inputs);
      }
      const auto traj = train(std::move(model), data, ctx, tc);
      ckpt.model = traj.model;
      ckpt.loss = tc.loss;
      write_checkpoint(tr_out, ckpt);
      if (!tr_traj.empty()) write_trajectory_csv(tr_traj, direction_metrics(traj, data, ctx));
      const auto& last = traj.snapshots.back();
      std::cout << "step " << last.step << " loss " << fmt_double(last.loss) << " min_margin "
                << fmt_double(last.min_margin) << " train_error " << fmt_double(error_rate(traj.model, data, ctx))
                << '\n';
    } else if (*solvec) {
      LiftedProblem p;
      if (!so_problem.empty()) {
        std::ifstream in(so_problem);
        if (!in) throw std::runtime_error("cannot open " + so_problem.string());
        p = read_problem(in);
      } else {
        if (so_data.empty()) throw std::invalid_argument("give --problem or --data");
        const auto data = read_dataset_csv(so_data);
        const auto family = parse_lift_family(so_family);
        ContextMatrix ctx;
        if (family != LiftFamily::Plain) {
          if (so_ctx.empty()) throw std::invalid_argument("--context-file is required for this family");
          const auto cf = read_context_function(so_ctx);
          ctx = family == LiftFamily::Frelu ? binary_gates(cf, data.inputs) : assign_contexts(cf, data.inputs);
        }
        p = lift(data, ctx, family, parse_objective(so_objective), so_C);
        if (!p.excluded.empty()) std::cerr << "warning: " << p.excluded.size() << " rows with every gate closed dropped\n";
      }
      if (!so_dump.empty()) {
        auto out = open_out(so_dump);
        write_problem(out, p);
      }
      SolverOptions opt;
      opt.tol = so_tol;
      opt.max_iter = so_iter;
      const auto r = solve(p, opt);
      if (so_out.empty()) {
        write_result_json(std::cout, r);
      } else {
        auto out = open_out(so_out);
        write_result_json(out, r);
      }
      std::cerr << "status " << to_string(r.status) << " objective " << fmt_double(r.objective) << '\n';
      return r.status == SolveStatus::Infeasible ? 3 : 0;
    } else if (*certc) {
      const auto m = load_model(ce_ckpt, ce_ctx);
      const auto data = read_dataset_csv(ce_data);
      KKTOptions opt;
      opt.margin_tol = ce_tol;
      const auto ctx = contexts_for(m.ckpt.model, m.cf ? &*m.cf : nullptr, data.inputs);
      const auto report = kkt_certify(m.ckpt.model, data, ctx, opt);
      if (ce_out.empty()) {
        write_kkt_json(std::cout, report);
      } else {
        auto out = open_out(ce_out);
        write_kkt_json(out, report);
      }
    } else if (*normc) {
      BetaTable table;
      if (!no_table.empty()) {
        std::ifstream in(no_table);
        if (!in) throw std::runtime_error("cannot open " + no_table.string());
        table = read_beta_table_csv(in);
      } else if (!no_ckpt.empty()) {
        const auto ck = read_checkpoint(no_ckpt);
        const auto* gln = std::get_if<TwoLayerGLN>(&ck.model);
        if (!gln) throw std::invalid_argument("norms needs a two-layer GLN checkpoint");
        table = beta_table(*gln);
      } else {
        throw std::invalid_argument("give --table or --checkpoint");
      }
      if (!no_table_out.empty()) {
        auto out = open_out(no_table_out);
        write_beta_table_csv(out, table);
      }
      const auto eq = check_equivariance(table, 1e-8);
      std::cerr << "equivariance max_violation " << fmt_double(eq.max_violation) << (eq.passed ? " ok" : " FAILED")
                << '\n';
      if (!eq.passed) return 2;
      const auto report = gln_norm_variational(table, no_tol);
      if (table.H == 2 && table.C == 2) {
        const auto cf = gln_norm_closed_2x2(table);
        std::cerr << "closed_form " << fmt_double(cf.value) << " alpha " << fmt_double(cf.alpha) << '\n';
      }
      if (no_out.empty()) {
        write_norm_report(std::cout, report);
      } else {
        auto out = open_out(no_out);
        write_norm_report(out, report);
      }
    } else if (*cmpc) {
      const auto a = load_model(cm_a, cm_ctx_a);
      const auto b = load_model(cm_b, cm_ctx_b);
      const auto data = read_dataset_csv(cm_data);
      const Vector sa = scores(a.ckpt.model, data.inputs, contexts_for(a.ckpt.model, a.cf ? &*a.cf : nullptr, data.inputs));
      const Vector sb = scores(b.ckpt.model, data.inputs, contexts_for(b.ckpt.model, b.cf ? &*b.cf : nullptr, data.inputs));
      ComparisonRow row;
      row.figure = "compare";
      row.family = std::string(family_name(a.ckpt.model));
      row.variant_a = cm_a.stem().string();
      row.variant_b = cm_b.stem().string();
      row.error_a = error_rate(sa, data.labels);
      row.error_b = error_rate(sb, data.labels);
      row.inconsistency = inconsistency(sa, sb);
      row.baseline = baseline_inconsistency(row.error_a);
      row.kkt_residual = std::numeric_limits<double>::quiet_NaN();
      if (cm_out.empty()) {
        write_comparison_csv(std::cout, {row});
      } else {
        write_comparison_csv(cm_out, {row});
      }
    } else if (*repc) {
      ExperimentConfig base;
      base.mnist_dir = mnist_dir_or_env(re_mnist);
      base.output_dir = re_out.empty() ? fs::path("results") / (re_fig + "-" + re_scale) : re_out;
      base.train.momentum = re_momentum;
      base.relu_momentum = re_relu_momentum;
      base.median = !re_no_median;
      base.write_trajectories = !re_no_traj;
      base.solver.tol = re_tol;
      base.solver.max_iter = re_iter;
      const auto result = reproduce(re_fig, parse_scale(re_scale), base, &std::cerr);
      std::cout << result.variants.size() << " runs, " << result.comparisons.size() << " comparisons written to "
                << base.output_dir.string() << '\n';
    } else if (*runc) {
      auto cfg = load_config(ru_config);
      if (!ru_mnist.empty()) {
        cfg.mnist_dir = ru_mnist;
      } else if (cfg.mnist_dir.empty() && cfg.task == Task::MnistBinary) {
        cfg.mnist_dir = mnist_dir_or_env("");
      }
      const auto result = run_experiment(cfg, &std::cerr);
      std::cout << result.variants.size() << " runs, " << result.comparisons.size() << " comparisons written to "
                << cfg.output_dir.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
