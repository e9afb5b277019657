#include "glnbias/experiment.hpp"

#include "glnbias/data.hpp"
#include "glnbias/format.hpp"
#include "glnbias/gating.hpp"
#include "glnbias/kkt.hpp"
#include "glnbias/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>

namespace glnbias {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool is_gd(const std::string& v) { return v == "gd-gln" || v == "gd-relu"; }

int canonical_rank(const std::string& v) {
  for (std::size_t i = 0; i < kGlnVariants.size(); ++i) {
    if (kGlnVariants[i] == v) return static_cast<int>(i);
  }
  for (std::size_t i = 0; i < kReluVariants.size(); ++i) {
    if (kReluVariants[i] == v) return static_cast<int>(kGlnVariants.size() + i);
  }
  return 1 << 20;
}

std::filesystem::path trajectory_path(const ExperimentConfig& cfg, const std::string& variant, int H, int C, int n,
                                      std::uint64_t seed) {
  return cfg.output_dir / "trajectories" /
         (variant + "_H" + std::to_string(H) + "_C" + std::to_string(C) + "_n" + std::to_string(n) + "_s" +
          std::to_string(seed) + ".csv");
}

struct Outcome {
  VariantRecord record;
  Vector val_scores;  // empty when the variant has no predictor
};

double certify_residual(const AnyModel& model, const Dataset& data, const ContextMatrix& ctx, double margin_tol) {
  try {
    KKTOptions opt;
    opt.margin_tol = margin_tol;
    return kkt_certify(model, data, ctx, opt).residual;
  } catch (const std::domain_error&) {
    return kNaN;  // not separated
  }
}

struct TaskData {
  Dataset train;
  Dataset val;
};

class Cell {
 public:
  Cell(const ExperimentConfig& cfg, const TaskData& data, int H, int C, std::uint64_t seed, std::ostream* log)
      : cfg_(cfg), data_(data), H_(H), C_(C), seed_(seed), log_(log),
        base_(cell_seed(seed, H, C, static_cast<int>(data.train.size()))) {}

  std::vector<Outcome> run(const std::vector<std::string>& variants) {
    std::vector<Outcome> out;
    for (const auto& v : variants) {
      if (log_) *log_ << "  " << v << " H=" << H_ << " C=" << C_ << " n=" << data_.train.size() << " seed=" << seed_
                      << std::endl;
      out.push_back(run_one(v));
    }
    return out;
  }

 private:
  VariantRecord blank(const std::string& variant) const {
    VariantRecord r;
    r.figure = cfg_.figure;
    r.family = variant_family(variant);
    r.H = H_;
    r.C = variant_family(variant) == "relu" ? 2 : C_;
    r.n_train = static_cast<int>(data_.train.size());
    r.seed = seed_;
    r.variant = variant;
    r.kkt_residual = kNaN;
    return r;
  }

  Outcome run_one(const std::string& v) {
    if (v == "gd-gln") return gd_gln();
    if (v == "svm-gln") return svm_gln(Objective::GroupLasso, v);
    if (v == "svm-l2") return svm_gln(Objective::QuadM, v);
    if (v == "shallow") return shallow();
    if (v == "gd-relu") return gd_relu();
    if (v == "svm-rc") return svm_rc();
    if (v == "svm-lc") return svm_lc();
    if (v == "svm-hl") return svm_hl();
    throw std::invalid_argument("unknown variant '" + v + "'");
  }

  void gln_contexts() {
    if (gln_ctx_ready_) return;
    const auto cf = sample_contexts(data_.train.dim(), H_, C_, &data_.train, cfg_.median, splitmix(base_ ^ 1));
    gln_train_ = assign_contexts(cf, data_.train.inputs);
    gln_val_ = assign_contexts(cf, data_.val.inputs);
    gln_ctx_ready_ = true;
  }

  void write_trajectory(const std::string& v, const Trajectory& traj, const ContextMatrix& ctx) {
    if (!cfg_.write_trajectories) return;
    const auto path = trajectory_path(cfg_, v, H_, v == "gd-relu" ? 2 : C_, static_cast<int>(data_.train.size()), seed_);
    std::filesystem::create_directories(path.parent_path());
    write_trajectory_csv(path, direction_metrics(traj, data_.train, ctx));
  }

  Outcome train_gd(const std::string& v, AnyModel init, const ContextMatrix& train_ctx, const ContextMatrix& val_ctx,
                   double momentum, AnyModel* final_model) {
    Outcome o{blank(v), {}};
    TrainConfig tc = cfg_.train;
    tc.momentum = momentum;
    try {
      auto traj = train(std::move(init), data_.train, train_ctx, tc);
      write_trajectory(v, traj, train_ctx);
      o.record.status = "trained";
      o.record.train_error = error_rate(traj.model, data_.train, train_ctx);
      o.val_scores = scores(traj.model, data_.val.inputs, val_ctx);
      o.record.val_error = error_rate(o.val_scores, data_.val.labels);
      o.record.kkt_residual = certify_residual(traj.model, data_.train, train_ctx, cfg_.margin_tol);
      if (final_model) *final_model = traj.model;
    } catch (const DivergenceError& e) {
      if (log_) *log_ << "    diverged: " << e.what() << std::endl;
      o.record.status = "diverged";
      o.record.train_error = kNaN;
      o.record.val_error = kNaN;
    }
    return o;
  }

  Outcome gd_gln() {
    gln_contexts();
    return train_gd("gd-gln", init_model(Family::Gln, {H_, C_, data_.train.dim()}, splitmix(base_ ^ 2)), gln_train_,
                    gln_val_, cfg_.train.momentum, nullptr);
  }

  // Records solver status; returns false when there is no usable predictor.
  bool solved(Outcome& o, const SolverResult& r) {
    o.record.status = std::string(to_string(r.status));
    if (r.status != SolveStatus::Infeasible) return true;
    o.record.train_error = kNaN;
    o.record.val_error = kNaN;
    return false;
  }

  void finish(Outcome& o, const AnyModel& model, const ContextMatrix& train_ctx, const ContextMatrix& val_ctx) {
    o.record.train_error = error_rate(model, data_.train, train_ctx);
    o.val_scores = scores(model, data_.val.inputs, val_ctx);
    o.record.val_error = error_rate(o.val_scores, data_.val.labels);
  }

  Outcome svm_gln(Objective objective, const std::string& v) {
    gln_contexts();
    Outcome o{blank(v), {}};
    const auto p = lift(data_.train, gln_train_, LiftFamily::Gln, objective, C_);
    const auto r = solve(p, cfg_.solver);
    if (!solved(o, r)) return o;
    finish(o, AnyModel{zeta_to_w(GlnZeta{H_, C_, r.zeta})}, gln_train_, gln_val_);
    return o;
  }

  Outcome shallow() {
    gln_contexts();
    Outcome o{blank("shallow"), {}};
    const auto p = lift(data_.train, gln_train_, LiftFamily::Shallow, Objective::PlainL2, C_);
    const auto r = solve(p, cfg_.solver);
    if (!solved(o, r)) return o;
    ShallowGLN model(data_.train.dim(), gln_train_);
    for (std::size_t b = 0; b < p.block_contexts.size(); ++b) {
      model.table().row(model.find(p.block_contexts[b])) = r.zeta.row(static_cast<Eigen::Index>(b));
    }
    // Validation samples in contexts never seen in training score 0.
    finish(o, AnyModel{std::move(model)}, gln_train_, gln_val_);
    return o;
  }

  void ensure_relu() {
    if (relu_ready_) return;
    AnyModel final_model;
    relu_outcome_ = train_gd("gd-relu", init_model(Family::Relu, {H_, 2, data_.train.dim()}, splitmix(base_ ^ 3)),
                             ContextMatrix{}, ContextMatrix{}, cfg_.relu_momentum, &final_model);
    if (relu_outcome_.record.status == "trained") relu_ = std::get<ReluNet>(final_model);
    relu_ready_ = true;
  }

  Outcome missing(const std::string& v, const std::string& status) {
    Outcome o{blank(v), {}};
    o.record.status = status;
    o.record.train_error = kNaN;
    o.record.val_error = kNaN;
    return o;
  }

  Outcome gd_relu() {
    ensure_relu();
    return relu_outcome_;
  }

  Outcome frelu_svm(const std::string& v, const ContextMatrix& train_gates, const ContextMatrix& val_gates) {
    Outcome o{blank(v), {}};
    const auto p = lift(data_.train, train_gates, LiftFamily::Frelu, Objective::GroupLasso);
    o.record.excluded = static_cast<int>(p.excluded.size());
    if (!p.excluded.empty() && log_) {
      *log_ << "    warning: " << p.excluded.size() << " training rows have every gate closed and were dropped"
            << std::endl;
    }
    const auto r = solve(p, cfg_.solver);
    if (!solved(o, r)) return o;
    FReluNet model(H_, data_.train.dim());
    model.zeta() = r.zeta;
    finish(o, AnyModel{std::move(model)}, train_gates, val_gates);
    return o;
  }

  Outcome svm_rc() {
    const auto cf = sample_contexts(data_.train.dim(), H_, 2, &data_.train, true, splitmix(base_ ^ 4));
    return frelu_svm("svm-rc", binary_gates(cf, data_.train.inputs), binary_gates(cf, data_.val.inputs));
  }

  Outcome svm_lc() {
    ensure_relu();
    if (relu_outcome_.record.status != "trained") return missing("svm-lc", "diverged");
    return frelu_svm("svm-lc", relu_gates(relu_.first(), data_.train.inputs), relu_gates(relu_.first(), data_.val.inputs));
  }

  Outcome svm_hl() {
    ensure_relu();
    if (relu_outcome_.record.status != "trained") return missing("svm-hl", "diverged");
    Outcome o{blank("svm-hl"), {}};
    const Matrix w = relu_.first();
    Dataset hidden{(data_.train.inputs * w.transpose()).cwiseMax(0.0), data_.train.labels};
    const Matrix val_hidden = (data_.val.inputs * w.transpose()).cwiseMax(0.0);
    const auto p = lift(hidden, ContextMatrix{}, LiftFamily::Plain, Objective::PlainL2);
    const auto r = solve(p, cfg_.solver);
    if (!solved(o, r)) return o;
    const Vector beta = r.zeta.row(0).transpose();
    o.record.train_error = error_rate(hidden.inputs * beta, hidden.labels);
    o.val_scores = val_hidden * beta;
    o.record.val_error = error_rate(o.val_scores, data_.val.labels);
    return o;
  }

  const ExperimentConfig& cfg_;
  const TaskData& data_;
  int H_;
  int C_;
  std::uint64_t seed_;
  std::ostream* log_;
  std::uint64_t base_;

  bool gln_ctx_ready_ = false;
  ContextMatrix gln_train_;
  ContextMatrix gln_val_;

  bool relu_ready_ = false;
  Outcome relu_outcome_;
  ReluNet relu_;
};

std::vector<ComparisonRow> compare_cell(const ExperimentConfig& cfg, const std::vector<Outcome>& outcomes) {
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    for (std::size_t j = i + 1; j < outcomes.size(); ++j) {
      const auto& a = outcomes[i];
      const auto& b = outcomes[j];
      if (a.record.family != b.record.family || a.record.C != b.record.C) continue;
      ComparisonRow row;
      row.figure = cfg.figure;
      row.family = a.record.family;
      row.H = a.record.H;
      row.C = a.record.C;
      row.n_train = a.record.n_train;
      row.seed = a.record.seed;
      row.median = cfg.median;
      row.momentum = a.record.family == "relu" ? cfg.relu_momentum : cfg.train.momentum;
      row.variant_a = a.record.variant;
      row.variant_b = b.record.variant;
      row.error_a = a.record.val_error;
      row.error_b = b.record.val_error;
      const bool both = a.val_scores.size() > 0 && b.val_scores.size() > 0;
      row.inconsistency = both ? inconsistency(a.val_scores, b.val_scores) : kNaN;
      row.baseline = std::isnan(row.error_a) ? kNaN : baseline_inconsistency(row.error_a);
      row.kkt_residual = is_gd(row.variant_a) ? a.record.kkt_residual : kNaN;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

TaskData load_task(const ExperimentConfig& cfg, const RawMnist* raw, int n_train) {
  TaskData t;
  if (cfg.task == Task::MnistBinary) {
    std::tie(t.train, t.val) = make_binary_task(*raw, static_cast<std::size_t>(n_train),
                                                static_cast<std::size_t>(cfg.n_val), cfg.data_seed);
  } else {
    const auto n = static_cast<Eigen::Index>(n_train);
    const auto all = gen_synthetic(static_cast<std::size_t>(n_train + cfg.n_val), cfg.synthetic_dim,
                                   cfg.synthetic_margin, cfg.data_seed)
                         .data;
    t.train = Dataset{all.inputs.topRows(n), all.labels.head(n)};
    t.val = Dataset{all.inputs.bottomRows(cfg.n_val), all.labels.tail(cfg.n_val)};
  }
  return t;
}

// Mean over the finite entries; NaN when there are none.
double finite_mean(const std::vector<double>& v) {
  double sum = 0.0;
  int count = 0;
  for (double x : v) {
    if (std::isfinite(x)) {
      sum += x;
      ++count;
    }
  }
  return count ? sum / count : kNaN;
}

}  // namespace

std::uint64_t cell_seed(std::uint64_t seed, int H, int C, int n_train) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(H));
  h = splitmix(h ^ static_cast<std::uint64_t>(C));
  return splitmix(h ^ static_cast<std::uint64_t>(n_train));
}

void write_variants_csv(std::ostream& out, const std::vector<VariantRecord>& rows) {
  out << "# schema=1\nfigure,family,H,C,n_train,seed,variant,train_error,val_error,kkt_residual,status,excluded\n";
  for (const auto& r : rows) {
    out << r.figure << ',' << r.family << ',' << r.H << ',' << r.C << ',' << r.n_train << ',' << r.seed << ','
        << r.variant << ',' << fmt_double(r.train_error) << ',' << fmt_double(r.val_error) << ','
        << fmt_double(r.kkt_residual) << ',' << r.status << ',' << r.excluded << '\n';
  }
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  std::vector<std::string> gln_variants;
  std::vector<std::string> relu_variants;
  auto ordered = config.variants;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const std::string& a, const std::string& b) { return canonical_rank(a) < canonical_rank(b); });
  for (const auto& v : ordered) (variant_family(v) == "gln" ? gln_variants : relu_variants).push_back(v);

  RawMnist raw;
  if (config.task == Task::MnistBinary) {
    if (config.mnist_dir.empty()) throw std::runtime_error("mnist-binary task needs an MNIST directory");
    const auto [images, labels] = find_mnist_files(config.mnist_dir);
    raw = load_mnist(images, labels);
  }

  std::filesystem::create_directories(config.output_dir);
  ExperimentResult result;
  for (int n : config.n_train) {
    const auto task = load_task(config, &raw, n);
    for (int H : config.hidden) {
      // ReLU variants do not depend on C; run them once per H at C = 2.
      for (std::size_t ci = 0; ci < config.contexts.size(); ++ci) {
        const int C = config.contexts[ci];
        std::vector<std::string> variants = gln_variants;
        if (C == 2 || (ci == 0 && std::find(config.contexts.begin(), config.contexts.end(), 2) == config.contexts.end())) {
          variants.insert(variants.end(), relu_variants.begin(), relu_variants.end());
        }
        if (variants.empty()) continue;
        for (auto seed : config.seeds) {
          Cell cell(config, task, H, C, seed, log);
          const auto outcomes = cell.run(variants);
          for (const auto& o : outcomes) result.variants.push_back(o.record);
          auto rows = compare_cell(config, outcomes);
          result.comparisons.insert(result.comparisons.end(), rows.begin(), rows.end());
        }
      }
    }
  }

  write_comparison_csv(config.output_dir / "comparisons.csv", result.comparisons);
  {
    std::ofstream out(config.output_dir / "variants.csv");
    if (!out) throw std::runtime_error("cannot write " + (config.output_dir / "variants.csv").string());
    write_variants_csv(out, result.variants);
  }
  {
    std::ofstream out(config.output_dir / "config.ini");
    write_config(out, config);
  }
  return result;
}

Scale parse_scale(std::string_view name) {
  if (name == "desk") return Scale::Desk;
  if (name == "paper") return Scale::Paper;
  throw std::invalid_argument("unknown scale '" + std::string(name) + "' (desk or paper)");
}

ExperimentConfig figure_config(const std::string& figure, Scale scale, const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  cfg.figure = figure;
  cfg.task = Task::MnistBinary;
  if (figure == "fig2") {
    cfg.variants = {"gd-gln", "svm-gln", "svm-l2", "shallow"};
  } else if (figure == "fig3") {
    cfg.variants = {"gd-gln", "gd-relu", "svm-rc", "svm-lc", "svm-hl"};
  } else {
    throw std::invalid_argument("unknown figure '" + figure + "' (fig2 or fig3)");
  }
  if (scale == Scale::Desk) {
    cfg.n_train = {500};
    cfg.hidden = {10, 20};
    cfg.contexts = {2};
    cfg.seeds = {0, 1};
  } else {
    cfg.n_train = {500, 1000, 2000};
    cfg.hidden = {10, 20, 50, 100};
    cfg.contexts = figure == "fig2" ? std::vector<int>{2, 4} : std::vector<int>{2};
    cfg.seeds = {0, 1, 2};
  }
  return cfg;
}

void write_panels(const std::filesystem::path& dir, const ExperimentConfig& config, const ExperimentResult& result) {
  auto ordered = config.variants;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const std::string& a, const std::string& b) { return canonical_rank(a) < canonical_rank(b); });
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << "# schema=1\n";
    return out;
  };

  using CellId = std::tuple<int, int, int, std::uint64_t>;  // n_train, H, C, seed
  std::map<CellId, std::map<std::string, double>> cells;
  for (const auto& r : result.variants) cells[{r.n_train, r.H, r.C, r.seed}][r.variant] = r.val_error;

  {
    auto out = open("panel_a.csv");
    out << "n_train,H,C,seed";
    for (const auto& v : ordered) out << ',' << v;
    out << '\n';
    for (const auto& [id, errs] : cells) {
      out << std::get<0>(id) << ',' << std::get<1>(id) << ',' << std::get<2>(id) << ',' << std::get<3>(id);
      for (const auto& v : ordered) {
        const auto it = errs.find(v);
        out << ',' << (it == errs.end() ? std::string() : fmt_double(it->second));
      }
      out << '\n';
    }
  }
  {
    auto out = open("panel_b.csv");
    out << "n_train,H,C,seed,gd_variant,variant,gd_error,error,inconsistency,baseline\n";
    for (const auto& r : result.comparisons) {
      if (!is_gd(r.variant_a) || is_gd(r.variant_b)) continue;
      out << r.n_train << ',' << r.H << ',' << r.C << ',' << r.seed << ',' << r.variant_a << ',' << r.variant_b << ','
          << fmt_double(r.error_a) << ',' << fmt_double(r.error_b) << ',' << fmt_double(r.inconsistency) << ','
          << fmt_double(r.baseline) << '\n';
    }
  }

  // Mean over seeds per (variant, n_train, H, C).
  std::map<std::tuple<std::string, int, int, int>, std::vector<double>> by_setting;
  for (const auto& r : result.variants) by_setting[{r.variant, r.n_train, r.H, r.C}].push_back(r.val_error);
  {
    auto out = open("panel_c.csv");
    out << "n_train,variant,H,C,mean_error\n";
    std::set<int> ns(config.n_train.begin(), config.n_train.end());
    for (int n : ns) {
      for (const auto& v : ordered) {
        double best = kNaN;
        int bh = 0;
        int bc = 0;
        for (const auto& [key, errs] : by_setting) {
          if (std::get<0>(key) != v || std::get<1>(key) != n) continue;
          const double m = finite_mean(errs);
          if (std::isfinite(m) && !(m >= best)) {
            best = m;
            bh = std::get<2>(key);
            bc = std::get<3>(key);
          }
        }
        out << n << ',' << v << ',' << bh << ',' << bc << ',' << fmt_double(best) << '\n';
      }
    }
  }
  {
    auto out = open("panel_d.csv");
    out << "n_train,variant,H,mean_error,seeds\n";
    for (const auto& v : ordered) {
      for (const auto& [key, errs] : by_setting) {
        if (std::get<0>(key) != v || std::get<3>(key) != 2) continue;
        out << std::get<1>(key) << ',' << v << ',' << std::get<2>(key) << ',' << fmt_double(finite_mean(errs)) << ','
            << errs.size() << '\n';
      }
    }
  }
}

ExperimentResult reproduce(const std::string& figure, Scale scale, const ExperimentConfig& base, std::ostream* log) {
  const auto cfg = figure_config(figure, scale, base);
  auto result = run_experiment(cfg, log);
  write_panels(cfg.output_dir, cfg, result);
  return result;
}

}  // namespace glnbias
