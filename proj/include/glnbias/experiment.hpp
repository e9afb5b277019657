#pragma once

#include "glnbias/analysis.hpp"
#include "glnbias/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace glnbias {

/// Validation error of one variant in one cell.
struct VariantRecord {
  std::string figure;
  std::string family;
  int H = 0;
  int C = 0;
  int n_train = 0;
  std::uint64_t seed = 0;
  std::string variant;
  double train_error = 0.0;
  double val_error = 0.0;  // NaN when the convex program was infeasible
  double kkt_residual = 0.0;  // GD variants only, NaN otherwise
  std::string status;  // optimal, max_iter, infeasible, trained, diverged
  int excluded = 0;    // training rows dropped because every gate was closed
};

struct ExperimentResult {
  std::vector<VariantRecord> variants;
  std::vector<ComparisonRow> comparisons;
};

/// Seed of one (H, C, n_train, seed) cell; every random draw in the cell
/// derives from it.
std::uint64_t cell_seed(std::uint64_t seed, int H, int C, int n_train);

/// Runs every cell of the grid. For each cell: sample contexts, train the GD
/// variants, solve the convex variants, certify the GD runs and compare every
/// pair of variants within a family on the validation set. Writes
/// `variants.csv`, `comparisons.csv`, `config.ini` and, when enabled,
/// `trajectories/<variant>_H<H>_C<C>_n<n>_s<seed>.csv` under output_dir.
/// Progress goes to `log` when non-null.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

void write_variants_csv(std::ostream& out, const std::vector<VariantRecord>& rows);

enum class Scale { Desk, Paper };
Scale parse_scale(std::string_view name);

/// Grid and variants of a figure at a scale, on top of `base` (data location,
/// output directory, solver and training settings).
///   fig2: gd-gln, svm-gln, svm-l2, shallow
///   fig3: gd-relu, svm-rc, svm-lc, svm-hl and gd-gln (panel c compares the
///         best ReLU variants with the best deep GLN)
///   desk: n_train 500, H 10 and 20, C 2, seeds 0 and 1
///   paper: n_train 500/1000/2000, H 10/20/50/100, C 2/4 (C 2 in fig3), 3 seeds
ExperimentConfig figure_config(const std::string& figure, Scale scale, const ExperimentConfig& base);

/// Runs figure_config and writes the panel tables next to the raw results:
///   panel_a.csv  one row per cell, one error column per variant
///   panel_b.csv  GD vs each convex variant: gd_error, inconsistency, baseline = 2*err*(1-err)
///   panel_c.csv  per (n_train, variant) the hyperparameters with the lowest mean error
///   panel_d.csv  mean error against hidden units at C = 2
ExperimentResult reproduce(const std::string& figure, Scale scale, const ExperimentConfig& base,
                           std::ostream* log = nullptr);

void write_panels(const std::filesystem::path& dir, const ExperimentConfig& config, const ExperimentResult& result);

}  // namespace glnbias
