#pragma once

#include "glnbias/models.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace glnbias {

/// Fraction of samples with sign(score) != label; a zero score is an error.
double error_rate(const Vector& scores, const Vector& labels);
double error_rate(const AnyModel& model, const Dataset& data, const ContextMatrix& contexts);

/// Fraction of samples whose predicted signs differ. A zero score predicts
/// neither class, so it disagrees with any nonzero score (and agrees with
/// another zero, which keeps this a pseudometric).
double inconsistency(const Vector& scores_a, const Vector& scores_b);

/// Disagreement rate 2p(1-p) of two independent predictors with error p.
double baseline_inconsistency(double p);

struct ComparisonRow {
  std::string figure;
  std::string family;  // gln or relu
  int H = 0;
  int C = 0;
  int n_train = 0;
  std::uint64_t seed = 0;
  bool median = true;
  double momentum = 0.0;
  std::string variant_a;
  std::string variant_b;
  double error_a = 0.0;  // validation error of variant_a
  double error_b = 0.0;
  double inconsistency = 0.0;
  double baseline = 0.0;      // 2 p (1 - p) with p = error_a
  double kkt_residual = 0.0;  // of variant_a when it is a GD run, NaN otherwise
};

/// `# schema=1` followed by the header and one line per row.
void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows);
void write_comparison_csv(const std::filesystem::path& path, const std::vector<ComparisonRow>& rows);
std::vector<ComparisonRow> read_comparison_csv(std::istream& in);

}  // namespace glnbias
