#include "glnbias/analysis.hpp"

#include "glnbias/format.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace glnbias {

namespace {

int sign(double v) { return (v > 0) - (v < 0); }

constexpr const char* kHeader =
    "figure,family,H,C,n_train,seed,median,momentum,variant_a,variant_b,error_a,error_b,inconsistency,"
    "baseline_inconsistency,kkt_residual";

}  // namespace

double error_rate(const Vector& scores, const Vector& labels) {
  if (scores.size() == 0) throw std::invalid_argument("error rate of an empty dataset");
  if (scores.size() != labels.size()) throw std::invalid_argument("score and label counts differ");
  Eigen::Index wrong = 0;
  for (Eigen::Index n = 0; n < scores.size(); ++n) {
    if (scores[n] == 0.0 || sign(scores[n]) != sign(labels[n])) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(scores.size());
}

double error_rate(const AnyModel& model, const Dataset& data, const ContextMatrix& contexts) {
  return error_rate(scores(model, data.inputs, contexts), data.labels);
}

double inconsistency(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("inconsistency needs scores on the same samples");
  if (a.size() == 0) throw std::invalid_argument("inconsistency of an empty dataset");
  Eigen::Index differ = 0;
  for (Eigen::Index n = 0; n < a.size(); ++n) {
    if (sign(a[n]) != sign(b[n])) ++differ;
  }
  return static_cast<double>(differ) / static_cast<double>(a.size());
}

double baseline_inconsistency(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("error rate must lie in [0, 1]");
  return 2.0 * p * (1.0 - p);
}

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  out << "# schema=1\n" << kHeader << '\n';
  for (const auto& r : rows) {
    out << r.figure << ',' << r.family << ',' << r.H << ',' << r.C << ',' << r.n_train << ',' << r.seed << ','
        << (r.median ? 1 : 0) << ',' << fmt_double(r.momentum) << ',' << r.variant_a << ',' << r.variant_b << ','
        << fmt_double(r.error_a) << ',' << fmt_double(r.error_b) << ',' << fmt_double(r.inconsistency) << ','
        << fmt_double(r.baseline) << ',' << fmt_double(r.kkt_residual) << '\n';
  }
}

void write_comparison_csv(const std::filesystem::path& path, const std::vector<ComparisonRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_comparison_csv(out, rows);
}

std::vector<ComparisonRow> read_comparison_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "# schema=1") throw FormatError("comparison CSV must start with # schema=1");
  if (!std::getline(in, line) || trim(line) != kHeader) throw FormatError("unexpected comparison CSV header");
  std::vector<ComparisonRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 15) throw FormatError("comparison row needs 15 fields");
    ComparisonRow r;
    r.figure = c[0];
    r.family = c[1];
    r.H = static_cast<int>(parse_int(c[2]));
    r.C = static_cast<int>(parse_int(c[3]));
    r.n_train = static_cast<int>(parse_int(c[4]));
    r.seed = static_cast<std::uint64_t>(parse_int(c[5]));
    r.median = parse_int(c[6]) != 0;
    r.momentum = parse_double(c[7]);
    r.variant_a = c[8];
    r.variant_b = c[9];
    r.error_a = parse_double(c[10]);
    r.error_b = parse_double(c[11]);
    r.inconsistency = parse_double(c[12]);
    r.baseline = parse_double(c[13]);
    r.kkt_residual = parse_double(c[14]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace glnbias
