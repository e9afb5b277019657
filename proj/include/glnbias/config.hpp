#pragma once

#include "glnbias/solvers.hpp"
#include "glnbias/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace glnbias {

/// `[section]` headers and `key = value` lines; `#` and `;` start comments.
/// Duplicate keys are errors.
using IniFile = std::map<std::string, std::map<std::string, std::string>>;
IniFile parse_ini(std::istream& in);

enum class Task { MnistBinary, Synthetic };

inline const std::vector<std::string> kGlnVariants{"gd-gln", "svm-gln", "svm-l2", "shallow"};
inline const std::vector<std::string> kReluVariants{"gd-relu", "svm-rc", "svm-lc", "svm-hl"};

/// "gln" or "relu"; throws for an unknown variant.
std::string variant_family(const std::string& variant);

struct ExperimentConfig {
  std::string figure = "custom";
  Task task = Task::MnistBinary;
  std::filesystem::path mnist_dir;
  std::vector<int> n_train{500, 1000, 2000};
  int n_val = 12000;
  std::vector<int> hidden{10, 20, 50, 100};
  std::vector<int> contexts{2, 4};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::uint64_t data_seed = 0;
  bool median = true;
  std::vector<std::string> variants;
  TrainConfig train;            // momentum applies to GD-GLN
  double relu_momentum = 0.9;   // GD-ReLU
  SolverOptions solver{1e-6, 20000, 10, std::nullopt};
  double margin_tol = 1e-4;
  std::size_t synthetic_dim = 20;
  double synthetic_margin = 0.1;
  std::filesystem::path output_dir = "results";
  bool write_trajectories = true;

  /// Throws std::invalid_argument naming the offending setting.
  void validate() const;
};

/// Sections and keys (defaults in parentheses):
///   [experiment] figure, task (mnist-binary | synthetic), mnist_dir, n_train,
///                n_val, hidden, contexts, seeds (count) or seed_list,
///                data_seed, median, loss, variants, output, trajectories
///   [train]      steps, rates, momentum, relu_momentum, snapshot_every
///   [solver]     tol, max_iter, margin_tol
///   [synthetic]  dim, margin
/// Unknown sections or keys are hard errors.
ExperimentConfig load_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Writes a config that load_config reads back to the same values.
void write_config(std::ostream& out, const ExperimentConfig& cfg);

}  // namespace glnbias
