#pragma once

#include "glnbias/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace glnbias {

/// Raised for malformed IDX containers and dataset files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major per image

  std::span<const std::uint8_t> image(std::size_t i) const {
    const std::size_t stride = std::size_t{rows} * cols;
    return {pixels.data() + i * stride, stride};
  }
};

struct IdxLabels {
  std::vector<std::uint8_t> labels;
};

using IdxContent = std::variant<IdxImages, IdxLabels>;

/// Decodes an unsigned-byte IDX container. Magic 2051 yields images
/// (three dimensions), 2049 yields labels (one dimension).
IdxContent parse_idx(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_idx(const IdxImages& images);
std::vector<std::uint8_t> serialize_idx(const IdxLabels& labels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

struct RawMnist {
  IdxImages images;
  IdxLabels labels;
};

/// Pairs images with labels, checking the counts agree and labels are digits.
RawMnist make_raw_mnist(IdxImages images, IdxLabels labels);
RawMnist load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Locates the training IDX pair inside a directory (plain or `.gz`-less names).
std::pair<std::filesystem::path, std::filesystem::path> find_mnist_files(
    const std::filesystem::path& dir);

struct Dataset {
  Matrix inputs;  // N x D
  Vector labels;  // N, each exactly -1 or +1

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index dim() const { return inputs.cols(); }

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
};

/// Binary label for an MNIST digit: +1 for 0-4, -1 for 5-9.
inline double digit_label(std::uint8_t digit) { return digit <= 4 ? 1.0 : -1.0; }

/// Builds train and validation sets from a seeded Fisher-Yates permutation of
/// the whole file: the first n_train permuted rows train, the next n_val
/// validate. Pixels are scaled to [0,1] and a constant 1 is appended.
std::pair<Dataset, Dataset> make_binary_task(const RawMnist& raw, std::size_t n_train,
                                             std::size_t n_val, std::uint64_t seed);

/// Seeded permutation of 0..n-1 (Fisher-Yates, back to front).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

struct SyntheticData {
  Dataset data;
  Vector witness;  // unit vector with y * <witness, x> >= margin for every row
};

/// Linearly separable data through the origin. Labels alternate +1/-1 so the
/// classes are balanced up to one sample.
SyntheticData gen_synthetic(std::size_t n, std::size_t d, double margin, std::uint64_t seed);

/// CSV with header `row,label,feat_0..feat_{D-1}`.
void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace glnbias
