#include "glnbias/data.hpp"

#include "glnbias/format.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

namespace glnbias {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxContent parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("truncated header");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic && magic != kIdxLabelMagic) {
    throw FormatError("malformed magic number " + std::to_string(magic));
  }
  const std::size_t ndims = magic & 0xFFu;
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) throw FormatError("truncated header");

  std::uint64_t payload = 1;
  std::vector<std::uint32_t> dims(ndims);
  for (std::size_t i = 0; i < ndims; ++i) {
    dims[i] = read_be32(bytes, 4 + 4 * i);
    constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 40;
    if (dims[i] != 0 && payload > kMaxPayload / dims[i]) throw FormatError("dimension overflow");
    payload *= dims[i];
  }
  if (bytes.size() - header < payload) throw FormatError("truncated payload");
  if (bytes.size() - header > payload) throw FormatError("trailing bytes after payload");

  const auto body = bytes.subspan(header);
  if (magic == kIdxLabelMagic) {
    IdxLabels out;
    out.labels.assign(body.begin(), body.end());
    return out;
  }
  IdxImages out;
  out.count = dims[0];
  out.rows = dims[1];
  out.cols = dims[2];
  out.pixels.assign(body.begin(), body.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  write_be32(out, kIdxImageMagic);
  write_be32(out, images.count);
  write_be32(out, images.rows);
  write_be32(out, images.cols);
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx(const IdxLabels& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.labels.size());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.labels.size()));
  out.insert(out.end(), labels.labels.begin(), labels.labels.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RawMnist make_raw_mnist(IdxImages images, IdxLabels labels) {
  if (images.count != labels.labels.size()) {
    throw FormatError("image count " + std::to_string(images.count) + " != label count " +
                      std::to_string(labels.labels.size()));
  }
  for (auto l : labels.labels) {
    if (l > 9) throw FormatError("label out of range: " + std::to_string(l));
  }
  return {std::move(images), std::move(labels)};
}

RawMnist load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels) {
  auto img = parse_idx(read_file_bytes(images));
  auto lab = parse_idx(read_file_bytes(labels));
  if (!std::holds_alternative<IdxImages>(img)) throw FormatError(images.string() + " is not an image file");
  if (!std::holds_alternative<IdxLabels>(lab)) throw FormatError(labels.string() + " is not a label file");
  return make_raw_mnist(std::get<IdxImages>(std::move(img)), std::get<IdxLabels>(std::move(lab)));
}

std::pair<std::filesystem::path, std::filesystem::path> find_mnist_files(
    const std::filesystem::path& dir) {
  for (const auto& [img, lab] : {std::pair{"train-images-idx3-ubyte", "train-labels-idx1-ubyte"},
                                 std::pair{"train-images.idx3-ubyte", "train-labels.idx1-ubyte"}}) {
    if (std::filesystem::exists(dir / img) && std::filesystem::exists(dir / lab)) {
      return {dir / img, dir / lab};
    }
  }
  throw std::runtime_error("MNIST training files not found in '" + dir.string() + "'");
}

void Dataset::validate() const {
  if (labels.size() != inputs.rows()) throw std::invalid_argument("label count does not match rows");
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1.0 && labels[i] != -1.0) throw std::invalid_argument("labels must be exactly -1 or +1");
  }
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  return perm;
}

std::pair<Dataset, Dataset> make_binary_task(const RawMnist& raw, std::size_t n_train,
                                             std::size_t n_val, std::uint64_t seed) {
  const std::size_t total = raw.labels.labels.size();
  if (n_train + n_val > total) {
    throw std::invalid_argument("insufficient samples: requested " + std::to_string(n_train + n_val) +
                                " of " + std::to_string(total));
  }
  const auto perm = seeded_permutation(total, seed);
  const std::size_t pixels = std::size_t{raw.images.rows} * raw.images.cols;

  auto build = [&](std::size_t first, std::size_t count) {
    Dataset d;
    d.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels + 1));
    d.labels.resize(static_cast<Eigen::Index>(count));
    for (std::size_t r = 0; r < count; ++r) {
      const std::size_t src = perm[first + r];
      const auto img = raw.images.image(src);
      const auto row = static_cast<Eigen::Index>(r);
      for (std::size_t p = 0; p < pixels; ++p) d.inputs(row, static_cast<Eigen::Index>(p)) = img[p] / 255.0;
      d.inputs(row, static_cast<Eigen::Index>(pixels)) = 1.0;
      d.labels[row] = digit_label(raw.labels.labels[src]);
    }
    return d;
  };
  return {build(0, n_train), build(n_train, n_val)};
}

SyntheticData gen_synthetic(std::size_t n, std::size_t d, double margin, std::uint64_t seed) {
  if (n < 1 || d < 1 || !(margin > 0)) throw std::invalid_argument("gen_synthetic: need n >= 1, d >= 1, margin > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> extra(2.0);

  const auto D = static_cast<Eigen::Index>(d);
  Vector w(D);
  for (Eigen::Index j = 0; j < D; ++j) w[j] = normal(rng);
  w /= w.norm();

  SyntheticData out;
  out.witness = w;
  out.data.inputs.resize(static_cast<Eigen::Index>(n), D);
  out.data.labels.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double y = (i % 2 == 0) ? 1.0 : -1.0;
    Vector x(D);
    for (Eigen::Index j = 0; j < D; ++j) x[j] = normal(rng);
    x -= w.dot(x) * w;
    x += y * (margin + extra(rng)) * w;
    out.data.inputs.row(r) = x.transpose();
    out.data.labels[r] = y;
  }
  return out;
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "row,label";
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << ",feat_" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    out << i << ',' << (data.labels[i] > 0 ? "1" : "-1");
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << ',' << fmt_double(data.inputs(i, j));
    out << '\n';
  }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_dataset_csv(out, data);
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty dataset file");
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "row" || header[1] != "label") {
    throw FormatError("dataset header must start with row,label");
  }
  const std::size_t dim = header.size() - 2;
  std::vector<double> values;
  std::vector<double> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != dim + 2) throw FormatError("ragged dataset row " + std::to_string(labels.size()));
    labels.push_back(parse_double(cells[1]));
    for (std::size_t j = 0; j < dim; ++j) values.push_back(parse_double(cells[j + 2]));
  }
  Dataset d;
  d.inputs = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                static_cast<Eigen::Index>(dim));
  d.labels = Eigen::Map<Vector>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  d.validate();
  return d;
}

}  // namespace glnbias
