#include "glnbias/models.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace glnbias {

namespace {

// Neumaier compensated sum; late-training per-sample losses span many decades.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

void check_rows(const Dataset& data, const ContextMatrix& contexts, Eigen::Index units) {
  if (contexts.rows() != data.size() || contexts.cols() != units) {
    throw std::invalid_argument("missing or misshaped contexts for gated model");
  }
}

void check_dim(Eigen::Index expected, Eigen::Index got) {
  if (expected != got) {
    throw std::invalid_argument("dimension mismatch: expected " + std::to_string(expected) + ", got " +
                                std::to_string(got));
  }
}

void check_gln_context(const TwoLayerGLN& m, const GlobalContext& gamma) {
  if (static_cast<int>(gamma.size()) != m.H) throw std::invalid_argument("context length must equal H");
  for (auto c : gamma) {
    if (c < 1 || c > m.C) throw std::invalid_argument("context out of range: " + std::to_string(c));
  }
}

// Per-sample dl/ds (s = unsigned score) and the accumulated loss.
double margin_weights(const Vector& score, const Vector& labels, LossKind kind, Vector& dscore) {
  CompensatedSum total;
  dscore.resize(score.size());
  for (Eigen::Index n = 0; n < score.size(); ++n) {
    const double u = labels[n] * score[n];
    total.add(loss_value(kind, u));
    dscore[n] = loss_derivative(kind, u) * labels[n];
  }
  return total.value();
}

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
  if (name == "exponential" || name == "exp") return LossKind::Exponential;
  if (name == "logistic" || name == "cross-entropy") return LossKind::Logistic;
  throw std::invalid_argument("unknown loss kind '" + std::string(name) + "'");
}

std::string_view to_string(LossKind kind) {
  return kind == LossKind::Exponential ? "exponential" : "logistic";
}

double loss_value(LossKind kind, double u) {
  if (kind == LossKind::Exponential) return std::exp(-u);
  return std::log1p(std::exp(-std::abs(u))) + std::max(-u, 0.0);
}

double loss_derivative(LossKind kind, double u) {
  if (kind == LossKind::Exponential) return -std::exp(-u);
  // -1 / (1 + e^u), written to avoid overflow on either side
  if (u >= 0) {
    const double e = std::exp(-u);
    return -e / (1.0 + e);
  }
  return -1.0 / (1.0 + std::exp(u));
}

TwoLayerGLN::TwoLayerGLN(int units, int contexts, Eigen::Index dim)
    : H(units), C(contexts), D(dim), params(Vector::Zero(Eigen::Index{units} * contexts * dim + units)) {}

ShallowGLN::ShallowGLN(Eigen::Index dim, const ContextMatrix& contexts) : D(dim) {
  for (Eigen::Index n = 0; n < contexts.rows(); ++n) {
    index.emplace(context_row(contexts, n), 0);
  }
  Eigen::Index r = 0;
  for (auto& [ctx, row] : index) row = r++;
  params = Vector::Zero(r * dim);
}

Eigen::Index ShallowGLN::find(const GlobalContext& g) const {
  const auto it = index.find(g);
  return it == index.end() ? -1 : it->second;
}

ReluNet::ReluNet(int units, Eigen::Index dim) : H(units), D(dim), params(Vector::Zero(Eigen::Index{units} * dim + units)) {}

FReluNet::FReluNet(int units, Eigen::Index dim) : H(units), D(dim), params(Vector::Zero(Eigen::Index{units} * dim)) {}

FReluNet freeze(const ReluNet& net) {
  FReluNet out(net.H, net.D);
  out.zeta() = net.readout().asDiagonal() * net.first();
  return out;
}

Vector gln_beta(const TwoLayerGLN& model, const GlobalContext& gamma) {
  check_gln_context(model, gamma);
  Vector beta = Vector::Zero(model.D);
  const auto w1 = model.w1();
  const auto w2 = model.w2();
  for (int h = 0; h < model.H; ++h) {
    beta += w2[h] * w1.row(model.row(h, gamma[static_cast<std::size_t>(h)])).transpose();
  }
  return beta;
}

double forward(const TwoLayerGLN& model, const Eigen::Ref<const Vector>& x, const GlobalContext& gamma) {
  check_dim(model.D, x.size());
  return gln_beta(model, gamma).dot(x);
}

double forward(const ShallowGLN& model, const Eigen::Ref<const Vector>& x, const GlobalContext& gamma) {
  check_dim(model.D, x.size());
  const auto r = model.find(gamma);
  return r < 0 ? 0.0 : model.table().row(r).dot(x);
}

double forward(const FReluNet& model, const Eigen::Ref<const Vector>& x, const GlobalContext& gates) {
  check_dim(model.D, x.size());
  if (static_cast<int>(gates.size()) != model.H) throw std::invalid_argument("gate vector length must equal H");
  double s = 0.0;
  const auto z = model.zeta();
  for (int h = 0; h < model.H; ++h) {
    if (gates[static_cast<std::size_t>(h)] != 0) s += z.row(h).dot(x);
  }
  return s;
}

double forward(const ReluNet& model, const Eigen::Ref<const Vector>& x) {
  check_dim(model.D, x.size());
  const Vector pre = model.first() * x;
  return model.readout().dot(pre.cwiseMax(0.0));
}

Vector scores(const TwoLayerGLN& model, const Matrix& inputs, const ContextMatrix& contexts) {
  check_dim(model.D, inputs.cols());
  if (contexts.rows() != inputs.rows() || contexts.cols() != model.H) {
    throw std::invalid_argument("missing or misshaped contexts for gated model");
  }
  const Matrix proj = model.w1() * inputs.transpose();  // (H*C) x N
  const auto w2 = model.w2();
  Vector s = Vector::Zero(inputs.rows());
  for (Eigen::Index n = 0; n < inputs.rows(); ++n) {
    double acc = 0.0;
    for (int h = 0; h < model.H; ++h) acc += w2[h] * proj(model.row(h, contexts(n, h)), n);
    s[n] = acc;
  }
  return s;
}

Vector scores(const ShallowGLN& model, const Matrix& inputs, const ContextMatrix& contexts) {
  check_dim(model.D, inputs.cols());
  if (contexts.rows() != inputs.rows()) throw std::invalid_argument("missing contexts for gated model");
  Vector s(inputs.rows());
  const auto table = model.table();
  for (Eigen::Index n = 0; n < inputs.rows(); ++n) {
    const auto r = model.find(context_row(contexts, n));
    s[n] = r < 0 ? 0.0 : table.row(r).dot(inputs.row(n));
  }
  return s;
}

Vector scores(const FReluNet& model, const Matrix& inputs, const ContextMatrix& contexts) {
  check_dim(model.D, inputs.cols());
  if (contexts.rows() != inputs.rows() || contexts.cols() != model.H) {
    throw std::invalid_argument("missing or misshaped gates for frozen-gate model");
  }
  const Matrix proj = inputs * model.zeta().transpose();  // N x H
  return (proj.array() * contexts.cast<double>().array()).rowwise().sum();
}

Vector scores(const ReluNet& model, const Matrix& inputs, const ContextMatrix&) {
  check_dim(model.D, inputs.cols());
  const Matrix pre = inputs * model.first().transpose();
  return pre.cwiseMax(0.0) * model.readout();
}

LossGrad loss_and_grad(const TwoLayerGLN& model, const Dataset& data, const ContextMatrix& contexts, LossKind kind) {
  check_dim(model.D, data.dim());
  check_rows(data, contexts, model.H);
  const Eigen::Index N = data.size();
  const Matrix proj = model.w1() * data.inputs.transpose();  // (H*C) x N
  const auto w2 = model.w2();

  Vector s = Vector::Zero(N);
  for (Eigen::Index n = 0; n < N; ++n) {
    double acc = 0.0;
    for (int h = 0; h < model.H; ++h) acc += w2[h] * proj(model.row(h, contexts(n, h)), n);
    s[n] = acc;
  }
  Vector ds;
  LossGrad out;
  out.loss = margin_weights(s, data.labels, kind, ds);

  out.grad = Vector::Zero(model.params.size());
  Matrix routed = Matrix::Zero(proj.rows(), N);
  auto g2 = out.grad.tail(model.H);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (int h = 0; h < model.H; ++h) {
      const auto r = model.row(h, contexts(n, h));
      g2[h] += ds[n] * proj(r, n);
      routed(r, n) = ds[n] * w2[h];
    }
  }
  Eigen::Map<Matrix>(out.grad.data(), proj.rows(), model.D) = routed * data.inputs;
  return out;
}

LossGrad loss_and_grad(const ShallowGLN& model, const Dataset& data, const ContextMatrix& contexts, LossKind kind) {
  check_dim(model.D, data.dim());
  if (contexts.rows() != data.size()) throw std::invalid_argument("missing contexts for gated model");
  const Eigen::Index N = data.size();
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(N));
  Vector s = Vector::Zero(N);
  const auto table = model.table();
  for (Eigen::Index n = 0; n < N; ++n) {
    rows[static_cast<std::size_t>(n)] = model.find(context_row(contexts, n));
    if (rows[static_cast<std::size_t>(n)] >= 0) s[n] = table.row(rows[static_cast<std::size_t>(n)]).dot(data.inputs.row(n));
  }
  Vector ds;
  LossGrad out;
  out.loss = margin_weights(s, data.labels, kind, ds);
  out.grad = Vector::Zero(model.params.size());
  Eigen::Map<Matrix> g(out.grad.data(), model.rows(), model.D);
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto r = rows[static_cast<std::size_t>(n)];
    if (r >= 0) g.row(r) += ds[n] * data.inputs.row(n);
  }
  return out;
}

LossGrad loss_and_grad(const FReluNet& model, const Dataset& data, const ContextMatrix& contexts, LossKind kind) {
  check_dim(model.D, data.dim());
  check_rows(data, contexts, model.H);
  const Matrix gates = contexts.cast<double>();
  const Vector s = scores(model, data.inputs, contexts);
  Vector ds;
  LossGrad out;
  out.loss = margin_weights(s, data.labels, kind, ds);
  out.grad.resize(model.params.size());
  const Matrix routed = gates.array().colwise() * ds.array();  // N x H
  Eigen::Map<Matrix>(out.grad.data(), model.H, model.D) = routed.transpose() * data.inputs;
  return out;
}

LossGrad loss_and_grad(const ReluNet& model, const Dataset& data, const ContextMatrix&, LossKind kind) {
  check_dim(model.D, data.dim());
  const Matrix pre = data.inputs * model.first().transpose();  // N x H
  const Matrix act = pre.cwiseMax(0.0);
  const Vector s = act * model.readout();
  Vector ds;
  LossGrad out;
  out.loss = margin_weights(s, data.labels, kind, ds);
  out.grad.resize(model.params.size());
  out.grad.tail(model.H) = act.transpose() * ds;
  Matrix routed = (pre.array() > 0.0).cast<double>();
  routed = routed.array().colwise() * ds.array();
  routed = routed.array().rowwise() * model.readout().transpose().array();
  Eigen::Map<Matrix>(out.grad.data(), model.H, model.D) = routed.transpose() * data.inputs;
  return out;
}

GlnZeta w_to_zeta(const TwoLayerGLN& model) {
  GlnZeta z{model.H, model.C, Matrix(model.w1())};
  const auto w2 = model.w2();
  for (int h = 0; h < model.H; ++h) z.zeta.middleRows(Eigen::Index{h} * model.C, model.C) *= w2[h];
  return z;
}

TwoLayerGLN zeta_to_w(const GlnZeta& zeta) {
  if (!zeta.zeta.allFinite()) throw std::invalid_argument("zeta must be finite");
  TwoLayerGLN m(zeta.H, zeta.C, zeta.dim());
  auto w1 = m.w1();
  auto w2 = m.w2();
  for (int h = 0; h < zeta.H; ++h) {
    const double norm = zeta.block_norm(h);
    const auto rows = zeta.zeta.middleRows(Eigen::Index{h} * zeta.C, zeta.C);
    if (norm == 0.0) {
      w2[h] = 0.0;
      w1.middleRows(Eigen::Index{h} * zeta.C, zeta.C).setZero();
      continue;
    }
    const double root = std::sqrt(norm);
    w2[h] = root;
    w1.middleRows(Eigen::Index{h} * zeta.C, zeta.C) = rows / root;
  }
  return m;
}

Eigen::Index context_count(int H, int C, Eigen::Index cap) {
  Eigen::Index n = 1;
  for (int h = 0; h < H; ++h) {
    n *= C;
    if (n > cap) return -1;
  }
  return n;
}

Eigen::Index BetaTable::index(const GlobalContext& gamma) const {
  if (static_cast<int>(gamma.size()) != H) throw std::invalid_argument("context length must equal H");
  Eigen::Index idx = 0;
  for (int h = H - 1; h >= 0; --h) {
    const auto c = gamma[static_cast<std::size_t>(h)];
    if (c < 1 || c > C) throw std::invalid_argument("context out of range");
    idx = idx * C + (c - 1);
  }
  return idx;
}

GlobalContext BetaTable::context(Eigen::Index index) const {
  GlobalContext g(static_cast<std::size_t>(H));
  for (int h = 0; h < H; ++h) {
    g[static_cast<std::size_t>(h)] = static_cast<std::int32_t>(index % C) + 1;
    index /= C;
  }
  return g;
}

BetaTable beta_table(const GlnZeta& zeta) {
  const auto count = context_count(zeta.H, zeta.C);
  if (count < 0) throw std::invalid_argument("C^H exceeds the beta table cap; evaluate beta_gamma on demand");
  BetaTable t{zeta.H, zeta.C, Matrix::Zero(count, zeta.dim())};
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto g = t.context(i);
    for (int h = 0; h < zeta.H; ++h) {
      t.values.row(i) += zeta.zeta.row(Eigen::Index{h} * zeta.C + g[static_cast<std::size_t>(h)] - 1);
    }
  }
  return t;
}

BetaTable beta_table(const TwoLayerGLN& model) { return beta_table(w_to_zeta(model)); }

std::string_view family_name(const AnyModel& model) {
  struct Visitor {
    std::string_view operator()(const TwoLayerGLN&) const { return "gln"; }
    std::string_view operator()(const ShallowGLN&) const { return "shallow"; }
    std::string_view operator()(const ReluNet&) const { return "relu"; }
    std::string_view operator()(const FReluNet&) const { return "frelu"; }
  };
  return std::visit(Visitor{}, model);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::ordered_json j;
  j["schema"] = 1;
  j["family"] = family_name(ckpt.model);
  j["loss"] = to_string(ckpt.loss);
  j["contexts"] = ckpt.contexts;
  const Vector* params = nullptr;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        params = &m.params;
        if constexpr (std::is_same_v<T, TwoLayerGLN>) {
          j["shapes"] = {{"H", m.H}, {"C", m.C}, {"D", m.D}};
        } else if constexpr (std::is_same_v<T, ShallowGLN>) {
          j["shapes"] = {{"rows", m.rows()}, {"D", m.D}};
          nlohmann::json table = nlohmann::json::array();
          std::vector<GlobalContext> order(static_cast<std::size_t>(m.rows()));
          for (const auto& [g, r] : m.index) order[static_cast<std::size_t>(r)] = g;
          for (const auto& g : order) table.push_back(g);
          j["context_rows"] = table;
        } else {
          j["shapes"] = {{"H", m.H}, {"D", m.D}};
        }
      },
      ckpt.model);
  j["params"] = std::vector<double>(params->data(), params->data() + params->size());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto j = nlohmann::json::parse(in);
  Checkpoint ckpt;
  ckpt.loss = parse_loss_kind(j.at("loss").get<std::string>());
  ckpt.contexts = j.value("contexts", std::string{});
  const auto family = j.at("family").get<std::string>();
  const auto raw = j.at("params").get<std::vector<double>>();
  const Vector params = Eigen::Map<const Vector>(raw.data(), static_cast<Eigen::Index>(raw.size()));
  const auto& shapes = j.at("shapes");
  auto assign = [&](auto model) {
    if (model.params.size() != params.size()) throw FormatError("checkpoint params do not match shapes");
    model.params = params;
    ckpt.model = std::move(model);
  };
  if (family == "gln") {
    assign(TwoLayerGLN(shapes.at("H").get<int>(), shapes.at("C").get<int>(), shapes.at("D").get<Eigen::Index>()));
  } else if (family == "relu") {
    assign(ReluNet(shapes.at("H").get<int>(), shapes.at("D").get<Eigen::Index>()));
  } else if (family == "frelu") {
    assign(FReluNet(shapes.at("H").get<int>(), shapes.at("D").get<Eigen::Index>()));
  } else if (family == "shallow") {
    ShallowGLN m;
    m.D = shapes.at("D").get<Eigen::Index>();
    Eigen::Index r = 0;
    for (const auto& g : j.at("context_rows")) m.index.emplace(g.get<GlobalContext>(), r++);
    m.params = Vector::Zero(r * m.D);
    assign(std::move(m));
  } else {
    throw FormatError("unknown model family '" + family + "'");
  }
  return ckpt;
}

int homogeneity_degree(const AnyModel& model) {
  return std::holds_alternative<TwoLayerGLN>(model) || std::holds_alternative<ReluNet>(model) ? 2 : 1;
}

const Vector& parameters(const AnyModel& model) {
  return std::visit([](const auto& m) -> const Vector& { return m.params; }, model);
}

Vector& parameters(AnyModel& model) {
  return std::visit([](auto& m) -> Vector& { return m.params; }, model);
}

Vector scores(const AnyModel& model, const Matrix& inputs, const ContextMatrix& contexts) {
  return std::visit([&](const auto& m) { return scores(m, inputs, contexts); }, model);
}

LossGrad loss_and_grad(const AnyModel& model, const Dataset& data, const ContextMatrix& contexts, LossKind kind) {
  return std::visit([&](const auto& m) { return loss_and_grad(m, data, contexts, kind); }, model);
}

}  // namespace glnbias
