#include "glnbias/kkt.hpp"

#include "glnbias/gating.hpp"
#include "glnbias/nnls.hpp"

#include <json.hpp>

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace glnbias {

namespace {

using Key = std::vector<std::int32_t>;

std::vector<Key> lifted_keys(const LiftedProblem& p) {
  std::vector<Key> keys(static_cast<std::size_t>(p.size()));
  for (Eigen::Index n = 0; n < p.size(); ++n) {
    for (Eigen::Index b = 0; b < p.blocks(); ++b) {
      if (p.gates(n, b) != 0.0) keys[static_cast<std::size_t>(n)].push_back(static_cast<std::int32_t>(b));
    }
  }
  return keys;
}

std::vector<Key> context_keys(const ContextMatrix& contexts, Eigen::Index n_rows) {
  std::vector<Key> keys(static_cast<std::size_t>(n_rows));
  if (contexts.rows() != n_rows) return keys;  // single context
  for (Eigen::Index n = 0; n < n_rows; ++n) keys[static_cast<std::size_t>(n)] = context_row(contexts, n);
  return keys;
}

// Per-context supports on already normalized margins.
void find_supports(const Vector& margins, const std::vector<Key>& keys, double tol, KKTReport& rep) {
  std::map<Key, double> least;
  for (Eigen::Index n = 0; n < margins.size(); ++n) {
    auto [it, fresh] = least.emplace(keys[static_cast<std::size_t>(n)], margins[n]);
    if (!fresh) it->second = std::min(it->second, margins[n]);
  }
  for (Eigen::Index n = 0; n < margins.size(); ++n) {
    const auto& key = keys[static_cast<std::size_t>(n)];
    const double m = least.at(key);
    if (std::abs(margins[n] - m) <= tol * m) {
      rep.supports[key].push_back(n);
      rep.support.push_back(n);
    }
  }
  if (rep.support.empty()) throw std::runtime_error("empty support set: margin_tol too small");
}

// NNLS on the support given the Gram matrix and correlations of the
// support columns with the target.
Vector support_multipliers(const Eigen::MatrixXd& gram, const Vector& atb, const KKTOptions& opt) {
  const auto r = nnls_gram(gram, atb, 1e-14);
  Vector x = min_norm_refine(gram, atb, r.x);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] < opt.dual_tol) x[i] = 0.0;
  }
  return x;
}

LiftedProblem restrict_rows(const LiftedProblem& p, const std::vector<Eigen::Index>& idx) {
  LiftedProblem s = p;
  const auto k = static_cast<Eigen::Index>(idx.size());
  s.gates.resize(k, p.blocks());
  s.rows.resize(k, p.dim());
  s.rhs.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto n = idx[static_cast<std::size_t>(i)];
    s.gates.row(i) = p.gates.row(n);
    s.rows.row(i) = p.rows.row(n);
    s.rhs[i] = p.rhs[n];
  }
  return s;
}

double complementarity(const Vector& margins, const Vector& lambda) {
  double worst = 0.0;
  for (Eigen::Index n = 0; n < margins.size(); ++n) worst = std::max(worst, lambda[n] * std::abs(margins[n] - 1.0));
  return worst;
}

}  // namespace

double margin_scale(const Vector& margins, const std::vector<Key>& keys, int nu) {
  std::map<Key, double> least;
  for (Eigen::Index n = 0; n < margins.size(); ++n) {
    if (!(margins[n] > 0.0)) throw std::domain_error("not separated: sample " + std::to_string(n) + " has margin <= 0");
    auto [it, fresh] = least.emplace(keys[static_cast<std::size_t>(n)], margins[n]);
    if (!fresh) it->second = std::min(it->second, margins[n]);
  }
  if (least.empty()) throw std::domain_error("not separated: no samples");
  double alpha = 0.0;
  for (const auto& [key, m] : least) alpha = std::max(alpha, std::pow(m, -1.0 / nu));
  return alpha;
}

AnyModel margin_normalize(const AnyModel& model, const Dataset& data, const ContextMatrix& contexts) {
  const Vector margins = data.labels.cwiseProduct(scores(model, data.inputs, contexts));
  const int nu = homogeneity_degree(model);
  const double alpha = margin_scale(margins, context_keys(contexts, data.size()), nu);
  AnyModel out = model;
  parameters(out) *= alpha;
  return out;
}

KKTReport kkt_certify(const LiftedProblem& p, const Matrix& zeta_in, const KKTOptions& opt) {
  p.validate();
  if (p.equality) throw std::invalid_argument("kkt_certify handles margin programs");
  const auto keys = lifted_keys(p);
  KKTReport rep;
  const Vector raw = p.apply(zeta_in).cwiseQuotient(p.rhs);
  rep.scale = margin_scale(raw, keys, 1);
  const Matrix zeta = rep.scale * zeta_in;
  const Vector margins = rep.scale * raw;
  find_supports(margins, keys, opt.margin_tol, rep);
  const LiftedProblem sp = restrict_rows(p, rep.support);

  Matrix target;
  Matrix block_metric;
  Matrix scaled_zeta;  // the correlations are <Phi_n, scaled_zeta>
  if (p.objective == Objective::GroupLasso) {
    Vector weight = Vector::Zero(p.blocks());
    for (const auto& g : p.groups) {
      double s = 0.0;
      for (auto b : g) s += zeta.row(b).squaredNorm();
      for (auto b : g) weight[b] = std::sqrt(s);
    }
    target = zeta;
    block_metric = weight.cwiseAbs2().asDiagonal();
    scaled_zeta = weight.asDiagonal() * zeta;
    const Vector lam = support_multipliers(sp.kernel(block_metric), sp.apply(scaled_zeta), opt);
    rep.lambda = Vector::Zero(p.size());
    for (std::size_t i = 0; i < rep.support.size(); ++i) rep.lambda[rep.support[i]] = lam[static_cast<Eigen::Index>(i)];
    const Matrix expr = weight.asDiagonal() * p.apply_transpose(rep.lambda);
    rep.residual = (target - expr).norm() / std::max(target.norm(), 1e-300);
  } else {
    target = p.quad_structure() * zeta;
    const Vector lam = support_multipliers(sp.kernel(), sp.apply(target), opt);
    rep.lambda = Vector::Zero(p.size());
    for (std::size_t i = 0; i < rep.support.size(); ++i) rep.lambda[rep.support[i]] = lam[static_cast<Eigen::Index>(i)];
    rep.residual = (target - p.apply_transpose(rep.lambda)).norm() / std::max(target.norm(), 1e-300);
  }
  rep.complementarity = complementarity(margins, rep.lambda);
  return rep;
}

KKTReport kkt_certify(const TwoLayerGLN& model_in, const Dataset& data, const ContextMatrix& contexts, const KKTOptions& opt) {
  if (contexts.rows() != data.size() || contexts.cols() != model_in.H) throw std::invalid_argument("kkt_certify: misshaped contexts");
  const auto keys = context_keys(contexts, data.size());
  KKTReport rep;
  const Vector raw = data.labels.cwiseProduct(scores(model_in, data.inputs, contexts));
  rep.scale = margin_scale(raw, keys, 2);
  TwoLayerGLN model = model_in;
  model.params *= rep.scale;
  const Vector margins = raw * rep.scale * rep.scale;
  find_supports(margins, keys, opt.margin_tol, rep);

  const auto k = static_cast<Eigen::Index>(rep.support.size());
  const int H = model.H;
  const Eigen::Index HC = Eigen::Index{H} * model.C;
  Matrix signed_x(k, model.D);
  Matrix routed = Matrix::Zero(k, HC);  // one-hot (h, gamma_h) weighted by w2_h
  Matrix unit_out(k, H);                 // y_n <w1_{h gamma_h}, x_n>
  const auto w1 = model.w1();
  const auto w2 = model.w2();
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto n = rep.support[static_cast<std::size_t>(i)];
    signed_x.row(i) = data.labels[n] * data.inputs.row(n);
    for (int h = 0; h < H; ++h) {
      const auto r = model.row(h, contexts(n, h));
      routed(i, r) = w2[h];
      unit_out(i, h) = w1.row(r).dot(signed_x.row(i));
    }
  }
  const Eigen::MatrixXd gram = (signed_x * signed_x.transpose()).cwiseProduct(routed * routed.transpose()) +
                               unit_out * unit_out.transpose();
  const Vector atb = 2.0 * Vector(margins(Eigen::Map<const Eigen::Matrix<Eigen::Index, Eigen::Dynamic, 1>>(
                                       rep.support.data(), k)));
  const Vector lam = support_multipliers(gram, atb, opt);

  rep.lambda = Vector::Zero(data.size());
  for (Eigen::Index i = 0; i < k; ++i) rep.lambda[rep.support[static_cast<std::size_t>(i)]] = lam[i];
  // explicit sum_n lambda_n grad_w(y_n f_n)
  Vector expr = Vector::Zero(model.params.size());
  Eigen::Map<Matrix> e1(expr.data(), HC, model.D);
  auto e2 = expr.tail(H);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (lam[i] == 0.0) continue;
    const auto n = rep.support[static_cast<std::size_t>(i)];
    for (int h = 0; h < H; ++h) {
      const auto r = model.row(h, contexts(n, h));
      e1.row(r) += lam[i] * w2[h] * signed_x.row(i);
      e2[h] += lam[i] * unit_out(i, h);
    }
  }
  rep.residual = (model.params - expr).norm() / std::max(model.params.norm(), 1e-300);
  rep.complementarity = complementarity(margins, rep.lambda);
  return rep;
}

KKTReport kkt_certify(const AnyModel& model, const Dataset& data, const ContextMatrix& contexts, const KKTOptions& opt) {
  if (const auto* g = std::get_if<TwoLayerGLN>(&model)) return kkt_certify(*g, data, contexts, opt);

  auto remap = [&](const LiftedProblem& p, KKTReport rep) {
    KKTReport out;
    out.scale = rep.scale;
    out.residual = rep.residual;
    out.complementarity = rep.complementarity;
    out.lambda = Vector::Zero(data.size());
    for (Eigen::Index r = 0; r < p.size(); ++r) out.lambda[p.sample_index[static_cast<std::size_t>(r)]] = rep.lambda[r];
    for (auto r : rep.support) out.support.push_back(p.sample_index[static_cast<std::size_t>(r)]);
    for (auto& [key, rows] : rep.supports) {
      auto& dst = out.supports[key];
      for (auto r : rows) dst.push_back(p.sample_index[static_cast<std::size_t>(r)]);
    }
    return out;
  };

  if (const auto* r = std::get_if<ReluNet>(&model)) {
    const ContextMatrix gates = relu_gates(Matrix(r->first()), data.inputs);
    const auto p = lift(data, gates, LiftFamily::Frelu, Objective::GroupLasso);
    const FReluNet frozen = freeze(*r);
    return remap(p, kkt_certify(p, Matrix(frozen.zeta()), opt));
  }
  if (const auto* f = std::get_if<FReluNet>(&model)) {
    const auto p = lift(data, contexts, LiftFamily::Frelu, Objective::GroupLasso);
    return remap(p, kkt_certify(p, Matrix(f->zeta()), opt));
  }
  const auto& s = std::get<ShallowGLN>(model);
  const auto p = lift(data, contexts, LiftFamily::Shallow, Objective::PlainL2);
  Matrix zeta = Matrix::Zero(p.blocks(), p.dim());
  for (Eigen::Index b = 0; b < p.blocks(); ++b) {
    const auto row = s.find(p.block_contexts[static_cast<std::size_t>(b)]);
    if (row >= 0) zeta.row(b) = s.table().row(row);
  }
  return remap(p, kkt_certify(p, zeta, opt));
}

void write_kkt_json(std::ostream& out, const KKTReport& rep) {
  nlohmann::ordered_json j;
  j["scale"] = rep.scale;
  j["residual"] = rep.residual;
  j["complementarity"] = rep.complementarity;
  j["support"] = rep.support;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& [key, rows] : rep.supports) per.push_back({{"context", key}, {"samples", rows}});
  j["supports"] = per;
  j["lambda"] = std::vector<double>(rep.lambda.data(), rep.lambda.data() + rep.lambda.size());
  out << j.dump(1) << '\n';
}

}  // namespace glnbias
