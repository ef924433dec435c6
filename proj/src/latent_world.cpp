#include "m3dm/latent_world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "m3dm/errors.hpp"
#include "m3dm/parallel.hpp"

namespace m3dm {
namespace {

constexpr std::uint64_t kNormalsStream = 0x6e6f726d616c73ULL;
constexpr std::uint64_t kGeneratorStream = 0x67656e6572ULL;

VectorXd gaussian_vector(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> gauss(0.0, stddev);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

void require_finite(const VectorXd& v, const char* what) {
  if (!v.allFinite()) throw NumericalError(std::string("non-finite values in ") + what);
}

void require_unit(const VectorXd& u, const char* what) {
  if (std::abs(u.norm() - 1.0) > 1e-12) throw ContractError(std::string(what) + " must be unit length");
}

}  // namespace

const char* to_string(GeneratorMode m) { return m == GeneratorMode::linear ? "linear" : "nonlinear"; }

GeneratorMode generator_mode_from_string(std::string_view s) {
  if (s == "linear") return GeneratorMode::linear;
  if (s == "nonlinear") return GeneratorMode::nonlinear;
  throw ContractError("unknown generator mode '" + std::string(s) + "'");
}

const AttributeDef& LatentWorld::attribute(std::string_view name) const {
  for (const auto& a : attributes)
    if (a.name == name) return a;
  throw ContractError("unknown attribute '" + std::string(name) + "'");
}

void LatentWorld::validate() const {
  if (d < 1) throw ContractError("latent dimension must be positive");
  const auto& g = generator;
  if (g.C.cols() != d || g.bias.size() != g.C.rows())
    throw ContractError("generator linear part does not match latent dimension");
  if (g.mode == GeneratorMode::nonlinear &&
      (g.B.cols() != d || g.A.cols() != g.B.rows() || g.A.rows() != g.C.rows()))
    throw ContractError("generator nonlinear part has inconsistent shapes");
  for (const auto& a : attributes) {
    if (a.u_true.size() != d) throw ContractError("attribute normal has wrong dimension: " + a.name);
    require_unit(a.u_true, "attribute normal");
    if (!(a.s_max > 0.0)) throw ContractError("s_max must be positive for " + a.name);
  }
}

std::vector<std::string> default_attribute_names(int count) {
  static const char* kNames[] = {"asian",       "attractive",    "big_lips",        "black",
                                 "bushy_eyebrows", "chubby",     "high_cheekbones", "hispanic",
                                 "indian",      "makeup",        "male",            "narrow_eyes",
                                 "no_beard",    "pointy_nose",   "rosy_cheeks",     "white",
                                 "young"};
  std::vector<std::string> names;
  for (int i = 0; i < count; ++i)
    names.push_back(i < 17 ? kNames[i] : "attr_" + std::to_string(i));
  return names;
}

LatentWorld make_world(const WorldConfig& cfg) {
  if (cfg.latent_dim < 2) throw ContractError("latent_dim must be at least 2");
  if (cfg.k_flat < 1) throw ContractError("k_flat must be positive");
  if (cfg.generator_hidden < 1) throw ContractError("generator_hidden must be positive");
  if (cfg.attribute_names.empty()) throw ContractError("world needs at least one attribute");
  if (!cfg.s_max.empty() && cfg.s_max.size() != cfg.attribute_names.size())
    throw ContractError("s_max list must have one entry per attribute");

  LatentWorld world;
  world.d = cfg.latent_dim;
  world.seed = cfg.seed;

  Rng normals_rng(mix64(cfg.seed, kNormalsStream));
  const double max_cos = std::cos(cfg.min_angle_deg * std::numbers::pi / 180.0);
  std::uniform_real_distribution<double> bias_draw(-cfg.hyperplane_bias_range, cfg.hyperplane_bias_range);
  for (std::size_t a = 0; a < cfg.attribute_names.size(); ++a) {
    VectorXd u;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000)
        throw ContractError("cannot place attribute normals with the requested minimum angle");
      u = gaussian_vector(normals_rng, cfg.latent_dim).normalized();
      const bool ok = std::all_of(world.attributes.begin(), world.attributes.end(),
                                  [&](const AttributeDef& o) { return std::abs(u.dot(o.u_true)) <= max_cos; });
      if (ok) break;
    }
    AttributeDef def;
    def.name = cfg.attribute_names[a];
    def.u_true = std::move(u);
    def.bias = cfg.hyperplane_bias_range > 0.0 ? bias_draw(normals_rng) : 0.0;
    def.s_max = cfg.s_max.empty() ? 2.0 : cfg.s_max[a];
    world.attributes.push_back(std::move(def));
  }

  Rng gen_rng(mix64(cfg.seed, kGeneratorStream));
  const double d = cfg.latent_dim;
  const double h = cfg.generator_hidden;
  auto& g = world.generator;
  g.mode = cfg.mode;
  g.C = gaussian_matrix(gen_rng, cfg.k_flat, cfg.latent_dim, cfg.linear_scale / std::sqrt(d));
  g.B = gaussian_matrix(gen_rng, cfg.generator_hidden, cfg.latent_dim, cfg.hidden_scale / std::sqrt(d));
  g.A = gaussian_matrix(gen_rng, cfg.k_flat, cfg.generator_hidden, cfg.output_scale / std::sqrt(h));
  g.bias = gaussian_matrix(gen_rng, cfg.k_flat, 1, cfg.bias_std).col(0);
  world.validate();
  return world;
}

VectorXd generate(const LatentWorld& world, const VectorXd& w) {
  if (w.size() != world.d)
    throw ContractError("latent has dimension " + std::to_string(w.size()) + ", world expects " +
                        std::to_string(world.d));
  const auto& g = world.generator;
  VectorXd p = g.bias;
  p.noalias() += g.C * w;
  if (g.mode == GeneratorMode::nonlinear) {
    const VectorXd hidden = (g.B * w).array().tanh().matrix();
    p.noalias() += g.A * hidden;
  }
  return p;
}

int label(const LatentWorld& world, std::string_view attribute, const VectorXd& w) {
  const auto& a = world.attribute(attribute);
  if (w.size() != world.d) throw ContractError("latent dimension mismatch in label()");
  return (w.dot(a.u_true) - a.bias) >= 0.0 ? 1 : -1;
}

AttributeHyperplane true_hyperplane(const AttributeDef& attr) {
  return AttributeHyperplane{attr.u_true, attr.bias, 1.0};
}

AttributeHyperplane fit_hyperplane(std::span<const LabeledLatent> samples, const SvmConfig& cfg) {
  if (samples.size() < 2) throw ContractError("hyperplane fit needs at least 2 samples");
  if (!(cfg.lambda > 0.0) || cfg.iterations < 2) throw ContractError("invalid SVM config");
  const Eigen::Index d = samples.front().w.size();
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  MatrixXd X(d, n);
  VectorXd y(n);
  bool has_pos = false, has_neg = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.w.size() != d) throw ContractError("labeled latents have inconsistent dimensions");
    if (!s.w.allFinite()) throw NumericalError("non-finite feature in hyperplane samples");
    if (s.label != 1 && s.label != -1) throw ContractError("labels must be +1 or -1");
    X.col(i) = s.w;
    y[i] = s.label;
    (s.label > 0 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) throw ContractError("hyperplane fit needs both classes present");

  const double radius = 1.0 / std::sqrt(cfg.lambda);
  VectorXd w = VectorXd::Zero(d);
  double beta = 0.0;
  VectorXd w_avg = VectorXd::Zero(d);
  double beta_avg = 0.0;
  int averaged = 0;
  const int burn_in = cfg.iterations / 2;
  for (int t = 1; t <= cfg.iterations; ++t) {
    const double eta = 1.0 / (cfg.lambda * t);
    const VectorXd margins = (y.array() * ((X.transpose() * w).array() + beta)).matrix();
    VectorXd coeff = VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
      if (margins[i] < 1.0) coeff[i] = y[i];
    const VectorXd grad_w = cfg.lambda * w - (X * coeff) / static_cast<double>(n);
    const double grad_b = -coeff.sum() / static_cast<double>(n);
    w -= eta * grad_w;
    beta -= eta * grad_b;
    const double norm = w.norm();
    if (norm > radius) w *= radius / norm;
    if (t > burn_in) {
      w_avg += w;
      beta_avg += beta;
      ++averaged;
    }
  }
  w_avg /= averaged;
  beta_avg /= averaged;
  const double norm = w_avg.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericalError("SVM produced a degenerate normal");

  AttributeHyperplane h;
  h.normal = w_avg / norm;
  h.bias = -beta_avg / norm;
  int correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int pred = X.col(i).dot(h.normal) - h.bias >= 0.0 ? 1 : -1;
    if (pred == static_cast<int>(y[i])) ++correct;
  }
  h.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return h;
}

VectorXd project_to_hyperplane(const VectorXd& w, const AttributeHyperplane& h) {
  require_finite(w, "latent");
  return w - (w.dot(h.normal) - h.bias) * h.normal;
}

double semantic_score(const VectorXd& w, const AttributeHyperplane& h) { return w.dot(h.normal) - h.bias; }

PairedSample sample_pair(const LatentWorld& world, const AttributeHyperplane& h,
                         std::string_view attribute, Rng& rng) {
  const auto& attr = world.attribute(attribute);
  if (h.normal.size() != world.d) throw ContractError("hyperplane dimension does not match the world");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PairedSample s;
  s.w_proj = project_to_hyperplane(gaussian_vector(rng, world.d), h);
  const double s_pos = attr.s_max * (1.0 - unit(rng));   // (0, s_max]
  const double s_neg = -attr.s_max * (1.0 - unit(rng));  // [-s_max, 0)
  const VectorXd w_pos = s.w_proj + s_pos * h.normal;
  const VectorXd w_neg = s.w_proj + s_neg * h.normal;
  s.s_pos = semantic_score(w_pos, h);
  s.s_neg = semantic_score(w_neg, h);
  s.p_pos = generate(world, w_pos);
  s.p_neg = generate(world, w_neg);
  return s;
}

PairedDataset generate_pairs(const LatentWorld& world, const AttributeHyperplane& h,
                             std::string_view attribute, std::size_t n, std::uint64_t dataset_seed,
                             int jobs) {
  PairedDataset ds;
  ds.attribute = std::string(attribute);
  ds.seed = dataset_seed;
  ds.hyperplane = h;
  ds.s_max = world.attribute(attribute).s_max;
  ds.samples.resize(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    Rng rng = sample_rng(dataset_seed, i);
    ds.samples[i] = sample_pair(world, h, attribute, rng);
    ds.samples[i].id = i;
  });
  return ds;
}

std::vector<LabeledLatent> sample_labeled(const LatentWorld& world, std::string_view attribute,
                                          std::size_t n, double margin, std::uint64_t seed) {
  const auto& attr = world.attribute(attribute);
  Rng rng(seed);
  std::vector<LabeledLatent> out;
  out.reserve(n);
  while (out.size() < n) {
    VectorXd w = gaussian_vector(rng, world.d);
    const double dist = w.dot(attr.u_true) - attr.bias;
    if (margin > 0.0 && std::abs(dist) < margin) continue;
    out.push_back({std::move(w), dist >= 0.0 ? 1 : -1});
  }
  return out;
}

double angle_degrees(const VectorXd& a, const VectorXd& b) {
  const double c = std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

}  // namespace m3dm
