#pragma once

// Synthetic latent space with known attribute hyperplanes, a generator from
// latents to 3DMM coefficients, linear-SVM hyperplane estimation and the
// paired-sample construction (project onto the boundary, shift by a score).

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "m3dm/random.hpp"

namespace m3dm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct AttributeDef {
  std::string name;
  VectorXd u_true;  // unit normal
  double bias = 0.0;
  double s_max = 2.0;
};

enum class GeneratorMode { linear, nonlinear };

const char* to_string(GeneratorMode m);
GeneratorMode generator_mode_from_string(std::string_view s);

/// p = A * tanh(B * w) + C * w + bias   (nonlinear)
/// p = C * w + bias                     (linear)
struct GeneratorSpec {
  GeneratorMode mode = GeneratorMode::nonlinear;
  MatrixXd A;  // k x h
  MatrixXd B;  // h x d
  MatrixXd C;  // k x d
  VectorXd bias;
};

struct LatentWorld {
  int d = 0;
  std::vector<AttributeDef> attributes;
  GeneratorSpec generator;
  std::uint64_t seed = 0;

  int k() const { return static_cast<int>(generator.C.rows()); }
  /// Throws ContractError for unknown names.
  const AttributeDef& attribute(std::string_view name) const;
  void validate() const;
};

struct WorldConfig {
  std::uint64_t seed = 1;
  int latent_dim = 32;
  int k_flat = 40;  // must equal k_id + k_expr + k_tex of the basis
  GeneratorMode mode = GeneratorMode::nonlinear;
  int generator_hidden = 32;
  double linear_scale = 1.0;  // per-coordinate std of C * w
  double hidden_scale = 1.0;  // per-coordinate std of B * w (saturation strength)
  double output_scale = 2.0;  // per-coordinate std of A * tanh(.)
  double bias_std = 0.1;
  double min_angle_deg = 30.0;
  double hyperplane_bias_range = 0.2;  // biases drawn uniformly in [-r, r]
  std::vector<std::string> attribute_names;
  std::vector<double> s_max;  // empty: 2.0 for every attribute; else one per attribute
};

std::vector<std::string> default_attribute_names(int count);

LatentWorld make_world(const WorldConfig& cfg);

/// Generator output (statistical part of FaceParams, flat order).
VectorXd generate(const LatentWorld& world, const VectorXd& w);

/// Oracle classifier from the ground-truth hyperplane; exact zero maps to +1.
int label(const LatentWorld& world, std::string_view attribute, const VectorXd& w);

struct AttributeHyperplane {
  VectorXd normal;  // unit length
  double bias = 0.0;
  double train_accuracy = 0.0;
};

struct LabeledLatent {
  VectorXd w;
  int label = 1;
};

struct SvmConfig {
  double lambda = 1e-3;
  int iterations = 2000;
};

/// Linear SVM by full-batch Pegasos-style subgradient descent on the
/// regularized hinge loss. The schedule is deterministic and depends on the
/// samples only through their empirical mean loss, so duplicating every sample
/// leaves the result unchanged up to summation rounding.
AttributeHyperplane fit_hyperplane(std::span<const LabeledLatent> samples, const SvmConfig& cfg = {});

/// The hyperplane the oracle classifier uses, for direct-from-truth runs.
AttributeHyperplane true_hyperplane(const AttributeDef& attr);

/// w - (w.u - b) u
VectorXd project_to_hyperplane(const VectorXd& w, const AttributeHyperplane& h);

/// Signed distance w.u - b.
double semantic_score(const VectorXd& w, const AttributeHyperplane& h);

struct PairedSample {
  std::uint64_t id = 0;
  VectorXd w_proj;
  double s_pos = 0.0;
  double s_neg = 0.0;
  VectorXd p_pos;
  VectorXd p_neg;
};

struct PairedDataset {
  std::string attribute;
  std::uint64_t seed = 0;
  AttributeHyperplane hyperplane;
  double s_max = 2.0;
  std::vector<PairedSample> samples;
};

PairedSample sample_pair(const LatentWorld& world, const AttributeHyperplane& h,
                         std::string_view attribute, Rng& rng);

/// Sample i uses the generator seeded with (dataset_seed XOR i), so the
/// result does not depend on `jobs`.
PairedDataset generate_pairs(const LatentWorld& world, const AttributeHyperplane& h,
                             std::string_view attribute, std::size_t n, std::uint64_t dataset_seed,
                             int jobs = 1);

/// Labeled latents for hyperplane estimation. With margin > 0, draws within
/// `margin` of the true boundary are rejected (separable set).
std::vector<LabeledLatent> sample_labeled(const LatentWorld& world, std::string_view attribute,
                                          std::size_t n, double margin, std::uint64_t seed);

double angle_degrees(const VectorXd& a, const VectorXd& b);

}  // namespace m3dm
