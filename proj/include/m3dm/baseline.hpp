#pragma once

// Global attribute direction: rank-1 least squares of the centered parameter
// matrix against attribute scores (or labels), applied as p + ds * alpha * p_hat.

#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "m3dm/latent_world.hpp"

namespace m3dm {

struct GlobalDirection {
  VectorXd p_hat;
  std::string attribute;
  double scale_alpha = 1.0;
  VectorXd center;
  // Training-set fingerprint.
  std::uint64_t train_seed = 0;
  std::uint64_t train_size = 0;
};

/// P is k x n (one parameter vector per column), a has length n.
/// p_hat = P_c a / (a^T a) with P_c the row-centered P.
GlobalDirection fit_direction(const MatrixXd& P, const VectorXd& a);

VectorXd apply(const GlobalDirection& dir, const VectorXd& p_src, double s_src, double s_trg);

struct EditPair {
  VectorXd p_src;
  double s_src = 0.0;
  VectorXd p_trg;
  double s_trg = 0.0;
};

/// alpha = argmin sum ||p_trg - p_src - alpha (s_trg - s_src) p_hat||^2.
GlobalDirection refit_scale(GlobalDirection dir, std::span<const EditPair> pairs);

enum class BaselineTarget { scores, labels };

struct BaselineOptions {
  BaselineTarget target = BaselineTarget::scores;
  bool refit = true;
};

/// Fits on both members of every pair (2n columns) and, when requested,
/// refits the gain on the source/target assignment given by `coins`
/// (true: positive member is the source).
GlobalDirection fit_baseline(std::span<const PairedSample> samples, std::span<const bool> coins,
                             const std::string& attribute, const BaselineOptions& opts = {});

}  // namespace m3dm
