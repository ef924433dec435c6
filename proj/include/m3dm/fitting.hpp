#pragma once

// Analysis-by-synthesis fitting: perspective projection, ambient + Lambertian
// point-light shading, landmark and point-sampled color energies, and a
// Levenberg-Marquardt solver over [p_id, p_expr, p_tex, p_cam, p_light].

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "m3dm/morphable.hpp"

namespace m3dm {

struct CameraModel {
  double focal_length = 1000.0;
  int image_width = 256;
  int image_height = 256;

  double cx() const { return 0.5 * image_width; }
  double cy() const { return 0.5 * image_height; }
  void validate() const;
};

/// R = Rx(x_R) * Ry(y_R) * Rz(z_R): intrinsic X, then Y, then Z.
Eigen::Matrix3d euler_xyz(double rx, double ry, double rz);

struct Projection {
  Eigen::MatrixX2d pixels;  // n x 2
  VectorXd depth;           // camera-space Z per vertex
};

inline constexpr double kNearPlane = 1e-3;

/// Rigid transform into camera space: X_cam = R X + T (3n interleaved).
VectorXd to_camera(const VectorXd& shape, const std::array<double, 6>& p_cam);

/// Throws ContractError naming the first vertex at or behind the near plane.
Projection project(const VectorXd& shape, const std::array<double, 6>& p_cam, const CameraModel& camera);

/// Per-vertex color = texture * (ambient + max(0, n.l)), clamped to [0, 1].
/// Points, normals and the light position share one frame.
VectorXd phong_shade(const VectorXd& points, const VectorXd& normals, const VectorXd& texture,
                     const std::array<double, 6>& p_light);

struct FitTarget {
  Eigen::MatrixX2d landmarks_2d;         // 68 x 2 pixel coordinates
  std::optional<VectorXd> sampled_colors;  // 3n per-vertex RGB target
  std::vector<bool> color_mask;          // per-vertex target visibility

  void validate(int n_vertices) const;
};

struct EnergyTerm {
  double value = 0.0;
  VectorXd residual;
};

/// Mean Euclidean landmark reprojection error; residual is the stacked
/// 136-vector t_proj - t_trg.
EnergyTerm e_feature(const FaceParams& params, const FitTarget& target, const MorphableBasis& basis,
                     const CameraModel& camera);

/// Mean color-difference norm over visible vertices (camera-space normal
/// facing the camera and unmasked in the target); residual stacks
/// rendered - target per visible vertex.
EnergyTerm e_pixel(const FaceParams& params, const FitTarget& target, const MorphableBasis& basis,
                   const CameraModel& camera);

/// Renders a noiseless target (landmarks, per-vertex shaded colors and the
/// visibility mask) from known parameters.
FitTarget render_target(const FaceParams& params, const MorphableBasis& basis, const CameraModel& camera);

/// Indices of vertices whose camera-space normal faces the camera.
std::vector<int> visible_vertices(const FaceParams& params, const MorphableBasis& basis);

enum class JacobianMode { analytic, numeric };

struct FitConfig {
  double lambda_feature = 1.0;
  double lambda_pixel = 100.0;
  double lambda_reg = 1e-3;
  int max_iters = 200;
  double rel_tol = 1e-8;
  double initial_damping = 1e-3;
  int max_damping_retries = 12;
  JacobianMode jacobian = JacobianMode::analytic;
  bool optimize_camera = true;
  bool optimize_light = true;
};

struct FitResult {
  FaceParams params;
  double final_E_feature = 0.0;
  double final_E_pixel = 0.0;
  double final_E_total = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> accepted_energies;
};

/// Least-squares view of the fitting objective. The optimizer minimizes
/// ||r||^2 with
///   r = [ sqrt(lf/68) (t_proj - t_trg),
///         sqrt(lp/|V|) (c_render - c_trg) over visible V,
///         sqrt(lr) p_stat ]
/// where p_stat is in per-mode standard-deviation units, so the prior equals
/// sum_j (p_abs_j / sigma_j)^2 for the absolute coefficients p_abs_j.
class FitProblem {
 public:
  FitProblem(const FitTarget& target, const MorphableBasis& basis, const CameraModel& camera,
             const FitConfig& cfg);

  int n_params() const;
  /// Parameter vector layout: [id | expr | tex | cam(6) | light(6)].
  VectorXd pack(const FaceParams& p) const;
  FaceParams unpack(const VectorXd& theta) const;

  /// Visibility used by the color residual block; fixed between relinearizations.
  std::vector<int> visibility(const VectorXd& theta) const;
  VectorXd residual(const VectorXd& theta, const std::vector<int>& visible) const;
  MatrixXd jacobian_analytic(const VectorXd& theta, const std::vector<int>& visible) const;
  MatrixXd jacobian_numeric(const VectorXd& theta, const std::vector<int>& visible, double step = 1e-6) const;

  bool uses_pixels() const { return use_pixels_; }

 private:
  const FitTarget& target_;
  const MorphableBasis& basis_;
  CameraModel camera_;
  FitConfig cfg_;
  bool use_pixels_;
};

FitResult fit(const FitTarget& target, const MorphableBasis& basis, const CameraModel& camera,
              const FaceParams& init, const FitConfig& cfg = {});

}  // namespace m3dm
