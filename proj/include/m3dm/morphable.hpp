#pragma once

// Linear 3D morphable face model: geometry (identity + expression) and
// per-vertex color, plus the seeded synthetic basis used in place of a
// scanned model.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace m3dm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

using Triangle = std::array<int, 3>;

inline constexpr int kNumLandmarks = 68;

struct MorphableBasis {
  int n_vertices = 0;
  VectorXd mean_shape_id;    // 3n, interleaved xyz
  VectorXd mean_shape_expr;  // 3n
  VectorXd mean_texture;     // 3n, interleaved rgb in [0, 1]
  MatrixXd E_id;             // 3n x k_id
  MatrixXd E_expr;           // 3n x k_expr
  MatrixXd E_tex;            // 3n x k_tex
  VectorXd sigma_id, sigma_expr, sigma_tex;
  std::vector<Triangle> triangles;
  std::vector<int> landmark_indices;

  int k_id() const { return static_cast<int>(E_id.cols()); }
  int k_expr() const { return static_cast<int>(E_expr.cols()); }
  int k_tex() const { return static_cast<int>(E_tex.cols()); }
  int k_flat() const { return k_id() + k_expr() + k_tex(); }

  /// Throws ContractError if any structural invariant is broken.
  void validate() const;
};

/// Full fitting parameter set. Statistical coefficients are expressed in
/// units of the per-mode standard deviation.
struct FaceParams {
  VectorXd id;
  VectorXd expr;
  VectorXd tex;
  std::array<double, 6> cam{};    // [x_R, y_R, z_R, x_T, y_T, z_T]
  std::array<double, 6> light{};  // [x_l, y_l, z_l, r_a, g_a, b_a]

  static FaceParams zeros(const MorphableBasis& basis);

  /// [id | expr | tex]
  VectorXd flat() const;
  void set_flat(const VectorXd& p);
  static FaceParams from_flat(const MorphableBasis& basis, const VectorXd& p);
};

void check_dims(const MorphableBasis& basis, const FaceParams& params);

VectorXd eval_shape(const MorphableBasis& basis, const VectorXd& p_id, const VectorXd& p_expr);
VectorXd eval_texture(const MorphableBasis& basis, const VectorXd& p_tex);

struct SynthBasisConfig {
  int n_vertices = 642;
  int k_id = 16;
  int k_expr = 8;
  int k_tex = 16;
  double sigma0 = 1.0;
  double sigma_decay = 0.9;
  // Root-mean-square per-coordinate displacement contributed by one standard
  // deviation of the leading mode. Columns are unit vectors times sigma_j times
  // this amplitude times sqrt(3n).
  double mode_rms = 0.05;
};

/// Deterministic per seed. n_vertices must be an icosphere vertex count
/// (10 * 4^s + 2) with at least 162 vertices.
MorphableBasis synth_basis(std::uint64_t seed, const SynthBasisConfig& cfg = {});

/// Vertex count of an icosphere after `subdivisions` midpoint refinements.
int icosphere_vertex_count(int subdivisions);

/// Unit icosphere with outward-facing triangle winding.
void make_icosphere(int subdivisions, VectorXd& positions, std::vector<Triangle>& triangles);

/// Area-weighted vertex normals (unit length). Vertices without any
/// non-degenerate incident face get +z; their indices are appended to
/// `isolated` when provided and a warning is logged.
VectorXd vertex_normals(const VectorXd& shape, const std::vector<Triangle>& triangles,
                        std::vector<int>* isolated = nullptr);

}  // namespace m3dm
