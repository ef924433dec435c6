#include "m3dm/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "m3dm/errors.hpp"
#include "m3dm/log.hpp"

namespace m3dm {
namespace {

using Eigen::Matrix3d;
using Eigen::Vector3d;

Matrix3d rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return (Matrix3d() << 1, 0, 0, 0, c, -s, 0, s, c).finished();
}
Matrix3d rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return (Matrix3d() << c, 0, s, 0, 1, 0, -s, 0, c).finished();
}
Matrix3d rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return (Matrix3d() << c, -s, 0, s, c, 0, 0, 0, 1).finished();
}
Matrix3d drot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return (Matrix3d() << 0, 0, 0, 0, -s, -c, 0, c, -s).finished();
}
Matrix3d drot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return (Matrix3d() << -s, 0, c, 0, 0, 0, -c, 0, -s).finished();
}
Matrix3d drot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return (Matrix3d() << -s, -c, 0, c, -s, 0, 0, 0, 0).finished();
}

Matrix3d skew(const Vector3d& v) {
  return (Matrix3d() << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0).finished();
}

Vector3d light_position(const std::array<double, 6>& p_light) {
  return {p_light[0], p_light[1], p_light[2]};
}

Vector3d ambient(const std::array<double, 6>& p_light) { return {p_light[3], p_light[4], p_light[5]}; }

Eigen::Matrix<double, 2, 3> projection_jacobian(const Vector3d& xc, double f) {
  const double iz = 1.0 / xc.z();
  Eigen::Matrix<double, 2, 3> j;
  j << f * iz, 0.0, -f * xc.x() * iz * iz, 0.0, f * iz, -f * xc.y() * iz * iz;
  return j;
}

Eigen::Vector2d project_point(const Vector3d& xc, const CameraModel& camera, int vertex) {
  if (!(xc.z() > kNearPlane)) {
    throw ContractError("vertex " + std::to_string(vertex) + " is at or behind the near plane (z=" +
                        std::to_string(xc.z()) + ")");
  }
  return {camera.focal_length * xc.x() / xc.z() + camera.cx(),
          camera.focal_length * xc.y() / xc.z() + camera.cy()};
}

std::vector<int> facing_vertices(const VectorXd& normals, const Matrix3d& R) {
  std::vector<int> out;
  const Eigen::Index n = normals.size() / 3;
  for (Eigen::Index v = 0; v < n; ++v) {
    const Vector3d nc = R * normals.segment<3>(3 * v);
    if (nc.z() < 0.0) out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace

void CameraModel::validate() const {
  if (!(focal_length > 0.0)) throw ContractError("focal_length must be positive");
  if (image_width < 8 || image_height < 8) throw ContractError("image must be at least 8x8 pixels");
}

Matrix3d euler_xyz(double rx, double ry, double rz) { return rot_x(rx) * rot_y(ry) * rot_z(rz); }

VectorXd to_camera(const VectorXd& shape, const std::array<double, 6>& p_cam) {
  const Matrix3d R = euler_xyz(p_cam[0], p_cam[1], p_cam[2]);
  const Vector3d T(p_cam[3], p_cam[4], p_cam[5]);
  VectorXd out(shape.size());
  for (Eigen::Index v = 0; v < shape.size() / 3; ++v) out.segment<3>(3 * v) = R * shape.segment<3>(3 * v) + T;
  return out;
}

Projection project(const VectorXd& shape, const std::array<double, 6>& p_cam, const CameraModel& camera) {
  camera.validate();
  const VectorXd xc = to_camera(shape, p_cam);
  const Eigen::Index n = shape.size() / 3;
  Projection out;
  out.pixels.resize(n, 2);
  out.depth.resize(n);
  for (Eigen::Index v = 0; v < n; ++v) {
    const Vector3d x = xc.segment<3>(3 * v);
    out.pixels.row(v) = project_point(x, camera, static_cast<int>(v)).transpose();
    out.depth[v] = x.z();
  }
  return out;
}

VectorXd phong_shade(const VectorXd& points, const VectorXd& normals, const VectorXd& texture,
                     const std::array<double, 6>& p_light) {
  if (points.size() != normals.size() || points.size() != texture.size())
    throw ContractError("phong_shade: points, normals and texture must have equal length");
  const Vector3d L = light_position(p_light);
  const Vector3d amb = ambient(p_light);
  VectorXd out(points.size());
  for (Eigen::Index v = 0; v < points.size() / 3; ++v) {
    const Vector3d to_light = L - points.segment<3>(3 * v);
    const double dist = to_light.norm();
    if (dist < 1e-9) throw ContractError("light coincides with vertex " + std::to_string(v));
    const double diffuse = std::max(0.0, normals.segment<3>(3 * v).dot(to_light / dist));
    const Vector3d raw = texture.segment<3>(3 * v).cwiseProduct(amb + Vector3d::Constant(diffuse));
    out.segment<3>(3 * v) = raw.cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

void FitTarget::validate(int n_vertices) const {
  if (landmarks_2d.rows() != kNumLandmarks || landmarks_2d.cols() != 2)
    throw ContractError("fit target needs exactly 68 landmarks");
  if (sampled_colors) {
    if (sampled_colors->size() != 3 * static_cast<Eigen::Index>(n_vertices))
      throw ContractError("sampled colors must have 3n entries");
    if ((sampled_colors->array() < 0.0).any() || (sampled_colors->array() > 1.0).any())
      throw ContractError("sampled colors must lie in [0, 1]");
    if (static_cast<int>(color_mask.size()) != n_vertices)
      throw ContractError("color mask must have one entry per vertex");
  }
}

EnergyTerm e_feature(const FaceParams& params, const FitTarget& target, const MorphableBasis& basis,
                     const CameraModel& camera) {
  target.validate(basis.n_vertices);
  camera.validate();
  const VectorXd shape = eval_shape(basis, params.id, params.expr);
  const Matrix3d R = euler_xyz(params.cam[0], params.cam[1], params.cam[2]);
  const Vector3d T(params.cam[3], params.cam[4], params.cam[5]);
  EnergyTerm e;
  e.residual.resize(2 * kNumLandmarks);
  double total = 0.0;
  for (int l = 0; l < kNumLandmarks; ++l) {
    const int v = basis.landmark_indices[static_cast<std::size_t>(l)];
    const Eigen::Vector2d px = project_point(R * shape.segment<3>(3 * v) + T, camera, v);
    const Eigen::Vector2d diff = px - target.landmarks_2d.row(l).transpose();
    e.residual.segment<2>(2 * l) = diff;
    total += diff.norm();
  }
  e.value = total / kNumLandmarks;
  return e;
}

std::vector<int> visible_vertices(const FaceParams& params, const MorphableBasis& basis) {
  const VectorXd shape = eval_shape(basis, params.id, params.expr);
  const VectorXd normals = vertex_normals(shape, basis.triangles);
  return facing_vertices(normals, euler_xyz(params.cam[0], params.cam[1], params.cam[2]));
}

EnergyTerm e_pixel(const FaceParams& params, const FitTarget& target, const MorphableBasis& basis,
                   const CameraModel& camera) {
  camera.validate();
  target.validate(basis.n_vertices);
  if (!target.sampled_colors) throw ContractError("e_pixel requires sampled target colors");
  const VectorXd shape = eval_shape(basis, params.id, params.expr);
  const VectorXd normals = vertex_normals(shape, basis.triangles);
  const Matrix3d R = euler_xyz(params.cam[0], params.cam[1], params.cam[2]);
  const VectorXd xc = to_camera(shape, params.cam);
  const VectorXd texture = eval_texture(basis, params.tex);

  std::vector<int> visible;
  for (int v : facing_vertices(normals, R))
    if (target.color_mask[static_cast<std::size_t>(v)]) visible.push_back(v);
  if (visible.empty()) throw NumericalError("e_pixel: no visible vertices");

  VectorXd pts(3 * visible.size()), nrm(3 * visible.size()), tex(3 * visible.size());
  for (std::size_t i = 0; i < visible.size(); ++i) {
    const int v = visible[i];
    pts.segment<3>(3 * i) = xc.segment<3>(3 * v);
    nrm.segment<3>(3 * i) = R * normals.segment<3>(3 * v);
    tex.segment<3>(3 * i) = texture.segment<3>(3 * v);
  }
  const VectorXd rendered = phong_shade(pts, nrm, tex, params.light);
  EnergyTerm e;
  e.residual.resize(rendered.size());
  double total = 0.0;
  for (std::size_t i = 0; i < visible.size(); ++i) {
    const Vector3d diff = rendered.segment<3>(3 * i) - target.sampled_colors->segment<3>(3 * visible[i]);
    e.residual.segment<3>(3 * i) = diff;
    total += diff.norm();
  }
  e.value = total / static_cast<double>(visible.size());
  return e;
}

FitTarget render_target(const FaceParams& params, const MorphableBasis& basis, const CameraModel& camera) {
  check_dims(basis, params);
  const VectorXd shape = eval_shape(basis, params.id, params.expr);
  const VectorXd normals = vertex_normals(shape, basis.triangles);
  const Matrix3d R = euler_xyz(params.cam[0], params.cam[1], params.cam[2]);
  const VectorXd xc = to_camera(shape, params.cam);
  VectorXd normals_cam(normals.size());
  for (Eigen::Index v = 0; v < basis.n_vertices; ++v)
    normals_cam.segment<3>(3 * v) = R * normals.segment<3>(3 * v);

  FitTarget t;
  t.landmarks_2d.resize(kNumLandmarks, 2);
  for (int l = 0; l < kNumLandmarks; ++l) {
    const int v = basis.landmark_indices[static_cast<std::size_t>(l)];
    t.landmarks_2d.row(l) = project_point(xc.segment<3>(3 * v), camera, v).transpose();
  }
  t.sampled_colors = phong_shade(xc, normals_cam, eval_texture(basis, params.tex), params.light);
  t.color_mask.assign(static_cast<std::size_t>(basis.n_vertices), false);
  for (int v = 0; v < basis.n_vertices; ++v) t.color_mask[static_cast<std::size_t>(v)] = normals_cam[3 * v + 2] < 0.0;
  return t;
}

// ---------------------------------------------------------------------------

FitProblem::FitProblem(const FitTarget& target, const MorphableBasis& basis, const CameraModel& camera,
                       const FitConfig& cfg)
    : target_(target), basis_(basis), camera_(camera), cfg_(cfg) {
  camera_.validate();
  target_.validate(basis_.n_vertices);
  if (cfg_.lambda_feature < 0.0 || cfg_.lambda_pixel < 0.0 || cfg_.lambda_reg < 0.0)
    throw ContractError("energy weights must be non-negative");
  use_pixels_ = cfg_.lambda_pixel > 0.0;
  if (use_pixels_ && !target_.sampled_colors)
    throw ContractError("lambda_pixel > 0 requires sampled target colors");
}

int FitProblem::n_params() const { return basis_.k_flat() + 12; }

VectorXd FitProblem::pack(const FaceParams& p) const {
  check_dims(basis_, p);
  VectorXd theta(n_params());
  theta.head(basis_.k_flat()) = p.flat();
  for (int i = 0; i < 6; ++i) {
    theta[basis_.k_flat() + i] = p.cam[static_cast<std::size_t>(i)];
    theta[basis_.k_flat() + 6 + i] = p.light[static_cast<std::size_t>(i)];
  }
  return theta;
}

FaceParams FitProblem::unpack(const VectorXd& theta) const {
  if (theta.size() != n_params()) throw ContractError("fit parameter vector has wrong length");
  FaceParams p = FaceParams::from_flat(basis_, theta.head(basis_.k_flat()));
  for (int i = 0; i < 6; ++i) {
    p.cam[static_cast<std::size_t>(i)] = theta[basis_.k_flat() + i];
    p.light[static_cast<std::size_t>(i)] = theta[basis_.k_flat() + 6 + i];
  }
  return p;
}

std::vector<int> FitProblem::visibility(const VectorXd& theta) const {
  if (!use_pixels_) return {};
  const FaceParams p = unpack(theta);
  std::vector<int> out;
  for (int v : visible_vertices(p, basis_))
    if (target_.color_mask[static_cast<std::size_t>(v)]) out.push_back(v);
  return out;
}

VectorXd FitProblem::residual(const VectorXd& theta, const std::vector<int>& visible) const {
  const FaceParams p = unpack(theta);
  const int k = basis_.k_flat();
  const Eigen::Index n_color = use_pixels_ ? 3 * static_cast<Eigen::Index>(visible.size()) : 0;
  VectorXd r(2 * kNumLandmarks + n_color + k);

  const VectorXd shape = eval_shape(basis_, p.id, p.expr);
  const Matrix3d R = euler_xyz(p.cam[0], p.cam[1], p.cam[2]);
  const Vector3d T(p.cam[3], p.cam[4], p.cam[5]);
  const double wf = std::sqrt(cfg_.lambda_feature / kNumLandmarks);
  for (int l = 0; l < kNumLandmarks; ++l) {
    const int v = basis_.landmark_indices[static_cast<std::size_t>(l)];
    const Eigen::Vector2d px = project_point(R * shape.segment<3>(3 * v) + T, camera_, v);
    r.segment<2>(2 * l) = wf * (px - target_.landmarks_2d.row(l).transpose());
  }

  if (use_pixels_) {
    if (visible.empty()) throw NumericalError("no visible vertices for the color energy");
    const VectorXd normals = vertex_normals(shape, basis_.triangles);
    const VectorXd texture = eval_texture(basis_, p.tex);
    const Vector3d L = light_position(p.light);
    const Vector3d amb = ambient(p.light);
    const double wp = std::sqrt(cfg_.lambda_pixel / static_cast<double>(visible.size()));
    for (std::size_t i = 0; i < visible.size(); ++i) {
      const int v = visible[i];
      const Vector3d xc = R * shape.segment<3>(3 * v) + T;
      const Vector3d nc = R * normals.segment<3>(3 * v);
      const Vector3d to_light = L - xc;
      const double dist = to_light.norm();
      if (dist < 1e-9) throw ContractError("light coincides with vertex " + std::to_string(v));
      const double diffuse = std::max(0.0, nc.dot(to_light / dist));
      const Vector3d raw = texture.segment<3>(3 * v).cwiseProduct(amb + Vector3d::Constant(diffuse));
      r.segment<3>(2 * kNumLandmarks + 3 * static_cast<Eigen::Index>(i)) =
          wp * (raw.cwiseMax(0.0).cwiseMin(1.0) - target_.sampled_colors->segment<3>(3 * v));
    }
  }
  r.tail(k) = std::sqrt(cfg_.lambda_reg) * theta.head(k);
  return r;
}

MatrixXd FitProblem::jacobian_analytic(const VectorXd& theta, const std::vector<int>& visible) const {
  const FaceParams p = unpack(theta);
  const int ki = basis_.k_id(), ke = basis_.k_expr(), kt = basis_.k_tex();
  const int ks = ki + ke;
  const int k = basis_.k_flat();
  const int col_cam = k, col_light = k + 6;
  const Eigen::Index n_color = use_pixels_ ? 3 * static_cast<Eigen::Index>(visible.size()) : 0;
  MatrixXd J = MatrixXd::Zero(2 * kNumLandmarks + n_color + k, n_params());

  const VectorXd shape = eval_shape(basis_, p.id, p.expr);
  const Matrix3d Rx = rot_x(p.cam[0]), Ry = rot_y(p.cam[1]), Rz = rot_z(p.cam[2]);
  const Matrix3d R = Rx * Ry * Rz;
  const std::array<Matrix3d, 3> dR = {drot_x(p.cam[0]) * Ry * Rz, Rx * drot_y(p.cam[1]) * Rz,
                                      Rx * Ry * drot_z(p.cam[2])};
  const Vector3d T(p.cam[3], p.cam[4], p.cam[5]);

  // Rows of the combined shape basis for one vertex: 3 x (k_id + k_expr).
  auto shape_rows = [&](int v) {
    Eigen::Matrix<double, 3, Eigen::Dynamic> m(3, ks);
    m.leftCols(ki) = basis_.E_id.middleRows(3 * v, 3);
    m.rightCols(ke) = basis_.E_expr.middleRows(3 * v, 3);
    return m;
  };

  const double wf = std::sqrt(cfg_.lambda_feature / kNumLandmarks);
  for (int l = 0; l < kNumLandmarks; ++l) {
    const int v = basis_.landmark_indices[static_cast<std::size_t>(l)];
    const Vector3d x = shape.segment<3>(3 * v);
    const Vector3d xc = R * x + T;
    project_point(xc, camera_, v);
    const Eigen::Matrix<double, 2, 3> jp = wf * projection_jacobian(xc, camera_.focal_length);
    J.block(2 * l, 0, 2, ks) = jp * R * shape_rows(v);
    if (cfg_.optimize_camera) {
      for (int a = 0; a < 3; ++a) J.block<2, 1>(2 * l, col_cam + a) = jp * (dR[static_cast<std::size_t>(a)] * x);
      J.block<2, 3>(2 * l, col_cam + 3) = jp;
    }
  }

  if (use_pixels_) {
    if (visible.empty()) throw NumericalError("no visible vertices for the color energy");
    const Eigen::Index n = basis_.n_vertices;
    // Unnormalized area-weighted normals and their derivatives w.r.t. the
    // shape coefficients.
    MatrixXd m = MatrixXd::Zero(3, n);
    MatrixXd dm = MatrixXd::Zero(3 * n, ks);
    for (const auto& t : basis_.triangles) {
      const Vector3d a = shape.segment<3>(3 * t[0]);
      const Vector3d e1 = shape.segment<3>(3 * t[1]) - a;
      const Vector3d e2 = shape.segment<3>(3 * t[2]) - a;
      const Vector3d c = e1.cross(e2);
      const auto ra = shape_rows(t[0]);
      const MatrixXd dc = -skew(e2) * (shape_rows(t[1]) - ra) + skew(e1) * (shape_rows(t[2]) - ra);
      for (int i : t) {
        m.col(i) += c;
        dm.middleRows(3 * i, 3) += dc;
      }
    }
    const VectorXd texture = eval_texture(basis_, p.tex);
    const Vector3d L = light_position(p.light);
    const Vector3d amb = ambient(p.light);
    const double wp = std::sqrt(cfg_.lambda_pixel / static_cast<double>(visible.size()));
    for (std::size_t i = 0; i < visible.size(); ++i) {
      const int v = visible[i];
      const Eigen::Index row = 2 * kNumLandmarks + 3 * static_cast<Eigen::Index>(i);
      const Vector3d x = shape.segment<3>(3 * v);
      const Vector3d xc = R * x + T;
      const double mlen = m.col(v).norm();
      if (!(mlen > 0.0)) continue;  // isolated vertex: constant +z normal
      const Vector3d nm = m.col(v) / mlen;
      const Vector3d nc = R * nm;
      const Matrix3d dnorm = (Matrix3d::Identity() - nm * nm.transpose()) / mlen;
      const Vector3d to_light = L - xc;
      const double dist = to_light.norm();
      if (dist < 1e-9) throw ContractError("light coincides with vertex " + std::to_string(v));
      const Vector3d lv = to_light / dist;
      const Matrix3d dl = (Matrix3d::Identity() - lv * lv.transpose()) / dist;  // d l / d L = -d l / d xc
      const double q = nc.dot(lv);
      const double diffuse = std::max(0.0, q);
      const Vector3d tex = texture.segment<3>(3 * v);
      const Vector3d raw = tex.cwiseProduct(amb + Vector3d::Constant(diffuse));

      // d q / d (shape coefficients, camera, light position), as row vectors.
      Eigen::RowVectorXd dq = Eigen::RowVectorXd::Zero(n_params());
      if (q > 0.0) {
        const Eigen::RowVector3d ndl = -nc.transpose() * dl;  // d q / d xc
        dq.head(ks) = lv.transpose() * R * dnorm * dm.middleRows(3 * v, 3) + ndl * R * shape_rows(v);
        if (cfg_.optimize_camera) {
          for (int a = 0; a < 3; ++a) {
            const Matrix3d& dRa = dR[static_cast<std::size_t>(a)];
            dq[col_cam + a] = lv.dot(dRa * nm) + ndl.dot(dRa * x);
          }
          dq.segment<3>(col_cam + 3) = ndl;
        }
        if (cfg_.optimize_light) dq.segment<3>(col_light) = -ndl;
      }
      for (int c = 0; c < 3; ++c) {
        if (raw[c] < 0.0 || raw[c] > 1.0) continue;  // clamped channel
        auto jrow = J.row(row + c);
        jrow += wp * tex[c] * dq;
        jrow.segment(ks, kt) = wp * (amb[c] + diffuse) * basis_.E_tex.row(3 * v + c);
        if (cfg_.optimize_light) jrow[col_light + 3 + c] = wp * tex[c];
      }
    }
  }

  const Eigen::Index prior_row = 2 * kNumLandmarks + n_color;
  J.block(prior_row, 0, k, k).diagonal().setConstant(std::sqrt(cfg_.lambda_reg));
  return J;
}

MatrixXd FitProblem::jacobian_numeric(const VectorXd& theta, const std::vector<int>& visible, double step) const {
  const VectorXd r0 = residual(theta, visible);
  MatrixXd J(r0.size(), n_params());
  const int k = basis_.k_flat();
  for (int j = 0; j < n_params(); ++j) {
    const bool frozen = (j >= k && j < k + 6 && !cfg_.optimize_camera) || (j >= k + 6 && !cfg_.optimize_light);
    if (frozen) {
      J.col(j).setZero();
      continue;
    }
    VectorXd tp = theta, tm = theta;
    tp[j] += step;
    tm[j] -= step;
    J.col(j) = (residual(tp, visible) - residual(tm, visible)) / (2.0 * step);
  }
  return J;
}

FitResult fit(const FitTarget& target, const MorphableBasis& basis, const CameraModel& camera,
              const FaceParams& init, const FitConfig& cfg) {
  const FitProblem problem(target, basis, camera, cfg);
  VectorXd theta = problem.pack(init);
  if (!theta.allFinite()) throw ContractError("initial parameters must be finite");

  std::vector<int> visible = problem.visibility(theta);
  VectorXd r = problem.residual(theta, visible);
  double energy = r.squaredNorm();
  if (!std::isfinite(energy)) throw NumericalError("non-finite initial fitting energy");

  FitResult result;
  result.accepted_energies.push_back(energy);
  double damping = cfg.initial_damping;
  int consecutive_rejects = 0;
  // Exact fit (only reachable with a zero prior): nothing left to do.
  bool done = energy <= 1e-24;
  result.converged = done;

  while (!done && result.iterations < cfg.max_iters) {
    const MatrixXd J = cfg.jacobian == JacobianMode::analytic ? problem.jacobian_analytic(theta, visible)
                                                              : problem.jacobian_numeric(theta, visible);
    const VectorXd g = J.transpose() * r;
    const MatrixXd H = J.transpose() * J;
    const VectorXd scale = H.diagonal().cwiseMax(1e-9);

    bool accepted = false;
    while (!accepted) {
      VectorXd step;
      bool solved = false;
      for (int attempt = 0; attempt <= cfg.max_damping_retries; ++attempt) {
        MatrixXd A = H;
        A.diagonal() += damping * scale;
        Eigen::LDLT<MatrixXd> ldlt(A);
        if (ldlt.info() == Eigen::Success) {
          step = -ldlt.solve(g);
          if (step.allFinite()) {
            solved = true;
            break;
          }
        }
        damping *= 10.0;
      }
      if (!solved) throw NumericalError("normal equations stayed singular after damping retries");

      const VectorXd candidate = theta + step;
      double cand_energy = std::numeric_limits<double>::infinity();
      std::vector<int> cand_visible;
      VectorXd cand_r;
      bool evaluable = true;
      try {
        cand_visible = problem.visibility(candidate);
        cand_r = problem.residual(candidate, cand_visible);
        cand_energy = cand_r.squaredNorm();
      } catch (const Error&) {
        evaluable = false;  // step left the valid region (near plane / no visibility)
      }
      if (evaluable && !std::isfinite(cand_energy)) {
        throw NumericalError("non-finite fitting energy at iteration " + std::to_string(result.iterations));
      }

      if (evaluable && cand_energy < energy) {
        const double rel = (energy - cand_energy) / energy;
        theta = candidate;
        visible = std::move(cand_visible);
        r = std::move(cand_r);
        energy = cand_energy;
        damping = std::max(damping / 10.0, 1e-15);
        consecutive_rejects = 0;
        ++result.iterations;
        result.accepted_energies.push_back(energy);
        accepted = true;
        if (rel < cfg.rel_tol || energy <= 1e-24) {
          result.converged = true;
          done = true;
        }
      } else {
        damping *= 10.0;
        ++consecutive_rejects;
        const bool negligible = step.norm() <= 1e-14 * (1.0 + theta.norm());
        if (negligible || consecutive_rejects > cfg.max_damping_retries) {
          // No descent direction left at working precision: stationary point.
          result.converged = true;
          done = true;
          break;
        }
      }
    }
  }

  result.params = problem.unpack(theta);
  result.final_E_total = energy;
  result.final_E_feature = e_feature(result.params, target, basis, camera).value;
  if (target.sampled_colors) {
    try {
      result.final_E_pixel = e_pixel(result.params, target, basis, camera).value;
    } catch (const NumericalError&) {
      result.final_E_pixel = 0.0;
    }
  }
  if (!std::isfinite(result.final_E_feature) || !std::isfinite(result.final_E_pixel))
    throw NumericalError("fit finished with non-finite energies");
  log::debug("fit: " + std::to_string(result.iterations) + " iterations, E=" + std::to_string(energy));
  return result;
}

}  // namespace m3dm
