#include "m3dm/morphable.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>

#include "m3dm/errors.hpp"
#include "m3dm/log.hpp"
#include "m3dm/random.hpp"

namespace m3dm {
namespace {

void require_size(const VectorXd& v, Eigen::Index expected, const char* name) {
  if (v.size() != expected) {
    throw ContractError(std::string("dimension mismatch for ") + name + ": expected " +
                        std::to_string(expected) + ", got " + std::to_string(v.size()));
  }
}

MatrixXd random_orthonormal_columns(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd g(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) g(i, j) = gauss(rng);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  return qr.householderQ() * MatrixXd::Identity(rows, cols);
}

VectorXd decaying_sigmas(int k, double sigma0, double rho) {
  VectorXd s(k);
  for (int j = 0; j < k; ++j) s[j] = sigma0 * std::pow(rho, j);
  return s;
}

std::vector<int> farthest_point_landmarks(const VectorXd& shape, Rng& rng) {
  const int n = static_cast<int>(shape.size() / 3);
  // Candidates: the camera-facing half of the head (model -z).
  std::vector<int> candidates;
  for (int v = 0; v < n; ++v)
    if (shape[3 * v + 2] < 0.0) candidates.push_back(v);
  if (static_cast<int>(candidates.size()) < kNumLandmarks)
    throw ContractError("too few front-facing vertices for 68 landmarks");

  std::vector<int> picked;
  picked.reserve(kNumLandmarks);
  std::uniform_int_distribution<std::size_t> first(0, candidates.size() - 1);
  picked.push_back(candidates[first(rng)]);
  std::vector<double> dist(candidates.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(picked.size()) < kNumLandmarks) {
    const Eigen::Vector3d last = shape.segment<3>(3 * picked.back());
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double d = (shape.segment<3>(3 * candidates[c]) - last).squaredNorm();
      dist[c] = std::min(dist[c], d);
      if (dist[c] > best_d) {
        best_d = dist[c];
        best = c;
      }
    }
    picked.push_back(candidates[best]);
  }
  return picked;
}

}  // namespace

void MorphableBasis::validate() const {
  const Eigen::Index n3 = 3 * static_cast<Eigen::Index>(n_vertices);
  if (n_vertices <= 0) throw ContractError("basis has no vertices");
  require_size(mean_shape_id, n3, "mean_shape_id");
  require_size(mean_shape_expr, n3, "mean_shape_expr");
  require_size(mean_texture, n3, "mean_texture");
  if (E_id.rows() != n3 || E_expr.rows() != n3 || E_tex.rows() != n3)
    throw ContractError("basis eigenvector matrices must have 3n rows");
  require_size(sigma_id, E_id.cols(), "sigma_id");
  require_size(sigma_expr, E_expr.cols(), "sigma_expr");
  require_size(sigma_tex, E_tex.cols(), "sigma_tex");
  for (const VectorXd* s : {&sigma_id, &sigma_expr, &sigma_tex})
    if ((s->array() <= 0.0).any()) throw ContractError("basis sigmas must be strictly positive");
  for (const auto& t : triangles)
    for (int i : t)
      if (i < 0 || i >= n_vertices) throw ContractError("triangle index out of range");
  if (static_cast<int>(landmark_indices.size()) != kNumLandmarks)
    throw ContractError("basis must carry exactly 68 landmark indices");
  for (int i : landmark_indices)
    if (i < 0 || i >= n_vertices) throw ContractError("landmark index out of range");
}

FaceParams FaceParams::zeros(const MorphableBasis& basis) {
  FaceParams p;
  p.id = VectorXd::Zero(basis.k_id());
  p.expr = VectorXd::Zero(basis.k_expr());
  p.tex = VectorXd::Zero(basis.k_tex());
  return p;
}

VectorXd FaceParams::flat() const {
  VectorXd out(id.size() + expr.size() + tex.size());
  out << id, expr, tex;
  return out;
}

void FaceParams::set_flat(const VectorXd& p) {
  require_size(p, id.size() + expr.size() + tex.size(), "flat parameter vector");
  id = p.head(id.size());
  expr = p.segment(id.size(), expr.size());
  tex = p.tail(tex.size());
}

FaceParams FaceParams::from_flat(const MorphableBasis& basis, const VectorXd& p) {
  FaceParams out = zeros(basis);
  out.set_flat(p);
  return out;
}

void check_dims(const MorphableBasis& basis, const FaceParams& params) {
  require_size(params.id, basis.k_id(), "p_id");
  require_size(params.expr, basis.k_expr(), "p_expr");
  require_size(params.tex, basis.k_tex(), "p_tex");
}

VectorXd eval_shape(const MorphableBasis& basis, const VectorXd& p_id, const VectorXd& p_expr) {
  require_size(p_id, basis.k_id(), "p_id");
  require_size(p_expr, basis.k_expr(), "p_expr");
  VectorXd s = basis.mean_shape_id + basis.mean_shape_expr;
  s.noalias() += basis.E_id * p_id;
  s.noalias() += basis.E_expr * p_expr;
  return s;
}

VectorXd eval_texture(const MorphableBasis& basis, const VectorXd& p_tex) {
  require_size(p_tex, basis.k_tex(), "p_tex");
  VectorXd t = basis.mean_texture;
  t.noalias() += basis.E_tex * p_tex;
  return t;
}

int icosphere_vertex_count(int subdivisions) {
  int faces = 20;
  for (int i = 0; i < subdivisions; ++i) faces *= 4;
  return faces / 2 + 2;
}

void make_icosphere(int subdivisions, VectorXd& positions, std::vector<Triangle>& triangles) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
               {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
               {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
               {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Triangle> next;
    next.reserve(triangles.size() * 4);
    for (const auto& tri : triangles) {
      const int a = mid(tri[0], tri[1]);
      const int b = mid(tri[1], tri[2]);
      const int c = mid(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    triangles = std::move(next);
  }
  positions.resize(3 * static_cast<Eigen::Index>(verts.size()));
  for (std::size_t i = 0; i < verts.size(); ++i) positions.segment<3>(3 * i) = verts[i];
}

MorphableBasis synth_basis(std::uint64_t seed, const SynthBasisConfig& cfg) {
  int subdivisions = -1;
  for (int s = 2; s <= 6; ++s)
    if (icosphere_vertex_count(s) == cfg.n_vertices) subdivisions = s;
  if (subdivisions < 0) {
    throw ContractError("degenerate n_vertices " + std::to_string(cfg.n_vertices) +
                        ": expected an icosphere count (162, 642, 2562, ...)");
  }
  if (cfg.k_id < 1 || cfg.k_expr < 1 || cfg.k_tex < 1)
    throw ContractError("basis dimensions must be at least 1");
  if (3 * cfg.n_vertices < std::max({cfg.k_id, cfg.k_expr, cfg.k_tex}))
    throw ContractError("basis dimension exceeds 3 * n_vertices");
  if (!(cfg.sigma0 > 0.0) || !(cfg.sigma_decay > 0.0) || !(cfg.mode_rms > 0.0))
    throw ContractError("sigma0, sigma_decay and mode_rms must be positive");

  MorphableBasis b;
  VectorXd sphere;
  make_icosphere(subdivisions, sphere, b.triangles);
  b.n_vertices = cfg.n_vertices;
  const Eigen::Index n3 = sphere.size();

  // Head-like blob: squashed ellipsoid with a nose ridge on the -z side.
  b.mean_shape_id.resize(n3);
  b.mean_texture.resize(n3);
  for (int v = 0; v < b.n_vertices; ++v) {
    Eigen::Vector3d p = sphere.segment<3>(3 * v);
    const double nose = p.z() < 0.0 ? 0.18 * std::exp(-(p.x() * p.x() + p.y() * p.y()) / 0.06) : 0.0;
    p = Eigen::Vector3d(0.82 * p.x(), 1.05 * p.y(), 0.92 * p.z() - nose);
    b.mean_shape_id.segment<3>(3 * v) = p;
    const double shade = 0.04 * p.y() - 0.03 * std::abs(p.x());
    b.mean_texture.segment<3>(3 * v) = Eigen::Vector3d(0.74 + shade, 0.57 + shade, 0.48 + shade);
  }
  b.mean_shape_expr = VectorXd::Zero(n3);

  Rng rng(seed);
  const double amplitude = cfg.mode_rms * std::sqrt(static_cast<double>(n3));
  b.sigma_id = decaying_sigmas(cfg.k_id, cfg.sigma0, cfg.sigma_decay);
  b.sigma_expr = decaying_sigmas(cfg.k_expr, cfg.sigma0, cfg.sigma_decay);
  b.sigma_tex = decaying_sigmas(cfg.k_tex, cfg.sigma0, cfg.sigma_decay);
  b.E_id = random_orthonormal_columns(rng, n3, cfg.k_id) * (amplitude * b.sigma_id).asDiagonal();
  b.E_expr = random_orthonormal_columns(rng, n3, cfg.k_expr) * (amplitude * b.sigma_expr).asDiagonal();
  b.E_tex = random_orthonormal_columns(rng, n3, cfg.k_tex) * (amplitude * b.sigma_tex).asDiagonal();
  b.landmark_indices = farthest_point_landmarks(b.mean_shape_id, rng);
  b.validate();
  return b;
}

VectorXd vertex_normals(const VectorXd& shape, const std::vector<Triangle>& triangles,
                        std::vector<int>* isolated) {
  const Eigen::Index n = shape.size() / 3;
  VectorXd acc = VectorXd::Zero(shape.size());
  for (const auto& t : triangles) {
    if (t[0] >= n || t[1] >= n || t[2] >= n) throw ContractError("triangle index out of range");
    const Eigen::Vector3d a = shape.segment<3>(3 * t[0]);
    const Eigen::Vector3d e1 = shape.segment<3>(3 * t[1]) - a;
    const Eigen::Vector3d e2 = shape.segment<3>(3 * t[2]) - a;
    // |cross| = 2 * area, so summing raw cross products is area weighting.
    const Eigen::Vector3d m = e1.cross(e2);
    for (int i : t) acc.segment<3>(3 * i) += m;
  }
  int n_isolated = 0;
  for (Eigen::Index v = 0; v < n; ++v) {
    auto seg = acc.segment<3>(3 * v);
    const double len = seg.norm();
    if (len > 0.0 && std::isfinite(len)) {
      seg /= len;
    } else {
      seg = Eigen::Vector3d::UnitZ();
      ++n_isolated;
      if (isolated) isolated->push_back(static_cast<int>(v));
    }
  }
  if (n_isolated > 0)
    log::warn("vertex_normals: " + std::to_string(n_isolated) + " isolated vertices set to +z");
  return acc;
}

}  // namespace m3dm
