// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,5,...] [--jobs N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "m3dm/config.hpp"
#include "m3dm/dataio.hpp"
#include "m3dm/errors.hpp"
#include "m3dm/eval.hpp"
#include "m3dm/fitting.hpp"
#include "m3dm/log.hpp"
#include "m3dm/pipeline.hpp"
#include "m3dm/random.hpp"

using namespace m3dm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

VectorXd gaussian(Eigen::Index n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  VectorXd v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

MatrixXd gaussian(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) m.col(j) = gaussian(r, rng, scale);
  return m;
}

bool bit_equal(const MatrixXd& a, const MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int g_jobs = 1;

struct Experiment {
  RunConfig cfg;
  WorldBundle world;
  std::vector<PairedDataset> datasets;
};

Experiment make_experiment(const RunConfig& cfg) {
  Experiment e{cfg, build_world(cfg), {}};
  GenerateOptions opts;
  opts.n = static_cast<std::size_t>(cfg.integer("dataset.n"));
  opts.seed = cfg.u64("dataset.seed");
  opts.jobs = g_jobs;
  for (const auto& a : e.world.world.attributes) {
    const AttributeHyperplane h = resolve_hyperplane(e.world.world, a.name, cfg);
    e.datasets.push_back(generate_dataset(e.world, h, a.name, opts, cfg).data);
  }
  return e;
}

// grand mean per attribute, one row per method
std::vector<std::vector<double>> run_cv(const Experiment& e, const std::vector<std::string>& methods) {
  std::vector<std::vector<double>> out(methods.size());
  CvOptions opts;
  opts.folds = static_cast<int>(e.cfg.integer("eval.folds"));
  opts.seed = e.cfg.u64("eval.seed");
  opts.jobs = g_jobs;
  const TrainConfig tc = e.cfg.train();
  for (const auto& ds : e.datasets) {
    std::vector<MethodFactory> f;
    for (const auto& m : methods) f.push_back(method_factory(m, ds.attribute, tc));
    const auto reports = l2_cv_many(ds, f, opts);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      out[m].push_back(reports[m].grand_mean);
      for (auto n : reports[m].train_sizes)
        if (n != 16000) throw ContractError("unexpected train split size " + std::to_string(n));
      for (auto n : reports[m].test_sizes)
        if (n != 4000) throw ContractError("unexpected test split size " + std::to_string(n));
    }
  }
  return out;
}

std::vector<std::string> attribute_names(const Experiment& e) {
  std::vector<std::string> a;
  for (const auto& d : e.datasets) a.push_back(d.attribute);
  return a;
}

void print_table(const std::string& title, const std::vector<std::string>& attrs,
                 const std::vector<std::string>& methods, const std::vector<std::vector<double>>& v) {
  std::printf("  %s\n", title.c_str());
  std::vector<std::string> names;
  for (const auto& m : methods) names.push_back(method_display_name(m));
  const std::string t = cv_table(attrs, names, v);
  std::size_t pos = 0;
  while (pos < t.size()) {
    const auto nl = t.find('\n', pos);
    std::printf("    %s\n", t.substr(pos, nl - pos).c_str());
    pos = nl + 1;
  }
  std::fflush(stdout);
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Shared between criteria 1 and 2.
struct Table1 {
  bool ready = false;
  Experiment exp;
  std::vector<double> baseline, ours, nores;
  double seconds = 0.0;
};
Table1 g_table1;

void ensure_table1() {
  if (g_table1.ready) return;
  const auto t0 = Clock::now();
  g_table1.exp = make_experiment(RunConfig());
  auto v = run_cv(g_table1.exp, {"baseline", "ours"});
  g_table1.seconds = seconds_since(t0);
  g_table1.baseline = v[0];
  g_table1.ours = v[1];
  g_table1.ready = true;
}

Outcome criterion1() {
  ensure_table1();
  const auto& t = g_table1;
  int wins = 0;
  for (std::size_t a = 0; a < t.ours.size(); ++a) wins += t.ours[a] < t.baseline[a];
  const double gain = 1.0 - mean(t.ours) / mean(t.baseline);
  print_table("nonlinear world, 5-fold CV L2", attribute_names(t.exp), {"baseline", "ours"}, {t.baseline, t.ours});
  Outcome o;
  o.pass = wins >= 6 && gain >= 0.10 && t.seconds <= 600.0;
  o.detail = "ours < baseline on " + std::to_string(wins) + "/8, mean gain " + fmt("%.1f%%", 100 * gain) +
             ", runtime " + fmt("%.0f s", t.seconds) + " with " + std::to_string(g_jobs) + " worker(s)";
  return o;
}

Outcome criterion2() {
  ensure_table1();
  auto& t = g_table1;
  t.nores = run_cv(t.exp, {"ours-nores"})[0];
  const std::vector<std::string> methods{"baseline", "ours-nores", "ours"};
  print_table("Table 1 layout", attribute_names(t.exp), methods, {t.baseline, t.nores, t.ours});
  Outcome o;
  o.pass = true;
  double lo = 1e300, hi = 0;
  for (std::size_t a = 0; a < t.ours.size(); ++a) {
    const double r = t.nores[a] / t.ours[a];
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    if (!std::isfinite(t.nores[a]) || r < 0.8 || r > 1.5) o.pass = false;
  }
  const std::string table = cv_table(attribute_names(t.exp), {"Baseline", "Ours w.o.res", "Ours"},
                                     {t.baseline, t.nores, t.ours});
  const bool layout = table.find("\nBaseline\t") != std::string::npos &&
                      table.find("\nOurs w.o.res\t") < table.find("\nOurs\t");
  o.pass = o.pass && layout;
  o.detail = "w.o.res / ours ratio in [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "], required [0.8, 1.5]";
  return o;
}

Outcome criterion3() {
  RunConfig cfg;
  cfg.set("world.mode", "linear");
  const Experiment e = make_experiment(cfg);
  const auto v = run_cv(e, {"baseline", "ours"});
  print_table("linear world, 5-fold CV L2", attribute_names(e), {"baseline", "ours"}, v);
  Outcome o;
  o.pass = true;
  double worst = 0.0, top = 0.0;
  for (std::size_t a = 0; a < v[0].size(); ++a) {
    const double rel = std::abs(v[1][a] - v[0][a]) / v[0][a];
    worst = std::max(worst, rel);
    top = std::max({top, v[0][a], v[1][a]});
    if (rel > 0.10 || v[0][a] >= 0.05 || v[1][a] >= 0.05) o.pass = false;
  }
  o.detail = "max relative gap " + fmt("%.1f%%", 100 * worst) + " (limit 10%), max L2 " + fmt("%.4f", top) +
             " (limit 0.05)";
  return o;
}

Outcome criterion4() {
  ensure_table1();
  const auto& e = g_table1.exp;
  const ReferencePopulation ref =
      make_reference(e.world.world, static_cast<std::size_t>(e.cfg.integer("eval.reference_n")),
                     e.cfg.u64("eval.reference_seed"), e.cfg.number("eval.train_fraction"), g_jobs);
  const std::vector<std::string> methods{"baseline", "ours", "identity"};
  std::vector<std::vector<double>> table(methods.size());
  int wins = 0, over_identity = 0;
  for (const auto& ds : e.datasets) {
    const auto rows = run_mahalanobis(ds, ref, methods, e.cfg.train(), e.cfg.u64("eval.seed"));
    for (std::size_t m = 0; m < rows.size(); ++m) table[m].push_back(rows[m].report.average);
    wins += rows[1].report.average < rows[0].report.average;
    over_identity += rows[1].report.average < rows[2].report.average;
  }
  print_table("Mahalanobis distance to the target class", attribute_names(e), methods, table);
  Outcome o;
  o.pass = wins >= 6;
  o.detail = "ours closer than baseline on " + std::to_string(wins) + "/8 (ours closer than identity on " +
             std::to_string(over_identity) + "/8)";
  return o;
}

Outcome criterion5() {
  const RunConfig cfg;
  const WorldBundle w = build_world(cfg);
  double worst = 0.0;
  Outcome o;
  o.pass = true;
  for (const auto& a : w.world.attributes) {
    const double ang = angle_degrees(resolve_hyperplane(w.world, a.name, cfg).normal, a.u_true);
    worst = std::max(worst, ang);
    if (!(ang <= 5.0)) o.pass = false;
  }
  o.detail = "max angle to ground truth " + fmt("%.3f deg", worst) + " over 8 attributes (limit 5)";
  return o;
}

FaceParams random_face(const MorphableBasis& b, Rng& rng) {
  FaceParams p = default_pose(b);
  p.set_flat(gaussian(b.k_flat(), rng));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 3; ++i) p.cam[static_cast<std::size_t>(i)] = 0.15 * u(rng);
  p.cam[3] = 0.2 * u(rng);
  p.cam[4] = 0.2 * u(rng);
  p.cam[5] = 10.0 + u(rng);
  p.light = {1.0 + 0.3 * u(rng), -1.0 + 0.3 * u(rng), 0.3 * u(rng), 0.3 + 0.05 * u(rng), 0.3 + 0.05 * u(rng),
             0.3 + 0.05 * u(rng)};
  return p;
}

Outcome criterion6() {
  const RunConfig cfg;
  const WorldBundle w = build_world(cfg);
  const MorphableBasis& b = w.basis;
  const CameraModel cam = cfg.camera();
  FitConfig lm_only = cfg.fit();
  lm_only.lambda_pixel = 0.0;
  lm_only.optimize_light = false;
  const FitConfig full = cfg.fit();

  Rng rng(mix64(cfg.u64("world.seed"), 0x666974ULL));
  int converged = 0;
  double worst_rms = 0.0, err_lm = 0.0, err_full = 0.0;
  const int n = 50;
  for (int i = 0; i < n; ++i) {
    const FaceParams truth = random_face(b, rng);
    const FitTarget target = render_target(truth, b, cam);
    FitTarget landmarks = target;
    landmarks.sampled_colors.reset();
    const FaceParams init = default_pose(b);

    const FitResult a = fit(landmarks, b, cam, init, lm_only);
    converged += a.converged;
    const EnergyTerm ef = e_feature(a.params, target, b, cam);
    worst_rms = std::max(worst_rms, std::sqrt(ef.residual.squaredNorm() / kNumLandmarks));
    err_lm += (a.params.tex - truth.tex).norm() / truth.tex.norm();

    const FitResult c = fit(target, b, cam, init, full);
    err_full += (c.params.tex - truth.tex).norm() / truth.tex.norm();
  }
  err_lm /= n;
  err_full /= n;
  const double limit = 1e-3 * cam.image_width;
  Outcome o;
  o.pass = converged == n && worst_rms < limit && err_full <= 0.5 * err_lm;
  o.detail = "landmark-only: " + std::to_string(converged) + "/50 converged, max RMS " + fmt("%.2e px", worst_rms) +
             " (limit " + fmt("%.3g", limit) + "); p_tex rel. error " + fmt("%.4f", err_lm) + " -> " +
             fmt("%.4f", err_full) + " with pixels";
  return o;
}

Outcome criterion7() {
  Rng rng(77);
  // Controller backpropagation.
  double worst_ctrl = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    Controller c(6, {8, 8}, draw % 2 == 0, "a", rng());
    c.set_parameters(gaussian(c.n_parameters(), rng, 0.5));
    const MatrixXd P = gaussian(6, 5, rng), T = gaussian(6, 5, rng);
    const VectorXd s = gaussian(5, rng);
    const LossKind kind = draw % 3 == 0 ? LossKind::squared : LossKind::norm;
    const VectorXd g = loss_and_gradient(c, P, s, T, kind).grad;
    const VectorXd theta = c.parameters();
    VectorXd fd(theta.size());
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      VectorXd tp = theta, tm = theta;
      tp[j] += 1e-6;
      tm[j] -= 1e-6;
      c.set_parameters(tp);
      const double fp = loss(c, P, s, T, kind);
      c.set_parameters(tm);
      fd[j] = (fp - loss(c, P, s, T, kind)) / 2e-6;
    }
    worst_ctrl = std::max(worst_ctrl, (g - fd).norm() / fd.norm());
  }

  // Fitting Jacobian.
  const MorphableBasis b = synth_basis(7);
  const CameraModel cam;
  double worst_jac = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const FitTarget t = render_target(random_face(b, rng), b, cam);
    const FitProblem prob(t, b, cam, FitConfig{});
    const VectorXd theta = prob.pack(random_face(b, rng));
    const auto vis = prob.visibility(theta);
    const MatrixXd Ja = prob.jacobian_analytic(theta, vis), Jn = prob.jacobian_numeric(theta, vis);
    worst_jac = std::max(worst_jac, (Ja - Jn).norm() / Jn.norm());
  }

  // Rank-1 closed form against gradient descent.
  const MatrixXd P = gaussian(10, 60, rng);
  const VectorXd a = gaussian(60, rng);
  const MatrixXd Pc = P.colwise() - P.rowwise().mean();
  VectorXd p = VectorXd::Zero(10);
  const double step = 0.3 / a.squaredNorm();
  for (int it = 0; it < 1000000; ++it) {
    const VectorXd grad = -2.0 * (Pc - p * a.transpose()) * a;
    if (grad.norm() < 1e-12) break;
    p -= step * grad;
  }
  const double rank1 = (fit_direction(P, a).p_hat - p).cwiseAbs().maxCoeff();

  // Mahalanobis affine invariance on exact-covariance data.
  const int k = 6;
  const MatrixXd L = gaussian(k, k, rng) + 3.0 * MatrixXd::Identity(k, k);
  std::vector<VectorXd> pts, moved;
  const MatrixXd A = gaussian(k, k, rng) + 2.0 * MatrixXd::Identity(k, k);
  const VectorXd shift = gaussian(k, rng);
  for (int i = 0; i < 1000; ++i) {
    pts.push_back(L * gaussian(k, rng));
    moved.push_back(A * pts.back() + shift);
  }
  const PopulationStats s1 = population_stats(pts, 0.0), s2 = population_stats(moved, 0.0);
  double affine = 0.0;
  for (int i = 0; i < 100; ++i) {
    const VectorXd q = L * gaussian(k, rng, 2.0);
    affine = std::max(affine, std::abs(mahalanobis(q, s1) - mahalanobis(A * q + shift, s2)));
  }

  Outcome o;
  o.pass = worst_ctrl < 1e-4 && worst_jac < 1e-4 && rank1 < 1e-8 && affine < 1e-8;
  o.detail = "backprop " + fmt("%.1e", worst_ctrl) + ", Jacobian " + fmt("%.1e", worst_jac) + " (100 draws each), rank-1 " +
             fmt("%.1e", rank1) + ", affine " + fmt("%.1e", affine);
  return o;
}

Outcome criterion8() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const char* name) {
    if (!ok) failed.push_back(name);
  };
  const RunConfig cfg;
  const WorldBundle w = build_world(cfg);
  const LatentWorld& world = w.world;
  Rng rng(88);

  bool idem = true, shift = true;
  for (int i = 0; i < 1000; ++i) {
    const auto& attr = world.attributes[static_cast<std::size_t>(i) % world.attributes.size()];
    const AttributeHyperplane h = true_hyperplane(attr);
    const VectorXd x = gaussian(world.d, rng, 3.0);
    const VectorXd once = project_to_hyperplane(x, h);
    idem = idem && (project_to_hyperplane(once, h) - once).cwiseAbs().maxCoeff() <= 1e-12;
    const double s = std::uniform_real_distribution<double>(-2, 2)(rng);
    shift = shift && std::abs(semantic_score(once + s * h.normal, h) - s) <= 1e-10;
  }
  check(idem, "projection idempotence");
  check(shift, "score shift");

  const Controller init(world.k(), {256, 256}, true, "a", 3);
  bool identity = true;
  for (int i = 0; i < 100; ++i) {
    const VectorXd p = gaussian(world.k(), rng);
    identity = identity && bit_equal(init.forward(p, std::uniform_real_distribution<double>(-2, 2)(rng)), p);
  }
  check(identity, "identity at init");

  const auto& a0 = world.attributes[0];
  GenerateOptions gen;
  gen.n = 500;
  gen.seed = 9;
  const DatasetFile ds1 = generate_dataset(w, true_hyperplane(a0), a0.name, gen, cfg);
  gen.jobs = 3;
  const DatasetFile ds2 = generate_dataset(w, true_hyperplane(a0), a0.name, gen, cfg);
  bool same = true;
  for (std::size_t i = 0; i < ds1.data.samples.size(); ++i)
    same = same && bit_equal(ds1.data.samples[i].p_pos, ds2.data.samples[i].p_pos) &&
           bit_equal(ds1.data.samples[i].p_neg, ds2.data.samples[i].p_neg);
  check(same, "dataset determinism");

  const auto dir = std::filesystem::temp_directory_path() / "m3dm_acceptance";
  std::filesystem::remove_all(dir);
  save_dataset(dir / "ds", ds1);
  const DatasetFile back = load_dataset(dir / "ds");
  bool rt = back.data.samples.size() == ds1.data.samples.size();
  for (std::size_t i = 0; rt && i < back.data.samples.size(); ++i) {
    const auto &x = ds1.data.samples[i], &y = back.data.samples[i];
    rt = bit_equal(x.w_proj, y.w_proj) && bit_equal(x.p_pos, y.p_pos) && bit_equal(x.p_neg, y.p_neg) &&
         x.s_pos == y.s_pos && x.s_neg == y.s_neg;
  }
  check(rt, "dataset round trip");

  TrainConfig tc = cfg.train();
  tc.hidden = 32;
  tc.epochs = 3;
  tc.seed = 5;
  const TrainResult r1 = train(ds1.data.samples, a0.name, tc);
  const TrainResult r2 = train(back.data.samples, a0.name, tc);
  check(bit_equal(r1.controller.parameters(), r2.controller.parameters()), "training determinism");
  save_container(dir / "c.m3dm", to_container(r1.controller));
  check(bit_equal(controller_from(load_container(dir / "c.m3dm")).parameters(), r1.controller.parameters()),
        "weight round trip");

  CvOptions opts;
  opts.seed = 4;
  const auto f = method_factory("ours", a0.name, tc);
  const CvReport c1 = l2_cv(ds1.data, f, opts);
  opts.jobs = 3;
  const CvReport c2 = l2_cv(ds1.data, f, opts);
  check(c1.fold_l2 == c2.fold_l2, "evaluation determinism");
  std::filesystem::remove_all(dir);

  Outcome o;
  o.pass = failed.empty();
  if (failed.empty()) {
    o.detail = "projection, score shift, identity at init, round trips, seed determinism";
  } else {
    for (const auto& s : failed) o.detail += (o.detail.empty() ? "failed: " : ", ") + s;
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  g_jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      std::string list = argv[++i];
      std::size_t pos = 0;
      while (pos < list.size()) {
        const auto comma = list.find(',', pos);
        only.insert(std::stoi(list.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    } else if (!std::strcmp(argv[i], "--jobs") && i + 1 < argc) {
      g_jobs = std::max(1, std::atoi(argv[++i]));
    }
  }

  const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                       criterion5, criterion6, criterion7, criterion8};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d: %s  %s  [%.0f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
