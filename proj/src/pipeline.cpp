#include "m3dm/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "m3dm/errors.hpp"
#include "m3dm/log.hpp"
#include "m3dm/parallel.hpp"

namespace m3dm {

WorldBundle build_world(const RunConfig& cfg) {
  WorldBundle w;
  w.basis = synth_basis(cfg.u64("world.seed"), cfg.basis());
  w.world = make_world(cfg.world(w.basis.k_flat()));
  w.config = json::object();
  for (const auto& key : RunConfig::keys())
    if (key.rfind("world.", 0) == 0 || key.rfind("basis.", 0) == 0) w.config[key] = cfg.get(key);
  return w;
}

FaceParams default_pose(const MorphableBasis& basis) {
  FaceParams p = FaceParams::zeros(basis);
  p.cam = {0.0, 0.0, 0.0, 0.0, 0.0, 10.0};
  p.light = {1.0, -1.0, 0.0, 0.3, 0.3, 0.3};
  return p;
}

AttributeHyperplane resolve_hyperplane(const LatentWorld& world, const std::string& attribute, const RunConfig& cfg) {
  world.attribute(attribute);
  const std::string& how = cfg.get("dataset.hyperplane");
  if (how == "true") return true_hyperplane(world.attribute(attribute));
  if (how != "svm") throw ContractError("config key 'dataset.hyperplane': expected true or svm, got '" + how + "'");
  std::size_t index = 0;
  while (world.attributes[index].name != attribute) ++index;
  const auto labeled = sample_labeled(world, attribute, static_cast<std::size_t>(cfg.integer("hyperplane.n")),
                                      cfg.number("hyperplane.margin"), mix64(cfg.u64("hyperplane.seed"), index));
  SvmConfig svm;
  svm.lambda = cfg.number("hyperplane.lambda");
  svm.iterations = static_cast<int>(cfg.integer("hyperplane.iterations"));
  return fit_hyperplane(labeled, svm);
}

VectorXd refit_params(const VectorXd& p, const MorphableBasis& basis, const CameraModel& camera,
                      const FitConfig& fit_cfg) {
  FaceParams truth = default_pose(basis);
  truth.set_flat(p);
  const FitTarget target = render_target(truth, basis, camera);
  const FitResult r = fit(target, basis, camera, default_pose(basis), fit_cfg);
  if (!r.converged) log::debug("refit: fitting stopped at the iteration cap");
  return r.params.flat();
}

DatasetFile generate_dataset(const WorldBundle& w, const AttributeHyperplane& h, const std::string& attribute,
                             const GenerateOptions& opts, const RunConfig& cfg) {
  if (opts.mode != "direct" && opts.mode != "fitted")
    throw ContractError("dataset mode must be direct or fitted, got '" + opts.mode + "'");
  DatasetFile out;
  out.data = generate_pairs(w.world, h, attribute, opts.n, opts.seed, opts.jobs);
  out.dims = {w.basis.k_id(), w.basis.k_expr(), w.basis.k_tex()};
  out.latent_dim = w.world.d;
  out.mode = opts.mode;
  if (opts.mode == "fitted") {
    const CameraModel camera = cfg.camera();
    const FitConfig fit_cfg = cfg.fit();
    parallel_for(out.data.samples.size(), opts.jobs, [&](std::size_t i) {
      auto& s = out.data.samples[i];
      s.p_pos = refit_params(s.p_pos, w.basis, camera, fit_cfg);
      s.p_neg = refit_params(s.p_neg, w.basis, camera, fit_cfg);
    });
  }
  quantize_f32(out.data);
  return out;
}

MethodFactory method_factory(const std::string& name, const std::string& attribute, const TrainConfig& train) {
  if (name == "baseline") return [=] { return std::make_unique<BaselineMethod>(attribute); };
  if (name == "baseline-labels")
    return [=] {
      return std::make_unique<BaselineMethod>(attribute, BaselineOptions{BaselineTarget::labels, true},
                                              "Baseline (labels)");
    };
  if (name == "ours" || name == "ours-nores") {
    TrainConfig t = train;
    t.residual = name == "ours";
    const std::string label = method_display_name(name);
    return [=] { return std::make_unique<ControllerMethod>(attribute, t, label); };
  }
  if (name == "identity") return [] { return std::make_unique<IdentityMethod>(); };
  throw ContractError("unknown method '" + name + "' (expected baseline, baseline-labels, ours, ours-nores, identity)");
}

std::string method_display_name(const std::string& name) {
  if (name == "baseline") return "Baseline";
  if (name == "baseline-labels") return "Baseline (labels)";
  if (name == "ours") return "Ours";
  if (name == "ours-nores") return "Ours w.o.res";
  if (name == "identity") return "Identity";
  return name;
}

std::vector<MahalanobisRow> run_mahalanobis(const PairedDataset& ds, const ReferencePopulation& ref,
                                            const std::vector<std::string>& methods, const TrainConfig& train,
                                            std::uint64_t seed) {
  const ReferenceSplit split = split_reference(ref, ds.attribute, ds.hyperplane);
  const ClassPopulations pops = class_populations(split.train);
  std::vector<MahalanobisRow> rows;
  for (const auto& m : methods) {
    ClassTransform t;
    if (m == "identity") {
      t = [](const ReferenceSample& r) { return r.p; };
    } else if (m == "baseline" || m == "baseline-labels") {
      const GlobalDirection dir = fit_reference_baseline(split.train, ds.attribute);
      t = [dir](const ReferenceSample& r) {
        const double a = r.label > 0 ? 1.0 : -1.0;
        return apply(dir, r.p, a, -a);
      };
    } else if (m == "ours" || m == "ours-nores") {
      TrainConfig tc = train;
      tc.residual = m == "ours";
      tc.seed = seed;
      auto ctrl = std::make_shared<Controller>(m3dm::train(ds.samples, ds.attribute, tc).controller);
      const double s_max = ds.s_max;
      t = [ctrl, s_max](const ReferenceSample& r) {
        return ctrl->forward(r.p, std::clamp(-r.score, -s_max, s_max));
      };
    } else {
      throw ContractError("unknown method '" + m + "' for the mahalanobis protocol");
    }
    rows.push_back({method_display_name(m), mahalanobis_protocol(t, split.test, pops)});
  }
  return rows;
}

}  // namespace m3dm
