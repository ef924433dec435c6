// m3dm: command-line driver for the attribute-editing pipeline.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "m3dm/config.hpp"
#include "m3dm/dataio.hpp"
#include "m3dm/errors.hpp"
#include "m3dm/log.hpp"
#include "m3dm/pipeline.hpp"

using namespace m3dm;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  int jobs = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value run configuration file");
  cmd->add_option("--set", c.overrides, "override one config entry, key=value (repeatable)");
  cmd->add_option("--jobs", c.jobs, "worker threads (default: config 'jobs')");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig() : RunConfig::load(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ContractError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

int jobs_of(const Common& c, const RunConfig& cfg) {
  return c.jobs > 0 ? c.jobs : static_cast<int>(cfg.integer("jobs"));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void emit_report(const std::string& out_prefix, const std::string& table, const json& report) {
  std::cout << table;
  if (out_prefix.empty()) return;
  write_text(out_prefix + ".tsv", table);
  write_text(out_prefix + ".json", report.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute editing of 3D morphable face parameters"};
  app.require_subcommand(1);

  // world init
  Common world_c;
  std::string world_out;
  auto* world = app.add_subcommand("world", "latent world management")->require_subcommand(1);
  auto* world_init = world->add_subcommand("init", "build and save a latent world and synthetic basis");
  add_common(world_init, world_c);
  world_init->add_option("--out", world_out, "output directory")->required();

  // hyperplane fit
  Common hp_c;
  std::string hp_world, hp_attr, hp_out;
  std::size_t hp_n = 2000;
  double hp_margin = 0.5;
  std::uint64_t hp_seed = 3;
  auto* hp = app.add_subcommand("hyperplane", "attribute hyperplanes")->require_subcommand(1);
  auto* hp_fit = hp->add_subcommand("fit", "linear SVM on labeled latents");
  add_common(hp_fit, hp_c);
  hp_fit->add_option("--world", hp_world)->required();
  hp_fit->add_option("--attr", hp_attr)->required();
  hp_fit->add_option("--n", hp_n);
  hp_fit->add_option("--margin", hp_margin);
  hp_fit->add_option("--seed", hp_seed);
  hp_fit->add_option("--out", hp_out)->required();

  // dataset generate / reference
  Common ds_c;
  std::string ds_world, ds_attr, ds_out, ds_mode = "direct", ds_hyperplane;
  std::size_t ds_n = 20000;
  std::uint64_t ds_seed = 0;
  bool ds_all = false;
  auto* ds = app.add_subcommand("dataset", "paired datasets")->require_subcommand(1);
  auto* ds_gen = ds->add_subcommand("generate", "generate a paired dataset");
  add_common(ds_gen, ds_c);
  ds_gen->add_option("--world", ds_world)->required();
  auto* attr_opt = ds_gen->add_option("--attr", ds_attr);
  auto* all_opt = ds_gen->add_flag("--all-attrs", ds_all, "one dataset per attribute under --out");
  attr_opt->excludes(all_opt);
  ds_gen->add_option("--n", ds_n);
  ds_gen->add_option("--mode", ds_mode)->check(CLI::IsMember({"direct", "fitted"}));
  ds_gen->add_option("--hyperplane", ds_hyperplane, "hyperplane container (default: per config)");
  ds_gen->add_option("--seed", ds_seed, "dataset seed (default: config dataset.seed)");
  ds_gen->add_option("--out", ds_out)->required();

  Common ref_c;
  std::string ref_world, ref_out;
  std::size_t ref_n = 20000;
  std::uint64_t ref_seed = 6;
  auto* ds_ref = ds->add_subcommand("reference", "unpaired reference population with oracle labels");
  add_common(ds_ref, ref_c);
  ds_ref->add_option("--world", ref_world)->required();
  ds_ref->add_option("--n", ref_n);
  ds_ref->add_option("--seed", ref_seed);
  ds_ref->add_option("--out", ref_out)->required();

  // baseline fit / controller train
  Common bl_c;
  std::string bl_dataset, bl_out, bl_target = "scores";
  std::uint64_t bl_seed = 0;
  auto* bl = app.add_subcommand("baseline", "global-direction baseline")->require_subcommand(1);
  auto* bl_fit = bl->add_subcommand("fit", "rank-1 least squares direction");
  add_common(bl_fit, bl_c);
  bl_fit->add_option("--dataset", bl_dataset)->required();
  bl_fit->add_option("--target", bl_target)->check(CLI::IsMember({"scores", "labels"}));
  bl_fit->add_option("--seed", bl_seed);
  bl_fit->add_option("--out", bl_out)->required();

  Common ct_c;
  std::string ct_dataset, ct_out;
  bool ct_nores = false;
  std::uint64_t ct_seed = 0;
  auto* ct = app.add_subcommand("controller", "conditional attribute controller")->require_subcommand(1);
  auto* ct_train = ct->add_subcommand("train", "train on a paired dataset");
  add_common(ct_train, ct_c);
  ct_train->add_option("--dataset", ct_dataset)->required();
  ct_train->add_flag("--no-residual", ct_nores, "emit f(p, s) directly");
  ct_train->add_option("--seed", ct_seed, "training seed (default: config train.seed)");
  ct_train->add_option("--out", ct_out)->required();

  // transform
  std::string tf_weights, tf_in, tf_out;
  double tf_score = 0.0, tf_source = 0.0;
  auto* tf = app.add_subcommand("transform", "apply a trained controller or direction");
  tf->add_option("--weights", tf_weights)->required();
  tf->add_option("--in", tf_in, "parameter vector file")->required();
  tf->add_option("--score", tf_score, "target score")->required();
  tf->add_option("--source-score", tf_source, "source score (directions only)");
  tf->add_option("--out", tf_out)->required();

  // eval l2cv / mahalanobis
  Common ev_c;
  std::string ev_datasets, ev_methods = "baseline,ours-nores,ours", ev_reference, ev_out;
  int ev_folds = 5;
  std::uint64_t ev_seed = 5;
  auto* ev = app.add_subcommand("eval", "evaluation protocols")->require_subcommand(1);
  auto* ev_l2 = ev->add_subcommand("l2cv", "k-fold cross-validated L2 (one column per dataset)");
  add_common(ev_l2, ev_c);
  ev_l2->add_option("--dataset", ev_datasets, "comma-separated dataset directories")->required();
  ev_l2->add_option("--methods", ev_methods);
  ev_l2->add_option("--folds", ev_folds);
  ev_l2->add_option("--seed", ev_seed);
  ev_l2->add_option("--out", ev_out, "report prefix (.tsv and .json)");
  auto* ev_mh = ev->add_subcommand("mahalanobis", "distance to the target-class reference population");
  add_common(ev_mh, ev_c);
  ev_mh->add_option("--dataset", ev_datasets, "comma-separated dataset directories")->required();
  ev_mh->add_option("--reference", ev_reference)->required();
  ev_mh->add_option("--methods", ev_methods);
  ev_mh->add_option("--seed", ev_seed);
  ev_mh->add_option("--out", ev_out, "report prefix (.tsv and .json)");

  // export sweep / mesh
  std::string ex_world, ex_weights, ex_params, ex_out, ex_scores;
  auto* ex = app.add_subcommand("export", "OBJ export")->require_subcommand(1);
  auto* ex_sweep = ex->add_subcommand("sweep", "one mesh per target score");
  ex_sweep->add_option("--world", ex_world)->required();
  ex_sweep->add_option("--weights", ex_weights)->required();
  ex_sweep->add_option("--params", ex_params)->required();
  ex_sweep->add_option("--scores", ex_scores, "comma-separated scores (default -2:0.5:2)");
  ex_sweep->add_option("--out", ex_out)->required();
  auto* ex_mesh = ex->add_subcommand("mesh", "mesh for one parameter vector");
  ex_mesh->add_option("--world", ex_world)->required();
  ex_mesh->add_option("--params", ex_params)->required();
  ex_mesh->add_option("--out", ex_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: usage: " << msg << "\n";
    return 2;
  }

  try {
    if (*world_init) {
      const RunConfig cfg = resolve(world_c);
      save_world(world_out, build_world(cfg));
      std::cout << "world written to " << world_out << "\n";
    } else if (*hp_fit) {
      const RunConfig cfg = resolve(hp_c);
      const WorldBundle w = load_world(hp_world);
      SvmConfig svm;
      svm.lambda = cfg.number("hyperplane.lambda");
      svm.iterations = static_cast<int>(cfg.integer("hyperplane.iterations"));
      const auto labeled = sample_labeled(w.world, hp_attr, hp_n, hp_margin, hp_seed);
      const AttributeHyperplane h = fit_hyperplane(labeled, svm);
      save_container(hp_out, to_container(h, hp_attr));
      std::cout << "angle to ground truth: " << fmt(angle_degrees(h.normal, w.world.attribute(hp_attr).u_true))
                << " deg, train accuracy " << fmt(h.train_accuracy) << "\n";
    } else if (*ds_gen) {
      const RunConfig cfg = resolve(ds_c);
      const WorldBundle w = load_world(ds_world);
      if (!ds_all && ds_attr.empty()) throw ContractError("dataset generate needs --attr NAME or --all-attrs");
      GenerateOptions opts;
      opts.n = ds_n;
      opts.seed = ds_gen->count("--seed") ? ds_seed : cfg.u64("dataset.seed");
      opts.mode = ds_mode;
      opts.jobs = jobs_of(ds_c, cfg);
      std::vector<std::string> attrs;
      if (ds_all)
        for (const auto& a : w.world.attributes) attrs.push_back(a.name);
      else
        attrs.push_back(ds_attr);
      for (const auto& a : attrs) {
        const AttributeHyperplane h = ds_hyperplane.empty()
                                          ? resolve_hyperplane(w.world, a, cfg)
                                          : hyperplane_from(load_container(ds_hyperplane, PayloadKind::hyperplane));
        const fs::path dir = ds_all ? fs::path(ds_out) / a : fs::path(ds_out);
        save_dataset(dir, generate_dataset(w, h, a, opts, cfg));
        std::cout << "dataset " << a << " (" << ds_n << " pairs, " << ds_mode << ") written to " << dir.string()
                  << "\n";
      }
    } else if (*ds_ref) {
      const RunConfig cfg = resolve(ref_c);
      const WorldBundle w = load_world(ref_world);
      fs::create_directories(ref_out);
      save_reference(ref_out, make_reference(w.world, ref_n, ref_seed, cfg.number("eval.train_fraction"),
                                             jobs_of(ref_c, cfg)));
      std::cout << "reference population written to " << ref_out << "\n";
    } else if (*bl_fit) {
      const RunConfig cfg = resolve(bl_c);
      const DatasetFile d = load_dataset(bl_dataset);
      BaselineMethod m(d.data.attribute,
                       BaselineOptions{bl_target == "labels" ? BaselineTarget::labels : BaselineTarget::scores, true});
      m.train(d.data.samples, bl_fit->count("--seed") ? bl_seed : cfg.u64("train.seed"));
      GlobalDirection dir = m.direction();
      dir.train_size = d.data.samples.size();
      save_container(bl_out, to_container(dir));
      std::cout << "direction for " << dir.attribute << " written to " << bl_out << " (alpha " << fmt(dir.scale_alpha)
                << ")\n";
    } else if (*ct_train) {
      const RunConfig cfg = resolve(ct_c);
      const DatasetFile d = load_dataset(ct_dataset);
      TrainConfig tc = cfg.train();
      tc.residual = !ct_nores;
      if (ct_train->count("--seed")) tc.seed = ct_seed;
      const TrainResult r = train(d.data.samples, d.data.attribute, tc);
      save_container(ct_out, to_container(r.controller));
      std::cout << "controller for " << d.data.attribute << " written to " << ct_out << " (final loss "
                << fmt(r.loss_history.back()) << ")\n";
    } else if (*tf) {
      const Container c = load_container(tf_weights);
      const VectorXd p = read_vector(tf_in);
      VectorXd out;
      if (c.kind == PayloadKind::controller) {
        const Controller ctrl = controller_from(c);
        if (p.size() != ctrl.k())
          throw ContractError("parameter vector has " + std::to_string(p.size()) + " entries, controller expects " +
                              std::to_string(ctrl.k()));
        out = ctrl.forward(p, tf_score);
      } else if (c.kind == PayloadKind::direction) {
        out = apply(direction_from(c), p, tf_source, tf_score);
      } else {
        throw DataError(std::string("cannot transform with a ") + to_string(c.kind) + " container");
      }
      write_vector(tf_out, out);
    } else if (*ev_l2) {
      const RunConfig cfg = resolve(ev_c);
      const TrainConfig tc = cfg.train();
      const auto methods = split_list(ev_methods);
      const auto dirs = split_list(ev_datasets);
      CvOptions opts;
      opts.folds = ev_folds;
      opts.seed = ev_seed;
      opts.jobs = jobs_of(ev_c, cfg);
      std::vector<std::string> attrs, names;
      std::vector<std::vector<double>> table(methods.size());
      json report = {{"protocol", "l2cv"}, {"folds", ev_folds}, {"seed", ev_seed},
                     {"config_fingerprint", cfg.fingerprint()}, {"config", cfg.resolved()},
                     {"direction_convention", "mixed (dataset eval coins)"}};
      json per_attr = json::array();
      for (const auto& dir : dirs) {
        const DatasetFile d = load_dataset(dir);
        attrs.push_back(d.data.attribute);
        std::vector<MethodFactory> factories;
        for (const auto& m : methods) factories.push_back(method_factory(m, d.data.attribute, tc));
        const auto reports = l2_cv_many(d.data, factories, opts);
        json entry = {{"attribute", d.data.attribute}, {"dataset_seed", d.data.seed}, {"mode", d.mode}};
        json rows = json::array();
        for (std::size_t m = 0; m < reports.size(); ++m) {
          table[m].push_back(reports[m].grand_mean);
          rows.push_back({{"method", reports[m].method}, {"fold_l2", reports[m].fold_l2},
                          {"grand_mean", reports[m].grand_mean}, {"train_sizes", reports[m].train_sizes},
                          {"test_sizes", reports[m].test_sizes}});
        }
        entry["methods"] = rows;
        per_attr.push_back(entry);
      }
      for (const auto& m : methods) names.push_back(method_display_name(m));
      report["attributes"] = per_attr;
      emit_report(ev_out, "# config " + cfg.fingerprint() + "\n" + cv_table(attrs, names, table), report);
    } else if (*ev_mh) {
      const RunConfig cfg = resolve(ev_c);
      const TrainConfig tc = cfg.train();
      const auto methods = split_list(ev_methods);
      const ReferencePopulation ref = load_reference(ev_reference);
      std::vector<std::string> attrs, names;
      std::vector<std::vector<double>> table(methods.size());
      json report = {{"protocol", "mahalanobis"}, {"seed", ev_seed}, {"reference", "synthetic reference"},
                     {"train_fraction", ref.train_fraction}, {"config_fingerprint", cfg.fingerprint()},
                     {"config", cfg.resolved()}};
      json per_attr = json::array();
      for (const auto& dir : split_list(ev_datasets)) {
        const DatasetFile d = load_dataset(dir);
        attrs.push_back(d.data.attribute);
        const auto rows = run_mahalanobis(d.data, ref, methods, tc, ev_seed);
        json jr = json::array();
        for (std::size_t m = 0; m < rows.size(); ++m) {
          table[m].push_back(rows[m].report.average);
          jr.push_back({{"method", rows[m].method}, {"forward", rows[m].report.forward},
                        {"backward", rows[m].report.backward}, {"average", rows[m].report.average}});
        }
        per_attr.push_back({{"attribute", d.data.attribute}, {"methods", jr}});
      }
      for (const auto& m : methods) names.push_back(method_display_name(m));
      report["attributes"] = per_attr;
      emit_report(ev_out, "# config " + cfg.fingerprint() + "\n" + cv_table(attrs, names, table), report);
    } else if (*ex_sweep) {
      const WorldBundle w = load_world(ex_world);
      const Controller ctrl = controller_from(load_container(ex_weights, PayloadKind::controller));
      std::vector<double> scores = default_sweep_scores();
      if (!ex_scores.empty()) {
        scores.clear();
        for (const auto& s : split_list(ex_scores)) scores.push_back(std::stod(s));
      }
      for (const auto& f : export_score_sweep(ctrl, read_vector(ex_params), scores, w.basis, ex_out))
        std::cout << f.string() << "\n";
    } else if (*ex_mesh) {
      const WorldBundle w = load_world(ex_world);
      const FaceParams fp = FaceParams::from_flat(w.basis, read_vector(ex_params));
      export_obj(eval_shape(w.basis, fp.id, fp.expr), eval_texture(w.basis, fp.tex), w.basis.triangles, ex_out);
    }
  } catch (const Error& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << e.kind() << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
