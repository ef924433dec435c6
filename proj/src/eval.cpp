#include "m3dm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "m3dm/errors.hpp"
#include "m3dm/parallel.hpp"
#include "m3dm/random.hpp"

namespace m3dm {
namespace {

constexpr std::uint64_t kEvalCoinSalt = 0x6576616c636f696eULL;

}  // namespace

BaselineMethod::BaselineMethod(std::string attribute, BaselineOptions opts, std::string label)
    : attribute_(std::move(attribute)), opts_(opts), label_(std::move(label)) {}

void BaselineMethod::train(std::span<const PairedSample> samples, std::uint64_t seed) {
  // The gain refit sees the same epoch-0 coins the controller sees.
  std::unique_ptr<bool[]> coins(new bool[samples.size()]);
  for (std::size_t i = 0; i < samples.size(); ++i) coins[i] = swap_coin(seed, 0, samples[i].id, 0.5);
  dir_ = fit_baseline(samples, std::span<const bool>(coins.get(), samples.size()), attribute_, opts_);
  dir_.train_seed = seed;
}

VectorXd BaselineMethod::transform(const VectorXd& p_src, double s_src, double s_trg) const {
  if (opts_.target == BaselineTarget::labels) {
    s_src = s_src >= 0.0 ? 1.0 : -1.0;
    s_trg = s_trg >= 0.0 ? 1.0 : -1.0;
  }
  return apply(dir_, p_src, s_src, s_trg);
}

ControllerMethod::ControllerMethod(std::string attribute, TrainConfig cfg, std::string label)
    : attribute_(std::move(attribute)), cfg_(cfg), label_(std::move(label)) {}

void ControllerMethod::train(std::span<const PairedSample> samples, std::uint64_t seed) {
  TrainConfig cfg = cfg_;
  cfg.seed = seed;
  result_ = m3dm::train(samples, attribute_, cfg);
}

VectorXd ControllerMethod::transform(const VectorXd& p_src, double, double s_trg) const {
  return result_.controller.forward(p_src, s_trg);
}

bool eval_coin(std::uint64_t dataset_seed, std::uint64_t sample_id) {
  return (mix64(dataset_seed ^ kEvalCoinSalt, sample_id) & 1ULL) != 0;
}

Oriented orient(const PairedSample& s, bool positive_is_source) {
  return positive_is_source ? Oriented{&s.p_pos, s.s_pos, &s.p_neg, s.s_neg}
                            : Oriented{&s.p_neg, s.s_neg, &s.p_pos, s.s_pos};
}

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 2) throw ContractError("cross validation needs at least 2 folds");
  if (n == 0 || n % static_cast<std::size_t>(folds) != 0)
    throw ContractError("dataset size " + std::to_string(n) + " is not divisible into " + std::to_string(folds) +
                        " folds");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t per = n / static_cast<std::size_t>(folds);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
  for (std::size_t f = 0; f < out.size(); ++f) {
    out[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(f * per),
                  idx.begin() + static_cast<std::ptrdiff_t>((f + 1) * per));
    std::sort(out[f].begin(), out[f].end());
  }
  return out;
}

std::vector<CvReport> l2_cv_many(const PairedDataset& dataset, const std::vector<MethodFactory>& factories,
                                 const CvOptions& opts,
                                 const std::function<void(int, std::size_t, const EditMethod&)>& on_fold) {
  const auto folds = make_folds(dataset.samples.size(), opts.folds, opts.seed);
  const std::size_t nf = folds.size();
  const std::size_t nm = factories.size();
  std::vector<std::vector<double>> l2(nm, std::vector<double>(nf, 0.0));
  std::vector<std::size_t> train_sizes(nf), test_sizes(nf);
  std::vector<std::string> names(nm);

  parallel_for(nf, opts.jobs, [&](std::size_t f) {
    std::vector<char> in_test(dataset.samples.size(), 0);
    for (std::size_t i : folds[f]) in_test[i] = 1;
    std::vector<PairedSample> train_set;
    train_set.reserve(dataset.samples.size() - folds[f].size());
    for (std::size_t i = 0; i < dataset.samples.size(); ++i)
      if (!in_test[i]) train_set.push_back(dataset.samples[i]);
    train_sizes[f] = train_set.size();
    test_sizes[f] = folds[f].size();
    const std::uint64_t fold_seed = mix64(opts.seed, f);

    for (std::size_t m = 0; m < nm; ++m) {
      std::unique_ptr<EditMethod> method = factories[m]();
      names[m] = method->name();
      try {
        method->train(train_set, fold_seed);
      } catch (const Error& e) {
        throw NumericalError("fold " + std::to_string(f) + ": " + method->name() + " training failed: " + e.what());
      }
      double total = 0.0;
      for (std::size_t i : folds[f]) {
        const PairedSample& s = dataset.samples[i];
        const Oriented o = orient(s, eval_coin(dataset.seed, s.id));
        total += (*o.p_trg - method->transform(*o.p_src, o.s_src, o.s_trg)).norm();
      }
      l2[m][f] = total / static_cast<double>(folds[f].size());
      if (on_fold) on_fold(static_cast<int>(f), m, *method);
    }
  });

  std::vector<CvReport> reports;
  for (std::size_t m = 0; m < nm; ++m) {
    CvReport r;
    r.attribute = dataset.attribute;
    r.method = names[m];
    r.fold_l2 = l2[m];
    r.grand_mean = std::accumulate(l2[m].begin(), l2[m].end(), 0.0) / static_cast<double>(nf);
    r.train_sizes = train_sizes;
    r.test_sizes = test_sizes;
    reports.push_back(std::move(r));
  }
  return reports;
}

CvReport l2_cv(const PairedDataset& dataset, const MethodFactory& factory, const CvOptions& opts) {
  return l2_cv_many(dataset, {factory}, opts).front();
}

PopulationStats population_stats(std::span<const VectorXd> params, double epsilon) {
  if (params.size() < 2) throw ContractError("population statistics need at least 2 samples");
  const Eigen::Index k = params.front().size();
  const double n = static_cast<double>(params.size());
  PopulationStats st;
  st.count = params.size();
  st.mean = VectorXd::Zero(k);
  for (const auto& p : params) {
    if (p.size() != k) throw ContractError("population samples have inconsistent dimensions");
    st.mean += p;
  }
  st.mean /= n;
  st.covariance = MatrixXd::Zero(k, k);
  for (const auto& p : params) {
    const VectorXd c = p - st.mean;
    st.covariance.selfadjointView<Eigen::Lower>().rankUpdate(c);
  }
  st.covariance = st.covariance.selfadjointView<Eigen::Lower>();
  st.covariance /= (n - 1.0);
  st.epsilon = epsilon >= 0.0 ? epsilon : 1e-6 * st.covariance.trace() / static_cast<double>(k);
  MatrixXd reg = st.covariance;
  reg.diagonal().array() += st.epsilon;
  st.factor.compute(reg);
  return st;
}

double mahalanobis(const VectorXd& p, const PopulationStats& stats) {
  if (p.size() != stats.mean.size()) throw ContractError("mahalanobis: dimension mismatch");
  if (stats.factor.info() != Eigen::Success)
    throw NumericalError("covariance is not positive definite; increase the shrinkage epsilon");
  const VectorXd z = stats.factor.matrixL().solve(p - stats.mean);
  return z.norm();
}

std::size_t ReferencePopulation::train_count() const {
  return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(size())));
}

ReferencePopulation make_reference(const LatentWorld& world, std::size_t n, std::uint64_t seed,
                                   double train_fraction, int jobs) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ContractError("train_fraction must lie in (0, 1)");
  if (n < 10) throw ContractError("reference population needs at least 10 draws");
  ReferencePopulation pop;
  pop.seed = seed;
  pop.train_fraction = train_fraction;
  for (const auto& a : world.attributes) pop.attributes.push_back(a.name);
  const auto cols = static_cast<Eigen::Index>(n);
  pop.W.resize(world.d, cols);
  pop.P.resize(world.k(), cols);
  pop.labels.resize(static_cast<Eigen::Index>(pop.attributes.size()), cols);
  parallel_for(n, jobs, [&](std::size_t i) {
    Rng rng = sample_rng(seed, i);
    std::normal_distribution<double> gauss(0.0, 1.0);
    VectorXd w(world.d);
    for (Eigen::Index j = 0; j < world.d; ++j) w[j] = gauss(rng);
    const auto c = static_cast<Eigen::Index>(i);
    pop.W.col(c) = w;
    pop.P.col(c) = generate(world, w);
    for (std::size_t a = 0; a < pop.attributes.size(); ++a)
      pop.labels(static_cast<Eigen::Index>(a), c) = label(world, pop.attributes[a], w);
  });
  return pop;
}

ReferenceSplit split_reference(const ReferencePopulation& pop, std::string_view attribute,
                               const AttributeHyperplane& h) {
  const auto it = std::find(pop.attributes.begin(), pop.attributes.end(), attribute);
  if (it == pop.attributes.end())
    throw ContractError("reference population has no labels for attribute '" + std::string(attribute) + "'");
  const auto row = static_cast<Eigen::Index>(it - pop.attributes.begin());
  const std::size_t n_train = pop.train_count();
  ReferenceSplit split;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    ReferenceSample r{pop.P.col(c), semantic_score(pop.W.col(c), h), pop.labels(row, c)};
    (i < n_train ? split.train : split.test).push_back(std::move(r));
  }
  return split;
}

ClassPopulations class_populations(std::span<const ReferenceSample> train, double epsilon) {
  std::vector<VectorXd> pos, neg;
  for (const auto& r : train) (r.label > 0 ? pos : neg).push_back(r.p);
  if (pos.size() < 2 || neg.size() < 2) throw ContractError("empty class population in the reference split");
  return {population_stats(pos, epsilon), population_stats(neg, epsilon)};
}

MahalanobisReport mahalanobis_protocol(const ClassTransform& to_other_class, std::span<const ReferenceSample> test,
                                       const ClassPopulations& pops) {
  double fwd = 0.0, bwd = 0.0;
  std::size_t n_fwd = 0, n_bwd = 0;
  for (const auto& r : test) {
    const VectorXd out = to_other_class(r);
    if (r.label > 0) {
      fwd += mahalanobis(out, pops.negative);
      ++n_fwd;
    } else {
      bwd += mahalanobis(out, pops.positive);
      ++n_bwd;
    }
  }
  if (n_fwd == 0 || n_bwd == 0) throw ContractError("test split lacks one of the attribute classes");
  MahalanobisReport rep;
  rep.forward = fwd / static_cast<double>(n_fwd);
  rep.backward = bwd / static_cast<double>(n_bwd);
  rep.average = 0.5 * (rep.forward + rep.backward);
  return rep;
}

GlobalDirection fit_reference_baseline(std::span<const ReferenceSample> train, const std::string& attribute) {
  if (train.empty()) throw ContractError("empty reference split");
  MatrixXd P(train.front().p.size(), static_cast<Eigen::Index>(train.size()));
  VectorXd a(static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    P.col(static_cast<Eigen::Index>(i)) = train[i].p;
    a[static_cast<Eigen::Index>(i)] = train[i].label;
  }
  GlobalDirection dir = fit_direction(P, a);
  dir.attribute = attribute;
  return dir;
}

}  // namespace m3dm
