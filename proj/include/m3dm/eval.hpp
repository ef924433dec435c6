#pragma once

// Quantitative protocols: k-fold cross-validated L2 on paired data and the
// Mahalanobis distance of edited parameters to a reference class population.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "m3dm/baseline.hpp"
#include "m3dm/controller.hpp"
#include "m3dm/latent_world.hpp"

namespace m3dm {

/// A trainable attribute editor: p~ = transform(p_src, s_src, s_trg).
class EditMethod {
 public:
  virtual ~EditMethod() = default;
  virtual std::string name() const = 0;
  virtual void train(std::span<const PairedSample> samples, std::uint64_t seed) = 0;
  virtual VectorXd transform(const VectorXd& p_src, double s_src, double s_trg) const = 0;
};

using MethodFactory = std::function<std::unique_ptr<EditMethod>()>;

class BaselineMethod : public EditMethod {
 public:
  explicit BaselineMethod(std::string attribute, BaselineOptions opts = {}, std::string label = "Baseline");
  std::string name() const override { return label_; }
  void train(std::span<const PairedSample> samples, std::uint64_t seed) override;
  VectorXd transform(const VectorXd& p_src, double s_src, double s_trg) const override;
  const GlobalDirection& direction() const { return dir_; }

 private:
  std::string attribute_;
  BaselineOptions opts_;
  std::string label_;
  GlobalDirection dir_;
};

class ControllerMethod : public EditMethod {
 public:
  ControllerMethod(std::string attribute, TrainConfig cfg, std::string label);
  std::string name() const override { return label_; }
  void train(std::span<const PairedSample> samples, std::uint64_t seed) override;
  VectorXd transform(const VectorXd& p_src, double s_src, double s_trg) const override;
  const TrainResult& result() const { return result_; }

 private:
  std::string attribute_;
  TrainConfig cfg_;
  std::string label_;
  TrainResult result_;
};

/// Returns p_src unchanged.
class IdentityMethod : public EditMethod {
 public:
  std::string name() const override { return "Identity"; }
  void train(std::span<const PairedSample>, std::uint64_t) override {}
  VectorXd transform(const VectorXd& p_src, double, double) const override { return p_src; }
};

/// Evaluation-time source/target assignment of one pair; true means the
/// positive member is the source. Fixed by the dataset seed and sample id.
bool eval_coin(std::uint64_t dataset_seed, std::uint64_t sample_id);

struct Oriented {
  const VectorXd* p_src;
  double s_src;
  const VectorXd* p_trg;
  double s_trg;
};
Oriented orient(const PairedSample& s, bool positive_is_source);

struct CvReport {
  std::string attribute;
  std::string method;
  std::vector<double> fold_l2;
  double grand_mean = 0.0;
  std::vector<std::size_t> train_sizes;
  std::vector<std::size_t> test_sizes;
  std::string direction_convention = "mixed (dataset eval coins)";
};

/// Seeded shuffle into `folds` disjoint, exhaustive test folds.
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int folds, std::uint64_t seed);

struct CvOptions {
  int folds = 5;
  std::uint64_t seed = 0;
  int jobs = 1;
};

/// Runs k-fold CV for one method over a paired dataset. Fold f trains with
/// seed mix(seed, f). Mean L2 over each test fold, then the grand mean.
CvReport l2_cv(const PairedDataset& dataset, const MethodFactory& factory, const CvOptions& opts);

/// Several methods on identical folds. `on_fold` (optional) sees every
/// trained method, e.g. to keep fold-0 models.
std::vector<CvReport> l2_cv_many(const PairedDataset& dataset, const std::vector<MethodFactory>& factories,
                                 const CvOptions& opts,
                                 const std::function<void(int fold, std::size_t method, const EditMethod&)>& on_fold = {});

struct PopulationStats {
  VectorXd mean;
  MatrixXd covariance;  // unbiased sample covariance
  double epsilon = 0.0;
  std::size_t count = 0;
  Eigen::LLT<MatrixXd> factor;  // of covariance + epsilon I
};

/// Negative epsilon selects the default 1e-6 * trace(S) / k.
PopulationStats population_stats(std::span<const VectorXd> params, double epsilon = -1.0);

/// sqrt((p - mu)^T (S + eps I)^{-1} (p - mu)) through the Cholesky factor.
double mahalanobis(const VectorXd& p, const PopulationStats& stats);

struct ReferenceSample {
  VectorXd p;
  double score = 0.0;  // signed distance to the dataset's hyperplane
  int label = 1;       // oracle class
};

/// Unpaired draws from the world's marginal with oracle labels for every
/// attribute. Columns of W and P are samples; labels is attributes x n.
struct ReferencePopulation {
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  std::vector<std::string> attributes;
  MatrixXd W;
  MatrixXd P;
  Eigen::MatrixXi labels;
  std::size_t size() const { return static_cast<std::size_t>(P.cols()); }
  std::size_t train_count() const;
};

ReferencePopulation make_reference(const LatentWorld& world, std::size_t n, std::uint64_t seed,
                                   double train_fraction = 0.8, int jobs = 1);

struct ReferenceSplit {
  std::vector<ReferenceSample> train;
  std::vector<ReferenceSample> test;
};

/// Leading train_fraction of the draws form the train split, the rest the test split.
ReferenceSplit split_reference(const ReferencePopulation& pop, std::string_view attribute,
                               const AttributeHyperplane& h);

/// Per-class populations from the reference train split.
struct ClassPopulations {
  PopulationStats positive;
  PopulationStats negative;
};
ClassPopulations class_populations(std::span<const ReferenceSample> train, double epsilon = -1.0);

using ClassTransform = std::function<VectorXd(const ReferenceSample&)>;

struct MahalanobisReport {
  double forward = 0.0;   // positive sources moved to the negative class
  double backward = 0.0;  // negative sources moved to the positive class
  double average = 0.0;
};

/// Moves every test source to the opposite class and averages the distance
/// of the result to that class population, then averages both directions.
MahalanobisReport mahalanobis_protocol(const ClassTransform& to_other_class, std::span<const ReferenceSample> test,
                                       const ClassPopulations& pops);

/// Baseline fit on the reference train split with oracle labels (a = +-1).
GlobalDirection fit_reference_baseline(std::span<const ReferenceSample> train, const std::string& attribute);

}  // namespace m3dm
