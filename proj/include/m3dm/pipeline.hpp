#pragma once

// End-to-end stages shared by the command-line tool and the experiment
// drivers: world construction, dataset generation (direct or routed through
// fitting), method construction by name and the two evaluation protocols.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "m3dm/config.hpp"
#include "m3dm/dataio.hpp"
#include "m3dm/eval.hpp"
#include "m3dm/fitting.hpp"

namespace m3dm {

WorldBundle build_world(const RunConfig& cfg);

/// Frontal pose at distance 10 with a point light near the camera.
FaceParams default_pose(const MorphableBasis& basis);

/// Either the world's own hyperplane or an SVM estimate from labeled latents.
AttributeHyperplane resolve_hyperplane(const LatentWorld& world, const std::string& attribute, const RunConfig& cfg);

/// Renders the generated parameters under the default pose and replaces them
/// by the fitted statistical coefficients.
VectorXd refit_params(const VectorXd& p, const MorphableBasis& basis, const CameraModel& camera,
                      const FitConfig& fit_cfg);

struct GenerateOptions {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string mode = "direct";  // direct | fitted
  int jobs = 1;
};

DatasetFile generate_dataset(const WorldBundle& w, const AttributeHyperplane& h, const std::string& attribute,
                             const GenerateOptions& opts, const RunConfig& cfg);

/// Method names: baseline, baseline-labels, ours, ours-nores, identity.
MethodFactory method_factory(const std::string& name, const std::string& attribute, const TrainConfig& train);
std::string method_display_name(const std::string& name);

struct MahalanobisRow {
  std::string method;
  MahalanobisReport report;
};

/// Trains each method on the whole paired dataset (controllers) or on the
/// reference train split with oracle labels (baseline) and runs the protocol
/// on the reference test split. Controllers target the mirrored score
/// -s_src clamped to the dataset's s_max.
std::vector<MahalanobisRow> run_mahalanobis(const PairedDataset& ds, const ReferencePopulation& ref,
                                            const std::vector<std::string>& methods, const TrainConfig& train,
                                            std::uint64_t seed);

}  // namespace m3dm
