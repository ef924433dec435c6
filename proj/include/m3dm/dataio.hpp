#pragma once

// On-disk formats: paired-dataset directories (JSON manifest + float32
// arrays), the "M3DM" binary container for trained objects, world bundles,
// OBJ mesh export and report files.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "m3dm/baseline.hpp"
#include "m3dm/controller.hpp"
#include "m3dm/eval.hpp"
#include "m3dm/latent_world.hpp"
#include "m3dm/morphable.hpp"

namespace m3dm {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr std::uint32_t kContainerFormatVersion = 1;

struct ParamDims {
  int k_id = 0;
  int k_expr = 0;
  int k_tex = 0;
  int total() const { return k_id + k_expr + k_tex; }
};

struct DatasetFile {
  PairedDataset data;
  ParamDims dims;
  int latent_dim = 0;
  std::string mode = "direct";  // direct | fitted
};

/// Rounds every stored field to float32 so memory matches what disk holds.
void quantize_f32(PairedDataset& ds);

/// Hex FNV-1a over the hyperplane's float64 bytes.
std::string hyperplane_fingerprint(const AttributeHyperplane& h);

void save_dataset(const fs::path& dir, const DatasetFile& ds);
DatasetFile load_dataset(const fs::path& dir);

// Binary container ---------------------------------------------------------

enum class PayloadKind : std::uint32_t { controller = 1, direction = 2, hyperplane = 3, world = 4, basis = 5, reference = 6 };
const char* to_string(PayloadKind k);

struct NamedTensor {
  std::string name;
  MatrixXd value;
};

struct Container {
  PayloadKind kind = PayloadKind::controller;
  json meta = json::object();
  std::vector<NamedTensor> tensors;

  const MatrixXd& tensor(const std::string& name) const;
};

void save_container(const fs::path& file, const Container& c);
Container load_container(const fs::path& file);
/// Loads and checks the payload kind.
Container load_container(const fs::path& file, PayloadKind expected);

Container to_container(const Controller& c);
Controller controller_from(const Container& c);
Container to_container(const GlobalDirection& d);
GlobalDirection direction_from(const Container& c);
Container to_container(const AttributeHyperplane& h, const std::string& attribute);
AttributeHyperplane hyperplane_from(const Container& c);
Container to_container(const LatentWorld& w);
LatentWorld world_from(const Container& c);
Container to_container(const MorphableBasis& b);
MorphableBasis basis_from(const Container& c);
Container to_container(const ReferencePopulation& r);
ReferencePopulation reference_from(const Container& c);

/// World directory: world.json (human-readable summary), world.m3dm, basis.m3dm.
struct WorldBundle {
  LatentWorld world;
  MorphableBasis basis;
  json config = json::object();
};
void save_world(const fs::path& dir, const WorldBundle& w);
WorldBundle load_world(const fs::path& dir);

/// Reference directory: reference.m3dm.
void save_reference(const fs::path& dir, const ReferencePopulation& r);
ReferencePopulation load_reference(const fs::path& dir);

// Plain-text parameter vectors, one value per line at full precision.
void write_vector(const fs::path& file, const VectorXd& v);
VectorXd read_vector(const fs::path& file);

// Meshes -------------------------------------------------------------------

void export_obj(const VectorXd& shape, const VectorXd& texture, const std::vector<Triangle>& triangles,
                const fs::path& file);

/// -2.0, -1.5, ..., 2.0
std::vector<double> default_sweep_scores();

/// One OBJ per score, named sweep_<attr>_<score>.obj. Returns the paths.
std::vector<fs::path> export_score_sweep(const Controller& ctrl, const VectorXd& p_src,
                                         const std::vector<double>& scores, const MorphableBasis& basis,
                                         const fs::path& dir);

// Reports ------------------------------------------------------------------

/// 16-hex-digit FNV-1a of the text.
std::string fingerprint(const std::string& text);

void write_text(const fs::path& file, const std::string& text);
std::string read_text(const fs::path& file);

/// Rows are methods, columns attributes; tab-delimited with a header row.
std::string cv_table(const std::vector<std::string>& attributes, const std::vector<std::string>& methods,
                     const std::vector<std::vector<double>>& values);

}  // namespace m3dm
