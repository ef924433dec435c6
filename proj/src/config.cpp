#include "m3dm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "m3dm/dataio.hpp"
#include "m3dm/errors.hpp"
#include "m3dm/log.hpp"

namespace m3dm {
namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"world.seed", "1"},
      {"world.latent_dim", "32"},
      {"world.mode", "nonlinear"},
      {"world.generator_hidden", "32"},
      {"world.linear_scale", "1"},
      {"world.hidden_scale", "1"},
      {"world.output_scale", "2"},
      {"world.bias_std", "0.1"},
      {"world.n_attributes", "8"},
      {"world.attributes", ""},
      {"world.s_max", "2"},
      {"world.min_angle_deg", "30"},
      {"world.hyperplane_bias_range", "0.2"},
      {"basis.n_vertices", "642"},
      {"basis.k_id", "16"},
      {"basis.k_expr", "8"},
      {"basis.k_tex", "16"},
      {"basis.mode_rms", "0.05"},
      {"basis.sigma_decay", "0.9"},
      {"dataset.n", "20000"},
      {"dataset.seed", "2"},
      {"dataset.mode", "direct"},
      {"dataset.hyperplane", "svm"},
      {"hyperplane.n", "2000"},
      {"hyperplane.margin", "0.5"},
      {"hyperplane.seed", "3"},
      {"hyperplane.lambda", "0.001"},
      {"hyperplane.iterations", "2000"},
      {"train.epochs", "50"},
      {"train.batch_size", "64"},
      {"train.learning_rate", "0.001"},
      {"train.weight_decay", "0.000001"},
      {"train.hidden", "256"},
      {"train.hidden_layers", "2"},
      {"train.loss", "norm"},
      {"train.seed", "4"},
      {"train.precision", "float32"},
      {"eval.folds", "5"},
      {"eval.seed", "5"},
      {"eval.reference_n", "20000"},
      {"eval.reference_seed", "6"},
      {"eval.train_fraction", "0.8"},
      {"fit.lambda_feature", "1"},
      {"fit.lambda_pixel", "100"},
      {"fit.lambda_reg", "0.001"},
      {"fit.max_iters", "200"},
      {"fit.jacobian", "analytic"},
      {"fit.focal_length", "1000"},
      {"fit.image_size", "256"},
      {"jobs", "1"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> k;
  for (const auto& [key, _] : defaults()) k.push_back(key);
  return k;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ContractError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (cfg.explicit_.count(key)) throw ContractError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ContractError& e) {
      throw ContractError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (const auto& [key, value] : cfg.values_)
    if (!cfg.explicit_.count(key)) log::info("config: " + key + " defaulted to '" + value + "'");
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw DataError("config file '" + file.string() + "' not found");
  return parse(read_text(file), file.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("unknown config key '" + key + "'");
  it->second = value;
  explicit_.insert(key);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ContractError("config key '" + key + "': '" + v + "' is not a number");
  return x;
}

long long RunConfig::integer(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0') throw ContractError("config key '" + key + "': '" + v + "' is not an integer");
  return x;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || *end != '\0')
    throw ContractError("config key '" + key + "': '" + v + "' is not an unsigned integer");
  return x;
}

bool RunConfig::boolean(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::fingerprint() const { return m3dm::fingerprint(resolved()); }

SynthBasisConfig RunConfig::basis() const {
  SynthBasisConfig b;
  b.n_vertices = static_cast<int>(integer("basis.n_vertices"));
  b.k_id = static_cast<int>(integer("basis.k_id"));
  b.k_expr = static_cast<int>(integer("basis.k_expr"));
  b.k_tex = static_cast<int>(integer("basis.k_tex"));
  b.mode_rms = number("basis.mode_rms");
  b.sigma_decay = number("basis.sigma_decay");
  return b;
}

WorldConfig RunConfig::world(int k_flat) const {
  WorldConfig w;
  w.seed = u64("world.seed");
  w.latent_dim = static_cast<int>(integer("world.latent_dim"));
  w.k_flat = k_flat;
  w.mode = generator_mode_from_string(get("world.mode"));
  w.generator_hidden = static_cast<int>(integer("world.generator_hidden"));
  w.linear_scale = number("world.linear_scale");
  w.hidden_scale = number("world.hidden_scale");
  w.output_scale = number("world.output_scale");
  w.bias_std = number("world.bias_std");
  w.min_angle_deg = number("world.min_angle_deg");
  w.hyperplane_bias_range = number("world.hyperplane_bias_range");
  w.attribute_names = list("world.attributes");
  if (w.attribute_names.empty()) w.attribute_names = default_attribute_names(static_cast<int>(integer("world.n_attributes")));
  w.s_max.assign(w.attribute_names.size(), number("world.s_max"));
  return w;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.epochs = static_cast<int>(integer("train.epochs"));
  t.batch_size = static_cast<int>(integer("train.batch_size"));
  t.learning_rate = number("train.learning_rate");
  t.weight_decay = number("train.weight_decay");
  t.hidden = static_cast<int>(integer("train.hidden"));
  t.hidden_layers = static_cast<int>(integer("train.hidden_layers"));
  const std::string& loss = get("train.loss");
  if (loss == "norm") t.loss = LossKind::norm;
  else if (loss == "squared") t.loss = LossKind::squared;
  else throw ContractError("config key 'train.loss': expected norm or squared, got '" + loss + "'");
  t.seed = u64("train.seed");
  const std::string& prec = get("train.precision");
  if (prec == "float32") t.single_precision = true;
  else if (prec == "float64") t.single_precision = false;
  else throw ContractError("config key 'train.precision': expected float32 or float64, got '" + prec + "'");
  t.validate();
  return t;
}

FitConfig RunConfig::fit() const {
  FitConfig f;
  f.lambda_feature = number("fit.lambda_feature");
  f.lambda_pixel = number("fit.lambda_pixel");
  f.lambda_reg = number("fit.lambda_reg");
  f.max_iters = static_cast<int>(integer("fit.max_iters"));
  const std::string& j = get("fit.jacobian");
  if (j == "analytic") f.jacobian = JacobianMode::analytic;
  else if (j == "numeric") f.jacobian = JacobianMode::numeric;
  else throw ContractError("config key 'fit.jacobian': expected analytic or numeric, got '" + j + "'");
  return f;
}

CameraModel RunConfig::camera() const {
  CameraModel c;
  c.focal_length = number("fit.focal_length");
  c.image_width = c.image_height = static_cast<int>(integer("fit.image_size"));
  c.validate();
  return c;
}

}  // namespace m3dm
