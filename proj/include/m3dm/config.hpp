#pragma once

// Flat `key = value` run configuration with typed accessors. Every key has a
// default; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "m3dm/controller.hpp"
#include "m3dm/fitting.hpp"
#include "m3dm/latent_world.hpp"
#include "m3dm/morphable.hpp"

namespace m3dm {

class RunConfig {
 public:
  RunConfig();

  /// `#` starts a comment; blank lines are ignored.
  static RunConfig parse(const std::string& text, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& file);

  /// Throws ContractError for unknown keys.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_explicit(const std::string& key) const { return explicit_.count(key) != 0; }

  double number(const std::string& key) const;
  long long integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;

  /// Sorted `key = value` lines of every key, defaults included.
  std::string resolved() const;
  std::string fingerprint() const;

  SynthBasisConfig basis() const;
  WorldConfig world(int k_flat) const;
  TrainConfig train() const;
  FitConfig fit() const;
  CameraModel camera() const;

  static std::vector<std::string> keys();

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace m3dm
