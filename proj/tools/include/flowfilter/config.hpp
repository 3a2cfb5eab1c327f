// Experiment configuration read from JSON.
#pragma once

#include "flowfilter/filters.hpp"
#include "flowfilter/models.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace flowfilter {

inline constexpr int kConfigSchemaVersion = 1;

/// Error with the JSON field path that caused it, e.g. "filters[2].gain".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message);
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

enum class ModelType { linear_gaussian, tanh, log_concave_ou };

struct ModelConfig {
  ModelType type = ModelType::linear_gaussian;
  Matrix A;        // linear_gaussian
  RowVector H;     // linear_gaussian, log_concave_ou
  double decay = 1.0;  // tanh: M(x) = -decay x
  double curvature = 1.0;  // log_concave_ou: U(x) = -curvature |x|^2 / 2
  std::size_t dim = 1;
};

struct GridConfig {
  double t0 = 0.0;
  double T = 1.0;
  double delta = 0.01;
  double fine_dt = 0.001;
};

struct SeedConfig {
  std::uint64_t base = 0;
  std::optional<std::uint64_t> truth, observation, initial, particles;
};

struct FilterConfig {
  FilterSpec spec;
  /// Overrides the particle-noise seed for this filter only.
  std::optional<std::uint64_t> seed;
};

struct ReferenceConfig {
  bool enabled = true;
  /// Grid solver domain [-half_width, half_width]; 0 picks one from the prior.
  double half_width = 0.0;
  std::size_t points = 1601;
};

struct SweepConfig {
  std::vector<double> deltas;
  std::vector<std::size_t> ensemble_sizes;
  /// Seeds for the sweep; empty means the base seed only.
  std::vector<std::uint64_t> seeds;
};

struct TheoryConfig {
  std::optional<double> c_u, c_g, c_r;
  double gamma_dt = 0.1;
  std::size_t gamma_steps = 100;
  std::vector<double> lipschitz{2.0, 0.5};
  std::vector<double> posterior_times{0.0, 0.5, 1.0};
  /// Relative slack allowed between the bound and the empirical constant.
  double tolerance = 0.02;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model;
  Vector initial_mean;
  Matrix initial_cov;
  GridConfig grid;
  std::size_t ensemble_size = 1000;
  SeedConfig seeds;
  std::vector<FilterConfig> filters;
  ReferenceConfig reference;
  SweepConfig sweep;
  TheoryConfig theory;
  std::string out_dir = "out";
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

SystemModel build_model(const ExperimentConfig& cfg);
InitialDensity build_initial(const ExperimentConfig& cfg);

}  // namespace flowfilter
