// Shared vocabulary types and the library error type.
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flowfilter {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// N x d particle storage, one particle per row.
using ParticleMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorCode {
  invalid_argument,
  non_finite_state,
  out_of_range,
  degenerate_cloud,
  unresolved_tail,
  ill_conditioned,
  dimension_error,
  singular_covariance,
  model_mismatch,
  cfl_violation,
  grid_mismatch,
  non_positive_parameter,
  non_positive_delta,
  not_log_concave,
  non_positive_density,
  condition_violation,
  non_nested_meshes,
  config_error,
  covariance_blowup,
  io_error,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::span<const double> row_span(const ParticleMatrix& m,
                                        Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline std::span<double> row_span(ParticleMatrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline Eigen::Map<const Vector> as_vector(std::span<const double> s) {
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}

inline Eigen::Map<Vector> as_vector(std::span<double> s) {
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}

/// Number of worker threads used by particle loops (1 when built without
/// OpenMP). Results never depend on this value.
int worker_threads() noexcept;
void set_worker_threads(int n) noexcept;

}  // namespace flowfilter
