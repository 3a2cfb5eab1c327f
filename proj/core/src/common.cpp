#include "flowfilter/common.hpp"

#ifdef FLOWFILTER_HAVE_OPENMP
#include <omp.h>
#endif

namespace flowfilter {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::non_finite_state: return "NonFiniteState";
    case ErrorCode::out_of_range: return "OutOfRange";
    case ErrorCode::degenerate_cloud: return "DegenerateCloud";
    case ErrorCode::unresolved_tail: return "UnresolvedTail";
    case ErrorCode::ill_conditioned: return "IllConditioned";
    case ErrorCode::dimension_error: return "DimensionError";
    case ErrorCode::singular_covariance: return "SingularCovariance";
    case ErrorCode::model_mismatch: return "ModelMismatch";
    case ErrorCode::cfl_violation: return "CFLViolation";
    case ErrorCode::grid_mismatch: return "GridMismatch";
    case ErrorCode::non_positive_parameter: return "NonPositiveParameter";
    case ErrorCode::non_positive_delta: return "NonPositiveDelta";
    case ErrorCode::not_log_concave: return "NotLogConcave";
    case ErrorCode::non_positive_density: return "NonPositiveDensity";
    case ErrorCode::condition_violation: return "ConditionViolation";
    case ErrorCode::non_nested_meshes: return "NonNestedMeshes";
    case ErrorCode::config_error: return "ConfigError";
    case ErrorCode::covariance_blowup: return "CovarianceBlowup";
    case ErrorCode::io_error: return "IOError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what),
      code_(code) {}

namespace {
int g_threads = 1;
}

int worker_threads() noexcept { return g_threads; }

void set_worker_threads(int n) noexcept {
  g_threads = n < 1 ? 1 : n;
#ifdef FLOWFILTER_HAVE_OPENMP
  omp_set_num_threads(g_threads);
#endif
}

}  // namespace flowfilter
