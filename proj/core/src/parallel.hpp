// Internal: static-schedule parallel loop that rethrows the exception of the
// lowest failing index, so error reporting does not depend on thread timing.
#pragma once

#include <cstddef>
#include <exception>
#include <limits>

#ifdef FLOWFILTER_HAVE_OPENMP
#include <omp.h>
#endif

namespace flowfilter::detail {

template <class Body>
void parallel_for(std::size_t n, const Body& body) {
#ifdef FLOWFILTER_HAVE_OPENMP
  std::exception_ptr first;
  std::size_t first_index = std::numeric_limits<std::size_t>::max();
  const auto sn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < sn; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(flowfilter_parallel_for)
      {
        if (static_cast<std::size_t>(i) < first_index) {
          first_index = static_cast<std::size_t>(i);
          first = std::current_exception();
        }
      }
    }
  }
  if (first) std::rethrow_exception(first);
#else
  for (std::size_t i = 0; i < n; ++i) body(i);
#endif
}

}  // namespace flowfilter::detail
