#pragma once

#include <cstddef>
#include <functional>

namespace advscope {

/// Worker count used when a caller passes 0.
std::size_t default_threads();
void set_default_threads(std::size_t threads);

/// Runs body(i) for i in [0, count) on up to `threads` workers (0 selects
/// default_threads()). Indices are claimed dynamically, so body must only
/// write to per-index state. The first exception thrown is rethrown.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace advscope
