#pragma once

#include <cstddef>
#include <functional>

namespace blindspot {

// Runs body(i) for i in [0, n) on up to `jobs` threads. Each index must
// write only its own output slot; results are then independent of jobs.
// The first exception thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body);

}  // namespace blindspot
