#pragma once

#include <cstddef>
#include <functional>

namespace maskfocus {

// Worker cap from MASKFOCUS_THREADS (unset or invalid: hardware concurrency).
int max_threads();

// Runs body(i) for i in [0, n). Each index must write only its own output slot;
// results are then independent of the schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace maskfocus
