#pragma once

#include <cstddef>
#include <functional>

namespace coco {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index runs exactly
// once; callers write results into per-index slots, so output does not depend
// on the thread count. The first exception thrown is rethrown after all
// workers join.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace coco
