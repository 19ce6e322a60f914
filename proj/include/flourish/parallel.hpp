#pragma once

#include <cstddef>
#include <functional>

namespace flourish {

/// Runs fn(i) for i in [0, n) on up to `threads` workers with a static block
/// partition. Each index is processed exactly once and workers never share
/// output slots, so results are bitwise independent of the worker count.
/// threads <= 1 runs inline.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace flourish
