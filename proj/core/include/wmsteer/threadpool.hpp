#pragma once

/* Minimal data-parallel loop.
 *
 * parallel_for(n, fn) runs fn(0..n-1) across a set of transient worker
 * threads.  Each index must write only to its own output slot; callers then
 * reduce those slots sequentially in index order, which makes every result
 * bit-identical no matter how many workers ran the loop.
 */

#include <cstdint>
#include <functional>

namespace wmsteer {

// Worker resolution order: explicit argument > WMSTEER_WORKERS env > hardware.
int resolve_workers(int requested = 0);

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn, int workers = 0);

}  // namespace wmsteer
