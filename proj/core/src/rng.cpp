#include "wmsteer/rng.hpp"

namespace wmsteer {

Tensor normal_tensor(const Shape& shape, Rng& rng, double stddev) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
    return t;
}

Tensor uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace wmsteer
