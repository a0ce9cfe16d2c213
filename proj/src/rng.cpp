#include "coco/rng.hpp"

#include <cmath>
#include <numbers>

#include "coco/hash.hpp"

namespace coco {

double SplitMix64::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t sub_seed(std::uint64_t seed, std::string_view label) {
  Fnv1a h;
  h.update_u64(seed);
  h.update(label);
  return SplitMix64(h.digest()).next();
}

}  // namespace coco
