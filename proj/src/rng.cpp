#include "mfa/rng.hpp"

#include <cmath>

namespace mfa {

double RandomStream::normal() {
  // Box-Muller; u1 is kept away from 0 so the log stays finite.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace mfa
