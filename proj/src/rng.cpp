#include "udarc/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "udarc/errors.hpp"

namespace udarc {

int Rng::uniform_int(int n) {
  if (n <= 0) throw ContractError("uniform_int: n must be positive");
  // Rejection sampling to avoid modulo bias; deterministic given the stream.
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<int>(x % un);
}

double Rng::normal(double mean, double stddev) {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double stddev) {
  double x = normal(0.0, stddev);
  while (std::abs(x) > 2.0 * stddev) x = normal(0.0, stddev);
  return x;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (is.fail()) throw ContractError("Rng::set_state: malformed state string");
}

}  // namespace udarc
