#include "ppa/rng.hpp"

#include <cmath>
#include <numbers>

namespace ppa {

std::uint64_t derive_stream_id(std::uint64_t class_index, std::uint64_t candidate_index,
                               std::string_view stage) {
  std::uint64_t h = mix64(hash_tag(stage));
  h = mix64(h ^ (class_index + 0x632BE59BD9B4E019ULL));
  h = mix64(h ^ (candidate_index + 0x85157AF5ULL));
  return h;
}

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection keeps the draw unbiased for spans that do not divide 2^64.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return lo + static_cast<std::int64_t>(x % span);
}

double RngStream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace ppa
