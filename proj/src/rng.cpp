#include "mfergodic/rng.hpp"

#include <array>
#include <random>

namespace mfergodic {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

// Full-state seeding through a seed sequence so nearby (seed, id) pairs do not
// start in correlated Mersenne Twister states.
boost::random::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t id) {
  const std::uint64_t a = mix_seed(seed), b = mix_seed(id ^ 0x5851f42d4c957f2dULL);
  std::array<std::uint32_t, 4> words{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                                     static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::seed_seq seq(words.begin(), words.end());
  return boost::random::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

RngStream RngStream::substream(std::uint64_t index) const {
  return RngStream(mix_seed(seed_ ^ mix_seed(stream_id_)), index);
}

}  // namespace mfergodic
