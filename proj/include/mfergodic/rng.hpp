#pragma once

#include <cstdint>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

namespace mfergodic {

/// Reproducible random stream identified by (seed, stream id).
///
/// Distinct ids give independent streams; the same pair always reproduces
/// the same sequence. Normals use Boost's ziggurat sampler so the sequence
/// does not depend on the standard library implementation.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Child stream derived from this stream's identity (not its state).
  RngStream substream(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  boost::random::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_;
  boost::random::uniform_01<double> uniform_;
};

/// SplitMix64 finalizer; used to derive seeds deterministically.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace mfergodic
