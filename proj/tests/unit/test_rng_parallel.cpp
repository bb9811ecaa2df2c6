#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mfergodic/estimate.hpp"
#include "mfergodic/parallel.hpp"
#include "mfergodic/rng.hpp"

using namespace mfergodic;

TEST_CASE("streams are reproducible and distinct") {
  RngStream a(7, 3), b(7, 3), c(7, 4), d(8, 3);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
    CHECK(x != d.next_u64());
  }
}

TEST_CASE("substreams depend on identity, not on the draw position") {
  RngStream a(11, 2);
  const auto s1 = a.substream(5);
  a.normal();
  a.normal();
  auto s2 = a.substream(5);
  auto s1c = s1;
  CHECK(s1c.next_u64() == s2.next_u64());
}

TEST_CASE("normal draws have unit variance") {
  RngStream r(1, 0);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  // Standard errors: 1/sqrt(n), sqrt(2/n), sqrt(96/n).
  CHECK(std::abs(s / n) < 5.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(s4 / n - 3.0) < 5.0 * std::sqrt(96.0 / n));
}

TEST_CASE("uniform draws lie in [0, 1) with mean 1/2") {
  RngStream r(2, 0);
  double s = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    s += u;
  }
  CHECK(std::abs(s / 100000 - 0.5) < 5.0 * std::sqrt(1.0 / 12.0 / 100000));
}

TEST_CASE("mix_seed is a bijection on a sample") {
  std::vector<std::uint64_t> v;
  for (std::uint64_t i = 0; i < 1000; ++i) v.push_back(mix_seed(i));
  std::sort(v.begin(), v.end());
  CHECK(std::adjacent_find(v.begin(), v.end()) == v.end());
}

TEST_CASE("parallel_for visits every index once for any cap") {
  const unsigned saved = thread_cap();
  for (unsigned cap : {1u, 2u, 3u, 8u}) {
    set_thread_cap(cap);
    std::vector<std::atomic<int>> hits(257);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  set_thread_cap(saved);
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
  const unsigned saved = thread_cap();
  set_thread_cap(4);
  try {
    parallel_for(20, [](std::size_t i) {
      if (i == 7 || i == 13) throw std::runtime_error(std::to_string(i));
    });
    FAIL("no exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "7");
  }
  set_thread_cap(saved);
}

TEST_CASE("nested parallel_for runs inline") {
  const unsigned saved = thread_cap();
  set_thread_cap(2);
  std::vector<int> out(16, 0);
  parallel_for(4, [&](std::size_t i) { parallel_for(4, [&](std::size_t j) { out[i * 4 + j] = int(i * 4 + j); }); });
  for (int k = 0; k < 16; ++k) CHECK(out[k] == k);
  set_thread_cap(saved);
}

TEST_CASE("mean_and_stderr") {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  const auto e = mean_and_stderr(x);
  CHECK(e.value == doctest::Approx(2.5));
  // sample sd sqrt(5/3), divided by 2
  CHECK(e.std_err == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  CHECK(combined_stderr({0, 3}, {0, 4}) == doctest::Approx(5.0));
}
