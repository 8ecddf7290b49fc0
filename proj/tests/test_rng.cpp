#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mtm/errors.hpp"
#include "mtm/rng.hpp"

using namespace mtm;

TEST_CASE("streams are reproducible from seed and stream id") {
  RngStream a(42, 5), b(42, 5), c(42, 6), d(43, 5);
  std::vector<std::uint64_t> xa, xb, xc, xd;
  for (int i = 0; i < 64; ++i) {
    xa.push_back(a.next_u64());
    xb.push_back(b.next_u64());
    xc.push_back(c.next_u64());
    xd.push_back(d.next_u64());
  }
  CHECK(xa == xb);
  CHECK(xa != xc);
  CHECK(xa != xd);
  CHECK(a.counter() == 64);
}

TEST_CASE("split children differ from each other and from the parent") {
  RngStream root(9);
  auto c1 = root.split(1), c2 = root.split(2), again = root.split(1);
  CHECK(c1.next_u64() == again.next_u64());
  RngStream p = root;
  auto x1 = c1.next_u64(), x2 = c2.next_u64(), xp = p.next_u64();
  CHECK(x1 != x2);
  CHECK(x1 != xp);
  // Splitting does not advance the parent.
  RngStream fresh(9);
  CHECK(fresh.next_u64() == xp);
}

TEST_CASE("uniform and normal moments") {
  RngStream rng(1);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  double lo = 1, hi = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);
  // 5 standard errors
  CHECK(std::fabs(su / n - 0.5) < 5 * std::sqrt(1.0 / 12 / n));
  CHECK(std::fabs(sn / n) < 5 / std::sqrt(double(n)));
  CHECK(std::fabs(sn2 / n - 1.0) < 5 * std::sqrt(2.0 / n));
}

TEST_CASE("categorical and uniform_index") {
  RngStream rng(2);
  std::vector<double> w{1, 0, 3};
  std::vector<int> hits(3, 0);
  CategoricalSampler sampler(w);
  std::vector<int> hits2(3, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    ++hits[rng.categorical(w)];
    ++hits2[sampler(rng)];
  }
  CHECK(hits[1] == 0);
  CHECK(hits2[1] == 0);
  CHECK(std::fabs(hits[2] / double(n) - 0.75) < 0.02);
  CHECK(std::fabs(hits2[2] / double(n) - 0.75) < 0.02);
  CHECK_THROWS_AS(rng.categorical(std::vector<double>{0, 0}), ZeroMass);
  CHECK_THROWS_AS(rng.uniform_index(0), DomainError);
  for (int i = 0; i < 1000; ++i) CHECK(rng.uniform_index(7) < 7);
}

TEST_CASE("shuffle is a permutation") {
  RngStream rng(4);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  auto s = v;
  rng.shuffle(s);
  CHECK(s != v);
  std::sort(s.begin(), s.end());
  CHECK(s == v);
}

TEST_CASE("hash_string") {
  CHECK(hash_string("energy") == hash_string("energy"));
  CHECK(hash_string("energy") != hash_string("oil"));
}
