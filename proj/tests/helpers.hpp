#pragma once

#include <vector>

#include "isee/runner.hpp"

namespace testing_util {

// Two domains, four slots each, inform/request only (nothing bookable).
inline isee::EnvSpec unbookable_spec() {
  auto spec = isee::EnvSpec::default_spec();
  for (auto& d : spec.domains) d.bookable = false;
  return spec;
}

// Dialogues between the expert user and a scripted agent that is right most
// of the time.
inline std::vector<isee::Trajectory> sample_dialogues(const isee::ToyEnv& env, int n, std::uint64_t seed,
                                                      double epsilon = 0.2) {
  return isee::collect_expert_dialogues(env, n, epsilon, isee::RngStream(seed, 0));
}

inline std::vector<double> random_vector(isee::RngStream& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace testing_util
