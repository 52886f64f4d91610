#include "progkit/keyframes.hpp"

#include <algorithm>

#include "progkit/error.hpp"

namespace progkit {

std::vector<int> dedup_keyframes(std::span<const double> diffs, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "dedup threshold must lie in [0,1]");
  }
  const int num_frames = static_cast<int>(diffs.size()) + 1;
  std::vector<int> keyframes{0};
  if (num_frames == 1) return keyframes;

  const double peak = *std::max_element(diffs.begin(), diffs.end());
  const double trigger = threshold * peak;
  double acc = 0.0;
  for (int t = 1; t < num_frames - 1; ++t) {
    acc += diffs[t - 1];
    if (acc > 0.0 && acc >= trigger) {
      keyframes.push_back(t);
      acc = 0.0;
    }
  }
  keyframes.push_back(num_frames - 1);
  return keyframes;
}

}  // namespace progkit
