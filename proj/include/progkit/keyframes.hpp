#pragma once

#include <span>
#include <vector>

namespace progkit {

/// Visual keyframe deduplication over per-step magnitudes (length T-1).
///
/// Frame 0 and frame T-1 are always keyframes. Between them, change is
/// accumulated since the last keyframe and frame t is selected once the
/// accumulated change is positive and reaches threshold * max(diffs); the
/// accumulator then resets. Slow drift therefore still yields keyframes.
std::vector<int> dedup_keyframes(std::span<const double> diffs, double threshold);

}  // namespace progkit
