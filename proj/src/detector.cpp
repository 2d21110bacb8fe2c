#include "bforge/detector.hpp"

namespace bforge {

MatchAssignment assign_by_center(const GroundTruthSet& gt, const std::vector<Box>& forced_background) {
  MatchAssignment pi{std::vector<int>(kNumCells, kBackground)};
  for (int cell = 0; cell < kNumCells; ++cell) {
    const double cx = (cell % kGrid + 0.5) * kStride;
    const double cy = (cell / kGrid + 0.5) * kStride;
    const bool forced = std::any_of(forced_background.begin(), forced_background.end(),
                                    [&](const Box& b) { return b.contains(cx, cy); });
    if (forced) continue;
    double best_area = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const Box& b = gt.boxes[i];
      if (!b.contains(cx, cy)) continue;
      if (pi.owner[cell] == kBackground || b.area() < best_area) {
        pi.owner[cell] = static_cast<int>(i);
        best_area = b.area();
      }
    }
  }
  return pi;
}

std::vector<Index> target_matched_set(const MatchAssignment& pi, int i_star) {
  std::vector<Index> out;
  for (std::size_t j = 0; j < pi.owner.size(); ++j)
    if (pi.owner[j] == i_star) out.push_back(static_cast<Index>(j));
  return out;
}

}  // namespace bforge
