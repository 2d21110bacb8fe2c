#pragma once

#include "bforge/box.hpp"
#include "bforge/types.hpp"

#include <vector>

namespace bforge {

/// Ground-truth objects of one image. Labels are class indices in [0, C).
struct GroundTruthSet {
  std::vector<Box> boxes;
  std::vector<int> labels;

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
};

struct Sample {
  Image image;
  GroundTruthSet gt;
  // Regions whose annotation was removed by ODA poisoning; supervised as background.
  std::vector<Box> forced_background;
  bool poisoned = false;
  // Index into gt of the relabeled object of an RMA-poisoned image, -1 otherwise.
  int relabeled_object = -1;
};

using Dataset = std::vector<Sample>;

}  // namespace bforge
