#pragma once

// Adversary side: synthetic scenes, trigger stamping and RMA/ODA poisoning.

#include "bforge/dataset.hpp"
#include "bforge/error.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace bforge {

struct SceneSpec {
  int image_size = kImageSize;
  int min_objects = 1;
  int max_objects = 4;
  int num_classes = kDefaultClasses;
  int min_box = 12;
  int max_box = 24;
  double max_overlap_iou = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Generates `n` images with ground truth. Image i depends only on (seed, i).
Dataset gen_dataset(int n, const SceneSpec& spec);

/// Draws a single scene; exposed for tests.
Sample gen_scene(const SceneSpec& spec, std::uint64_t index);

struct TriggerSpec {
  int size = 4;
  std::array<float, 3> color{0.0f, 0.0f, 1.0f};
};

/// Replaces the centred size x size patch of `box` with the trigger colour.
Image stamp_trigger(const Image& x, const Box& box, const TriggerSpec& trig);

enum class AttackMode { kRMA, kODA };

std::string to_string(AttackMode mode);
AttackMode attack_mode_from_string(const std::string& s);

struct PoisonConfig {
  double ratio = 0.05;
  AttackMode mode = AttackMode::kRMA;
  int rma_target_class = 0;
  std::uint64_t seed = 0;

  void validate(int num_classes) const;
};

/// Number of images a poisoning run touches: ceil(ratio * n).
std::size_t poison_count(double ratio, std::size_t n);

/// Object chosen for stamping in `gt`: a non-target-class object for RMA when one exists.
int choose_stamp_object(const GroundTruthSet& gt, AttackMode mode, int rma_target_class, std::uint64_t seed);

/// Stamps one object in ceil(ratio * n) images. RMA relabels it to the target class; ODA removes
/// its annotation and records the box as forced background.
Dataset poison(const Dataset& clean, const PoisonConfig& cfg, const TriggerSpec& trig);

/// Test-time triggered copy of an image: one object stamped, labels untouched.
struct TriggeredSample {
  Sample sample;
  int stamped_object = -1;
};

/// Stamps one object per image (RMA: only images holding a non-target object are kept).
std::vector<TriggeredSample> make_triggered_set(const Dataset& clean, AttackMode mode, int rma_target_class,
                                                const TriggerSpec& trig, std::uint64_t seed);

}  // namespace bforge
