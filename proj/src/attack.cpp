#include "bforge/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace bforge {

namespace {

struct Archetype {
  std::array<float, 3> color;
};

// Shape is implied by the class index: 0 rectangle, 1 ellipse, 2 triangle, 3 cross.
constexpr std::array<Archetype, 4> kArchetypes{{
    {{0.85f, 0.15f, 0.15f}},
    {{0.15f, 0.75f, 0.20f}},
    {{0.90f, 0.85f, 0.20f}},
    {{0.95f, 0.95f, 0.95f}},
}};

float quantize(float v) { return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f; }

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

bool inside_shape(int cls, const Box& b, double px, double py) {
  const double u = (px - b.x1) / b.width();
  const double v = (py - b.y1) / b.height();
  switch (cls % 4) {
    case 0:
      return true;
    case 1: {
      const double dx = u - 0.5, dy = v - 0.5;
      return dx * dx + dy * dy <= 0.25;
    }
    case 2:
      return std::abs(u - 0.5) <= 0.5 * v;
    default:
      return std::abs(u - 0.5) <= 0.2 || std::abs(v - 0.5) <= 0.2;
  }
}

}  // namespace

void SceneSpec::validate() const {
  if (image_size != kImageSize) throw InvalidConfig("image_size must be 64");
  if (min_objects < 1 || max_objects < min_objects) throw InvalidConfig("object count range must satisfy 1 <= min <= max");
  if (num_classes < 2 || num_classes > static_cast<int>(kArchetypes.size()))
    throw InvalidConfig("num_classes must lie in [2, 4]");
  if (min_box < 8 || max_box < min_box || max_box > image_size / 2) throw InvalidConfig("invalid box size range");
  if (!(max_overlap_iou >= 0.0 && max_overlap_iou < 1.0)) throw InvalidConfig("max_overlap_iou must lie in [0,1)");
}

Sample gen_scene(const SceneSpec& spec, std::uint64_t index) {
  auto rng = derived_rng(spec.seed, index, 0);
  std::uniform_real_distribution<float> base(0.25f, 0.55f);
  std::uniform_real_distribution<float> noise(-0.04f, 0.04f);
  std::uniform_real_distribution<float> jitter(-0.07f, 0.07f);
  std::uniform_int_distribution<int> count(spec.min_objects, spec.max_objects);
  std::uniform_int_distribution<int> size(spec.min_box, spec.max_box);
  std::uniform_int_distribution<int> cls(0, spec.num_classes - 1);

  Sample s;
  s.image.resize(kChannels, static_cast<Index>(spec.image_size) * spec.image_size);
  const std::array<float, 3> bg{base(rng), base(rng), base(rng) * 0.6f};
  for (Index p = 0; p < s.image.cols(); ++p)
    for (int c = 0; c < kChannels; ++c) s.image(c, p) = bg[static_cast<std::size_t>(c)] + noise(rng);

  const int wanted = count(rng);
  for (int attempt = 0; attempt < 200 && static_cast<int>(s.gt.size()) < wanted; ++attempt) {
    const int w = size(rng), h = size(rng);
    std::uniform_int_distribution<int> px(0, spec.image_size - w), py(0, spec.image_size - h);
    const Box b{static_cast<double>(px(rng)), static_cast<double>(py(rng)), 0, 0};
    const Box box{b.x1, b.y1, b.x1 + w, b.y1 + h};
    const bool clash = std::any_of(s.gt.boxes.begin(), s.gt.boxes.end(),
                                   [&](const Box& o) { return iou(o, box) > spec.max_overlap_iou; });
    if (clash) continue;
    s.gt.boxes.push_back(box);
    s.gt.labels.push_back(cls(rng));
  }
  // Later objects are painted over earlier ones.
  for (std::size_t i = 0; i < s.gt.size(); ++i) {
    const Box& b = s.gt.boxes[i];
    const int label = s.gt.labels[i];
    std::array<float, 3> col = kArchetypes[static_cast<std::size_t>(label)].color;
    for (auto& v : col) v += jitter(rng);
    for (int y = static_cast<int>(b.y1); y < static_cast<int>(b.y2); ++y)
      for (int x = static_cast<int>(b.x1); x < static_cast<int>(b.x2); ++x)
        if (inside_shape(label, b, x + 0.5, y + 0.5))
          for (int c = 0; c < kChannels; ++c) s.image(c, pixel_index(x, y)) = col[static_cast<std::size_t>(c)] + noise(rng);
  }
  s.image = s.image.unaryExpr([](float v) { return quantize(v); });
  return s;
}

Dataset gen_dataset(int n, const SceneSpec& spec) {
  if (n < 1) throw InvalidInput("dataset size must be at least 1");
  spec.validate();
  Dataset out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(gen_scene(spec, static_cast<std::uint64_t>(i)));
  return out;
}

Image stamp_trigger(const Image& x, const Box& box, const TriggerSpec& trig) {
  if (box.width() < trig.size || box.height() < trig.size)
    throw InvalidInput("trigger does not fit inside the target box");
  Image out = x;
  const int x0 = static_cast<int>(std::floor(box.center_x())) - trig.size / 2;
  const int y0 = static_cast<int>(std::floor(box.center_y())) - trig.size / 2;
  for (int y = y0; y < y0 + trig.size; ++y)
    for (int xx = x0; xx < x0 + trig.size; ++xx) {
      if (xx < 0 || y < 0 || xx >= kImageSize || y >= kImageSize) throw InvalidInput("trigger leaves the image");
      for (int c = 0; c < kChannels; ++c) out(c, pixel_index(xx, y)) = trig.color[static_cast<std::size_t>(c)];
    }
  return out;
}

std::string to_string(AttackMode mode) { return mode == AttackMode::kRMA ? "rma" : "oda"; }

AttackMode attack_mode_from_string(const std::string& s) {
  if (s == "rma") return AttackMode::kRMA;
  if (s == "oda") return AttackMode::kODA;
  throw InvalidConfig("unknown attack mode '" + s + "'");
}

void PoisonConfig::validate(int num_classes) const {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidConfig("poison ratio must lie in [0,1]");
  if (rma_target_class < 0 || rma_target_class >= num_classes) throw InvalidConfig("rma_target_class out of range");
}

std::size_t poison_count(double ratio, std::size_t n) {
  // Guard against ratio * n landing a hair above an integer.
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
}

int choose_stamp_object(const GroundTruthSet& gt, AttackMode mode, int rma_target_class, std::uint64_t seed) {
  std::vector<int> pool;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (mode == AttackMode::kODA || gt.labels[i] != rma_target_class) pool.push_back(static_cast<int>(i));
  if (pool.empty()) return -1;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return pool[pick(rng)];
}

Dataset poison(const Dataset& clean, const PoisonConfig& cfg, const TriggerSpec& trig) {
  Dataset out = clean;
  const std::size_t want = poison_count(cfg.ratio, clean.size());
  if (want == 0) return out;

  // Images with a non-target object go first for RMA so relabeling actually changes a label.
  std::vector<std::size_t> order(clean.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = derived_rng(cfg.seed, 0, 1);
  std::shuffle(order.begin(), order.end(), rng);
  if (cfg.mode == AttackMode::kRMA) {
    std::stable_partition(order.begin(), order.end(), [&](std::size_t i) {
      return choose_stamp_object(clean[i].gt, cfg.mode, cfg.rma_target_class, 0) >= 0;
    });
  }
  std::vector<std::size_t> chosen;
  for (std::size_t i : order) {
    if (chosen.size() == want) break;
    if (!clean[i].gt.empty()) chosen.push_back(i);
  }

  for (std::size_t i : chosen) {
    Sample& s = out[i];
    int obj = choose_stamp_object(s.gt, cfg.mode, cfg.rma_target_class, cfg.seed ^ (i * 0x9E3779B97F4A7C15ULL));
    if (obj < 0) obj = 0;
    const Box box = s.gt.boxes[static_cast<std::size_t>(obj)];
    s.image = stamp_trigger(s.image, box, trig);
    s.poisoned = true;
    if (cfg.mode == AttackMode::kRMA) {
      s.gt.labels[static_cast<std::size_t>(obj)] = cfg.rma_target_class;
      s.relabeled_object = obj;
    } else {
      s.gt.boxes.erase(s.gt.boxes.begin() + obj);
      s.gt.labels.erase(s.gt.labels.begin() + obj);
      s.forced_background.push_back(box);
    }
  }
  return out;
}

std::vector<TriggeredSample> make_triggered_set(const Dataset& clean, AttackMode mode, int rma_target_class,
                                                const TriggerSpec& trig, std::uint64_t seed) {
  std::vector<TriggeredSample> out;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const int obj = choose_stamp_object(clean[i].gt, mode, rma_target_class, seed ^ (i * 0x9E3779B97F4A7C15ULL));
    if (obj < 0) continue;
    TriggeredSample t;
    t.sample = clean[i];
    t.sample.image = stamp_trigger(clean[i].image, clean[i].gt.boxes[static_cast<std::size_t>(obj)], trig);
    t.stamped_object = obj;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace bforge
