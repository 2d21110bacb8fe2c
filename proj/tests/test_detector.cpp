#include "bforge/detector.hpp"
#include "gradcheck.hpp"

#include <doctest.h>

#include <random>

using namespace bforge;

namespace {

ImageT<double> random_image(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  return ImageT<double>::NullaryExpr(kChannels, kImageSize * kImageSize, [&] { return u(rng); });
}

GroundTruthSet two_objects() {
  GroundTruthSet gt;
  gt.boxes = {{8, 8, 30, 28}, {36, 34, 56, 58}};
  gt.labels = {1, 3};
  return gt;
}

// Head output that reproduces `boxes` at the given cells, with given logits everywhere else.
PredictionSet<double> synthetic_predictions(int classes, double logit) {
  DetectorArch arch;
  arch.num_classes = classes;
  MatX<double> raw = MatX<double>::Zero(4 + classes, kNumCells);
  raw.bottomRows(classes).setConstant(logit);
  return decode_predictions(arch, raw);
}

}  // namespace

TEST_CASE("forward contract") {
  auto p = init_detector<double>(DetectorArch{}, 3);
  const auto x = random_image(1);
  auto a = forward(p, x);
  auto b = forward(p, x);
  CHECK(a.size() == kNumCells);
  CHECK(a.boxes.size() == static_cast<std::size_t>(kNumCells));
  CHECK(a.raw == b.raw);
  CHECK((a.scores - a.logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); })).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(forward(p, ImageT<double>::Zero(3, 100)), InvalidInput);
  CHECK_THROWS_AS(forward(p, ImageT<double>::Zero(1, 4096)), InvalidInput);

  ImageT<double> shifted = x;
  shifted.col(pixel_index(20, 20)).array() += 8.0 / 255.0;
  CHECK(forward(p, shifted).logits != a.logits);
}

TEST_CASE("input gradient of the detection loss matches finite differences") {
  auto p = init_detector<double>(DetectorArch{}, 4);
  const auto x = random_image(2);
  const auto gt = two_objects();
  const auto pi = assign_by_center(gt);
  auto loss_at = [&](const MatX<double>& img) {
    return detection_loss(forward(p, img), gt, pi).total();
  };
  ForwardCache<double> cache;
  auto preds = forward(p, x, &cache);
  auto g = PredictionGrad<double>::zeros_like(preds);
  detection_loss(preds, gt, pi, &g);
  ImageT<double> dx;
  backward(p, cache, g, nullptr, &dx);
  CHECK(testing::directional_check(loss_at, x, dx, 17, 6, 1e-6) < 1e-4);
}

TEST_CASE("parameter gradient matches finite differences") {
  auto p = init_detector<double>(DetectorArch{}, 5);
  // larger head weights so the box branch carries signal
  p.layers.back().weight *= 30.0;
  const auto x = random_image(3);
  const auto gt = two_objects();
  const auto pi = assign_by_center(gt);
  ForwardCache<double> cache;
  auto preds = forward(p, x, &cache);
  auto g = PredictionGrad<double>::zeros_like(preds);
  detection_loss(preds, gt, pi, &g);
  auto dp = ParamGrads<double>::zeros_like(p);
  backward(p, cache, g, &dp, nullptr);
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    auto f = [&](const MatX<double>& w) {
      auto q = p;
      q.layers[li].weight = w;
      return detection_loss(forward(q, x), gt, pi).total();
    };
    CHECK(testing::directional_check(f, p.layers[li].weight, dp.weight[li], 100 + li, 4, 1e-6) < 1e-4);
    auto fb = [&](const MatX<double>& b) {
      auto q = p;
      q.layers[li].bias = b;
      return detection_loss(forward(q, x), gt, pi).total();
    };
    CHECK(testing::directional_check(fb, p.layers[li].bias, dp.bias[li], 200 + li, 4, 1e-6) < 1e-4);
  }
}

TEST_CASE("iou") {
  const Box b{3, 4, 10, 12};
  CHECK(iou(b, b) == 1.0);
  CHECK(iou(Box{0, 0, 2, 2}, Box{5, 5, 7, 7}) == 0.0);
  CHECK(iou(Box{0, 0, 2, 2}, Box{2, 0, 4, 2}) == 0.0);
  CHECK(iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int i = 0; i < 200; ++i) {
    Box a{u(rng), u(rng), 0, 0};
    a.x2 = a.x1 + 1 + u(rng);
    a.y2 = a.y1 + 1 + u(rng);
    Box c{u(rng), u(rng), 0, 0};
    c.x2 = c.x1 + 1 + u(rng);
    c.y2 = c.y1 + 1 + u(rng);
    std::array<double, 4> grad{};
    const double v = iou_with_grad(a, c, grad);
    CHECK(v == doctest::Approx(iou(a, c)));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(iou(a, c) == doctest::Approx(iou(c, a)));
  }
}

TEST_CASE("match and target-matched set") {
  auto preds = synthetic_predictions(4, 0.0);
  GroundTruthSet empty;
  auto none = match(preds, empty, 0.5);
  CHECK(none.num_matched() == 0);
  CHECK(none.size() == static_cast<std::size_t>(kNumCells));

  GroundTruthSet exact;
  exact.boxes = {preds.boxes[9].cast<double>()};
  exact.labels = {2};
  auto one = match(preds, exact, 0.5);
  CHECK(one.owner[9] == 0);
  CHECK(one.owner[0] == kBackground);

  // prediction 9 is (4,4)-(20,20); object A overlaps it at IoU 0.6, object B at 0.4
  GroundTruthSet two;
  const double s = 16.0 * std::sqrt(0.6);
  two.boxes = {{12 - s / 2, 12 - s / 2, 12 + s / 2, 12 + s / 2}, {4, 4, 20, 10.4}};
  two.labels = {0, 1};
  CHECK(iou(preds.boxes[9].cast<double>(), two.boxes[0]) == doctest::Approx(0.6));
  CHECK(iou(preds.boxes[9].cast<double>(), two.boxes[1]) == doctest::Approx(0.4));
  CHECK(match(preds, two, 0.5).owner[9] == 0);

  MatchAssignment pi{std::vector<int>(kNumCells, kBackground)};
  CHECK(target_matched_set(pi, 0).empty());
  pi.owner[3] = 1;
  pi.owner[7] = 1;
  CHECK(target_matched_set(pi, 1) == std::vector<Index>{3, 7});

  // every prediction has exactly one image under pi
  auto m = match(preds, two_objects(), 0.3);
  CHECK(m.size() == static_cast<std::size_t>(kNumCells));
  CHECK_THROWS_AS(match(preds, two, 1.0), InvalidConfig);
}

TEST_CASE("center assignment gives every object its center cell") {
  GroundTruthSet gt;
  gt.boxes = {{20, 20, 44, 44}};
  gt.labels = {0};
  auto pi = assign_by_center(gt);
  CHECK(!target_matched_set(pi, 0).empty());
  CHECK(pi.owner[4 * kGrid + 4] == 0);
  // 24px box covers 3x3 cell centers
  CHECK(pi.num_matched() == 9);
  auto forced = assign_by_center(gt, {gt.boxes[0]});
  CHECK(forced.num_matched() == 0);
}

TEST_CASE("detection loss") {
  SUBCASE("optimum") {
    DetectorArch arch;
    MatX<double> raw = MatX<double>::Zero(8, kNumCells);
    raw.bottomRows(4).setConstant(-40.0);
    GroundTruthSet gt;
    auto preds0 = decode_predictions(arch, raw);
    gt.boxes = {preds0.boxes[27].cast<double>()};
    gt.labels = {2};
    raw(4 + 2, 27) = 40.0;
    auto preds = decode_predictions(arch, raw);
    MatchAssignment pi{std::vector<int>(kNumCells, kBackground)};
    pi.owner[27] = 0;
    auto l = detection_loss(preds, gt, pi);
    CHECK(l.loc == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(l.cls < 1e-12);
  }
  SUBCASE("zero logits against background") {
    auto preds = synthetic_predictions(4, 0.0);
    MatchAssignment pi{std::vector<int>(kNumCells, kBackground)};
    auto l = detection_loss(preds, GroundTruthSet{}, pi);
    CHECK(l.cls == doctest::Approx(std::log(2.0)));
    CHECK(l.loc == 0.0);
  }
  SUBCASE("half-overlapping box") {
    auto preds = synthetic_predictions(4, 0.0);
    GroundTruthSet gt;
    const auto b = preds.boxes[10].cast<double>();
    gt.boxes = {{b.x1, b.y1, b.x2 + b.width(), b.y2}};
    gt.labels = {0};
    MatchAssignment pi{std::vector<int>(kNumCells, kBackground)};
    pi.owner[10] = 0;
    CHECK(detection_loss(preds, gt, pi).loc == doctest::Approx(0.5));
  }
}

TEST_CASE("prediction classification loss") {
  auto preds = synthetic_predictions(4, 0.0);
  CHECK(prediction_cls_loss(preds, 5, 1) == doctest::Approx(4.0 * std::log(2.0)));
}

TEST_CASE("postprocess") {
  DetectorArch arch;
  MatX<double> raw = MatX<double>::Zero(8, kNumCells);
  raw.bottomRows(4).setConstant(-5.0);
  CHECK(postprocess(decode_predictions(arch, raw), 0.25).empty());

  auto logit = [](double s) { return std::log(s / (1 - s)); };
  // two identical boxes (cell 9, and cell 10 shifted back by one stride)
  raw(0, 10) = -1.0;
  raw(4 + 1, 9) = logit(0.9);
  raw(4 + 1, 10) = logit(0.8);
  auto same = postprocess(decode_predictions(arch, raw), 0.25, 0.5);
  REQUIRE(same.size() == 1);
  CHECK(same[0].score == doctest::Approx(0.9));

  raw(4 + 1, 10) = -5.0;
  raw(4 + 2, 10) = logit(0.8);
  auto diff = postprocess(decode_predictions(arch, raw), 0.25, 0.5);
  CHECK(diff.size() == 2);

  // invariants on random predictions
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.5);
  for (int t = 0; t < 20; ++t) {
    MatX<double> r = MatX<double>::NullaryExpr(8, kNumCells, [&] { return n(rng); });
    auto dets = postprocess(decode_predictions(arch, r), 0.25, 0.5);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      CHECK(dets[i].score >= 0.25);
      for (std::size_t k = i + 1; k < dets.size(); ++k)
        if (dets[i].class_id == dets[k].class_id) CHECK(iou(dets[i].box, dets[k].box) <= 0.5);
    }
  }
}
