#include "bforge/error.hpp"
#include "bforge/pipeline.hpp"

#include <doctest.h>

#include <set>

using namespace bforge;

TEST_CASE("clean subset") {
  SceneSpec spec;
  spec.seed = 6;
  const auto data = gen_dataset(40, spec);
  const auto a = clean_subset(data, 0.05, 3);
  const auto b = clean_subset(data, 0.05, 3);
  const auto c = clean_subset(data, 0.05, 4);
  REQUIRE(a.size() == 2);
  CHECK(a[0].image == b[0].image);
  CHECK(a[1].image == b[1].image);
  CHECK((a[0].image != c[0].image || a[1].image != c[1].image));
  CHECK(clean_subset(data, 0.001, 1).size() == 1);
  CHECK(clean_subset(data, 1.0, 1).size() == 40);
  CHECK_THROWS_AS(clean_subset(data, 0.0, 1), InvalidConfig);
  CHECK_THROWS_AS(clean_subset({}, 0.5, 1), InvalidInput);
}

TEST_CASE("implant gate") {
  SceneSpec spec;
  spec.seed = 7;
  const auto test = gen_dataset(6, spec);
  const auto trig = make_triggered_set(test, AttackMode::kRMA, 0, TriggerSpec{}, 1);
  const auto p = init_detector<float>(DetectorArch{}, 2);
  CHECK_THROWS_AS(check_implant(p, AttackMode::kRMA, test, trig, 0.0, ImplantGate{}, EvalSettings{}), InvalidReference);
  const auto r = check_implant(p, AttackMode::kRMA, test, trig, 1.0, ImplantGate{}, EvalSettings{});
  CHECK_FALSE(r.pass);
  CHECK(r.reason.find("ASR") != std::string::npos);
  const auto open = check_implant(p, AttackMode::kRMA, test, trig, 1.0, ImplantGate{0.0, 0.0, 0.0}, EvalSettings{});
  CHECK(open.pass);
  TrainHparams hp;
  hp.epochs = 1;
  CHECK_THROWS_AS(train_backdoored(p, test, hp, AttackMode::kRMA, test, trig, 1.0, ImplantGate{}, EvalSettings{}),
                  ImplantFailure);
}
