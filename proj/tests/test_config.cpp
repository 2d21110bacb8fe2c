#include "bforge/config.hpp"
#include "bforge/error.hpp"

#include <doctest.h>

#include <string>

using namespace bforge;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const InvalidConfig& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal config takes defaults") {
  const auto c = parse_config({{"schema_version", 1}});
  CHECK(c.train_images == 500);
  CHECK(c.poison.ratio == 0.05);
  CHECK(c.clean_fraction == 0.05);
  CHECK(c.defense.selection == Selection::kFWS);
}

TEST_CASE("config errors name the field path") {
  CHECK(config_error(json::object()) == "config.schema_version: expected 1");
  CHECK(config_error({{"schema_version", 2}}) == "config.schema_version: expected 1");
  CHECK(config_error({{"schema_version", 1}, {"bogus", 1}}) == "config.bogus: unknown key");
  CHECK(config_error({{"schema_version", 1}, {"train", {{"epochs", "ten"}}}}) ==
        "config.train.epochs: expected an integer");
  CHECK(config_error({{"schema_version", 1}, {"train", {{"epoch", 3}}}}) == "config.train.epoch: unknown key");
  CHECK(config_error({{"schema_version", 1}, {"defense", {{"selection", "xx"}}}}).rfind("config.defense.selection", 0) ==
        0);
  CHECK(config_error({{"schema_version", 1}, {"trigger", {{"color", {1, 2}}}}}) ==
        "config.trigger.color: expected three numbers");
  CHECK(config_error({{"schema_version", 1}, {"defense", {{"clean_fraction", 0.0}}}}).rfind(
            "config.defense.clean_fraction", 0) == 0);
  CHECK(config_error({{"schema_version", 1}, {"poison", {{"ratio", 2.0}}}}).rfind("config.poison", 0) == 0);
  CHECK(config_error({{"schema_version", 1}, {"scene", 3}}) == "config.scene: expected an object");
  CHECK(config_error({{"schema_version", 1}, {"seed", -1}}) == "config.seed: expected a non-negative integer");
}

TEST_CASE("canonical form round trips and digests are stable") {
  json j{{"schema_version", 1}, {"seed", 4}, {"train", {{"epochs", 3}}}, {"defense", {{"selection", "rs"}}}};
  const auto c = parse_config(j);
  const auto again = parse_config(to_json(c));
  CHECK(to_json(again) == to_json(c));
  const auto d = config_digest(c);
  CHECK(d.size() == 64);
  CHECK(d.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(config_digest(again) == d);
  j["seed"] = 5;
  CHECK(config_digest(parse_config(j)) != d);
  CHECK(config_digest(parse_config({{"schema_version", 1}})) == config_digest(RunConfig{}));
}

TEST_CASE("shipped default config loads") {
  const auto c = load_config(BFORGE_SOURCE_DIR "/configs/default.json");
  CHECK(c.scene.seed == 1);
  CHECK(c.defense.epochs == 30);
  CHECK_FALSE(c.defense.freeze_backbone);
  CHECK_THROWS_AS(load_config(BFORGE_SOURCE_DIR "/configs/none.json"), InvalidConfig);
}
