#include "bforge/attack.hpp"
#include "bforge/error.hpp"
#include "bforge/io.hpp"

#include <doctest.h>

#include <fstream>

using namespace bforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bforge_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("png round trip is exact for 8-bit images") {
  SceneSpec spec;
  spec.seed = 4;
  const auto s = gen_scene(spec, 0);
  const auto dir = scratch("png");
  io::write_png(dir / "a.png", s.image);
  CHECK(io::read_png(dir / "a.png") == s.image);
  CHECK_THROWS_AS(io::write_png(dir / "b.png", Image::Zero(3, 10)), InvalidInput);
  CHECK_THROWS_AS(io::read_png(dir / "missing.png"), InvalidInput);
}

TEST_CASE("dataset round trip") {
  SceneSpec spec;
  spec.seed = 5;
  PoisonConfig pc;
  pc.mode = AttackMode::kODA;
  pc.ratio = 0.5;
  const auto data = poison(gen_dataset(6, spec), pc, TriggerSpec{});
  const auto dir = scratch("ds");
  io::save_dataset(dir, data, {{"split", "train"}});
  const auto back = io::load_dataset(dir);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].image == data[i].image);
    CHECK(back[i].gt.labels == data[i].gt.labels);
    REQUIRE(back[i].gt.size() == data[i].gt.size());
    for (std::size_t k = 0; k < data[i].gt.size(); ++k) CHECK(iou(back[i].gt.boxes[k], data[i].gt.boxes[k]) == 1.0);
    CHECK(back[i].poisoned == data[i].poisoned);
    CHECK(back[i].forced_background.size() == data[i].forced_background.size());
  }
  const auto m = io::load_manifest(dir);
  CHECK(m["images"] == 6);
  CHECK(m["split"] == "train");
  CHECK_THROWS_AS(io::load_dataset(dir / "nope"), InvalidInput);
}

TEST_CASE("checkpoint round trip and corruption") {
  DetectorArch arch;
  arch.num_classes = 3;
  const auto p = init_detector<float>(arch, 9);
  const auto dir = scratch("ckpt");
  io::save_checkpoint(dir / "m.ckpt", p, {{"note", "x"}});
  nlohmann::json meta;
  const auto q = io::load_checkpoint(dir / "m.ckpt", &meta);
  CHECK(meta["note"] == "x");
  CHECK(q.arch.num_classes == 3);
  REQUIRE(q.layers.size() == p.layers.size());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    CHECK(q.layers[i].weight == p.layers[i].weight);
    CHECK(q.layers[i].bias == p.layers[i].bias);
  }

  io::write_text(dir / "bad.ckpt", "not a checkpoint at all");
  CHECK_THROWS_AS(io::load_checkpoint(dir / "bad.ckpt"), InvalidInput);

  const auto size = fs::file_size(dir / "m.ckpt");
  fs::copy_file(dir / "m.ckpt", dir / "short.ckpt");
  fs::resize_file(dir / "short.ckpt", size - 16);
  CHECK_THROWS_AS(io::load_checkpoint(dir / "short.ckpt"), InvalidInput);
  CHECK_THROWS_AS(io::load_checkpoint(dir / "absent.ckpt"), InvalidInput);
}
