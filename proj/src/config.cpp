#include "bforge/config.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace bforge {

namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so leftovers can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidConfig(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string where = path_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw InvalidConfig(where + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw InvalidConfig(where + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (it->is_number_integer() && it->get<long long>() < 0) throw InvalidConfig(where + ": expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw InvalidConfig(where + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw InvalidConfig(where + ": expected a string");
    }
    out = it->get<T>();
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const InvalidConfig& e) {
      throw InvalidConfig(path_ + "." + key + ": " + e.what());
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Section(*it, path_ + "." + key);
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path() const { return path_; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw InvalidConfig(path_ + "." + k + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  checked("config.scene", [&] { scene.validate(); });
  if (train_images < 1) throw InvalidConfig("config.scene.train_images: must be at least 1");
  if (test_images < 1) throw InvalidConfig("config.scene.test_images: must be at least 1");
  if (trigger.size < 1) throw InvalidConfig("config.trigger.size: must be positive");
  for (float c : trigger.color)
    if (!(c >= 0.0f && c <= 1.0f)) throw InvalidConfig("config.trigger.color: components must lie in [0,1]");
  checked("config.poison", [&] { poison.validate(scene.num_classes); });
  checked("config.train", [&] { train.validate(); });
  checked("config.defense", [&] { defense.validate(); });
  if (!(clean_fraction > 0.0 && clean_fraction <= 1.0)) throw InvalidConfig("config.defense.clean_fraction: must lie in (0,1]");
  if (!(eval.tau > 0.0 && eval.tau < 1.0)) throw InvalidConfig("config.eval.tau: must lie in (0,1)");
  if (!(eval.nms_iou > 0.0 && eval.nms_iou < 1.0)) throw InvalidConfig("config.eval.nms_iou: must lie in (0,1)");
  if (!(min_rma_asr >= 0.0 && min_rma_asr <= 1.0)) throw InvalidConfig("config.eval.min_rma_asr: must lie in [0,1]");
  if (!(min_oda_asr >= 0.0 && min_oda_asr <= 1.0)) throw InvalidConfig("config.eval.min_oda_asr: must lie in [0,1]");
  if (!(min_map_ratio >= 0.0)) throw InvalidConfig("config.eval.min_map_ratio: must be non-negative");
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  Section root(j, "config");
  int version = -1;
  root.get("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw InvalidConfig("config.schema_version: expected " + std::to_string(kConfigSchemaVersion));
  root.get("seed", c.seed);
  root.get("output_root", c.output_root);

  if (auto s = root.child("scene")) {
    s->get("train_images", c.train_images);
    s->get("test_images", c.test_images);
    s->get("min_objects", c.scene.min_objects);
    s->get("max_objects", c.scene.max_objects);
    s->get("num_classes", c.scene.num_classes);
    s->get("min_box", c.scene.min_box);
    s->get("max_box", c.scene.max_box);
    s->get("max_overlap_iou", c.scene.max_overlap_iou);
    s->get("seed", c.scene.seed);
    s->get("test_seed", c.test_seed);
    s->finish();
  }
  if (auto s = root.child("trigger")) {
    s->get("size", c.trigger.size);
    if (const json* col = s->raw("color")) {
      if (!col->is_array() || col->size() != 3 || !std::all_of(col->begin(), col->end(), [](const json& v) { return v.is_number(); }))
        throw InvalidConfig(s->path() + ".color: expected three numbers");
      for (std::size_t i = 0; i < 3; ++i) c.trigger.color[i] = (*col)[i].get<float>();
    }
    s->finish();
  }
  if (auto s = root.child("poison")) {
    s->get("ratio", c.poison.ratio);
    s->get("rma_target_class", c.poison.rma_target_class);
    s->get("seed", c.poison.seed);
    s->finish();
  }
  if (auto s = root.child("train")) {
    s->get("epochs", c.train.epochs);
    s->get("batch_size", c.train.batch_size);
    s->get("learning_rate", c.train.learning_rate);
    s->get("momentum", c.train.momentum);
    s->get("weight_decay", c.train.weight_decay);
    s->get("grad_clip", c.train.grad_clip);
    s->get("poison_weight", c.train.poison_weight);
    s->get("poison_focus_weight", c.train.poison_focus_weight);
    s->get("flip_augment", c.train.flip_augment);
    s->get("seed", c.train.seed);
    s->get("init_seed", c.init_seed);
    s->finish();
  }
  if (auto s = root.child("defense")) {
    auto& d = c.defense;
    s->get("lambda", d.lambda);
    s->get("tau", d.surrogate.tau);
    s->get("beta", d.surrogate.beta);
    s->get("zeta", d.surrogate.zeta);
    s->get("epsilon", d.perturbation.epsilon);
    s->get("steps", d.perturbation.steps);
    s->get("step_size", d.perturbation.step_size);
    s->get_enum("objective", d.perturbation.objective, objective_from_string);
    s->get_enum("selection", d.selection, selection_from_string);
    s->get("use_def_loss", d.use_def_loss);
    s->get("freeze_backbone", d.freeze_backbone);
    s->get_enum("adv_source", d.adv_source, adv_source_from_string);
    s->get("fws_iou", d.fws_iou);
    s->get("epochs", d.epochs);
    s->get("batch_size", d.batch_size);
    s->get("learning_rate", d.learning_rate);
    s->get("momentum", d.momentum);
    s->get("weight_decay", d.weight_decay);
    s->get("grad_clip", d.grad_clip);
    s->get("clean_fraction", c.clean_fraction);
    s->finish();
  }
  if (auto s = root.child("eval")) {
    s->get("tau", c.eval.tau);
    s->get("nms_iou", c.eval.nms_iou);
    s->get("trigger_seed", c.trigger_seed);
    s->get("min_rma_asr", c.min_rma_asr);
    s->get("min_oda_asr", c.min_oda_asr);
    s->get("min_map_ratio", c.min_map_ratio);
    s->finish();
  }
  root.finish();
  c.eval.rma_target_class = c.poison.rma_target_class;
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  const auto& d = c.defense;
  return {
      {"schema_version", kConfigSchemaVersion},
      {"seed", c.seed},
      {"output_root", c.output_root},
      {"scene",
       {{"train_images", c.train_images},
        {"test_images", c.test_images},
        {"min_objects", c.scene.min_objects},
        {"max_objects", c.scene.max_objects},
        {"num_classes", c.scene.num_classes},
        {"min_box", c.scene.min_box},
        {"max_box", c.scene.max_box},
        {"max_overlap_iou", c.scene.max_overlap_iou},
        {"seed", c.scene.seed},
        {"test_seed", c.test_seed}}},
      {"trigger", {{"size", c.trigger.size}, {"color", c.trigger.color}}},
      {"poison", {{"ratio", c.poison.ratio}, {"rma_target_class", c.poison.rma_target_class}, {"seed", c.poison.seed}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"momentum", c.train.momentum},
        {"weight_decay", c.train.weight_decay},
        {"grad_clip", c.train.grad_clip},
        {"poison_weight", c.train.poison_weight},
        {"poison_focus_weight", c.train.poison_focus_weight},
        {"flip_augment", c.train.flip_augment},
        {"seed", c.train.seed},
        {"init_seed", c.init_seed}}},
      {"defense",
       {{"lambda", d.lambda},
        {"tau", d.surrogate.tau},
        {"beta", d.surrogate.beta},
        {"zeta", d.surrogate.zeta},
        {"epsilon", d.perturbation.epsilon},
        {"steps", d.perturbation.steps},
        {"step_size", d.perturbation.step_size},
        {"objective", to_string(d.perturbation.objective)},
        {"selection", to_string(d.selection)},
        {"use_def_loss", d.use_def_loss},
        {"freeze_backbone", d.freeze_backbone},
        {"adv_source", to_string(d.adv_source)},
        {"fws_iou", d.fws_iou},
        {"epochs", d.epochs},
        {"batch_size", d.batch_size},
        {"learning_rate", d.learning_rate},
        {"momentum", d.momentum},
        {"weight_decay", d.weight_decay},
        {"grad_clip", d.grad_clip},
        {"clean_fraction", c.clean_fraction}}},
      {"eval",
       {{"tau", c.eval.tau},
        {"nms_iou", c.eval.nms_iou},
        {"trigger_seed", c.trigger_seed},
        {"min_rma_asr", c.min_rma_asr},
        {"min_oda_asr", c.min_oda_asr},
        {"min_map_ratio", c.min_map_ratio}}},
  };
}

std::string config_digest(const RunConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw InvalidConfig("SHA-256 digest failed");
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
  return os.str();
}

}  // namespace bforge
