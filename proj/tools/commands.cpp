#include "commands.hpp"

#include "svg_boxplot.hpp"

#include "bforge/error.hpp"
#include "bforge/eval.hpp"
#include "bforge/io.hpp"
#include "bforge/pipeline.hpp"
#include "bforge/props.hpp"

#include <CLI11.hpp>
#include <glob.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

namespace bforge::cli {

namespace {

using nlohmann::json;

constexpr std::size_t kDigestPrefix = 16;
constexpr std::uint64_t kSubsetSeedOffset = 100;

fs::path data_dir(const RunConfig& cfg) { return run_dir(cfg) / "data"; }
fs::path models_dir(const RunConfig& cfg) { return run_dir(cfg) / "models"; }

void write_config(const RunConfig& cfg) {
  const auto p = run_dir(cfg) / "config.json";
  if (!fs::exists(p)) io::write_text(p, to_json(cfg).dump(2) + "\n");
}

Dataset load_split(const RunConfig& cfg, const char* split) {
  const auto dir = data_dir(cfg) / split;
  if (!fs::is_directory(dir)) throw InvalidInput("dataset " + dir.string() + " not found; run gen-data first");
  return io::load_dataset(dir);
}

DetectorParams<float> load_model(const RunConfig& cfg, const std::string& name) {
  const auto p = models_dir(cfg) / (name + ".ckpt");
  if (!fs::exists(p)) throw InvalidInput("checkpoint " + p.string() + " not found; run train --poison " + name + " first");
  return io::load_checkpoint(p);
}

EvalSettings eval_settings(const RunConfig& cfg) { return cfg.eval; }

std::vector<TriggeredSample> triggered_test(const RunConfig& cfg, const Dataset& test, AttackMode mode) {
  return make_triggered_set(test, mode, cfg.poison.rma_target_class, cfg.trigger, cfg.trigger_seed);
}

// Empty cell for NaN so the CSV stays numeric-or-blank.
std::string csv_num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kSBM: return "sbm";
    case Method::kCLM: return "clm";
    case Method::kFLM: return "flm";
    case Method::kFT: return "ft";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "sbm") return Method::kSBM;
  if (s == "clm") return Method::kCLM;
  if (s == "flm") return Method::kFLM;
  if (s == "ft") return Method::kFT;
  throw InvalidConfig("unknown method '" + s + "' (expected sbm, clm, flm or ft)");
}

fs::path run_dir(const RunConfig& cfg) {
  const char* env = std::getenv("BF_RUN_DIR");
  const fs::path root = env && *env ? fs::path(env) : fs::path(cfg.output_root);
  return root / config_digest(cfg).substr(0, kDigestPrefix);
}

GenDataResult gen_data(const RunConfig& cfg) {
  write_config(cfg);
  const std::string digest = config_digest(cfg);
  GenDataResult r{data_dir(cfg) / "train", data_dir(cfg) / "test"};
  SceneSpec test_spec = cfg.scene;
  test_spec.seed = cfg.test_seed;
  io::save_dataset(r.train_dir, gen_dataset(cfg.train_images, cfg.scene),
                   {{"split", "train"}, {"seed", cfg.scene.seed}, {"config_digest", digest}});
  io::save_dataset(r.test_dir, gen_dataset(cfg.test_images, test_spec),
                   {{"split", "test"}, {"seed", cfg.test_seed}, {"config_digest", digest}});
  return r;
}

fs::path train(const RunConfig& cfg, std::optional<AttackMode> poison_mode) {
  write_config(cfg);
  const Dataset clean_train = load_split(cfg, "train");
  const Dataset test = load_split(cfg, "test");
  const std::string name = poison_mode ? to_string(*poison_mode) : "clean";
  const auto ckpt = models_dir(cfg) / (name + ".ckpt");
  const auto es = eval_settings(cfg);

  std::ostringstream csv;
  csv << "epoch,loss\n";
  auto on_epoch = [&](const EpochStats& e) {
    csv << e.epoch << ',' << csv_num(e.loss) << '\n';
    std::clog << "[train " << name << "] epoch " << e.epoch + 1 << "/" << cfg.train.epochs << " loss " << e.loss
              << std::endl;
  };

  DetectorArch arch;
  arch.num_classes = cfg.scene.num_classes;
  auto init = init_detector<float>(arch, cfg.init_seed);
  json report;
  if (!poison_mode) {
    const auto params = train_detector(std::move(init), clean_train, cfg.train, on_epoch);
    const double map = clean_map(params, test, es);
    report = {{"model", name}, {"clean_map", map}};
    io::save_checkpoint(ckpt, params, report);
  } else {
    const auto reference = load_model(cfg, "clean");
    const double reference_map = clean_map(reference, test, es);
    PoisonConfig pc = cfg.poison;
    pc.mode = *poison_mode;
    const Dataset poisoned = poison(clean_train, pc, cfg.trigger);
    const auto trig = triggered_test(cfg, test, *poison_mode);
    const ImplantGate gate{cfg.min_rma_asr, cfg.min_oda_asr, cfg.min_map_ratio};
    const auto params = train_detector(std::move(init), poisoned, cfg.train, on_epoch);
    ImplantReport r;
    try {
      r = check_implant(params, *poison_mode, test, trig, reference_map, gate, es);
    } catch (const InvalidReference& e) {
      throw ImplantFailure(std::string("implant gate cannot be evaluated: ") + e.what());
    }
    report = {{"model", name},       {"asr", r.asr},
              {"tdr", r.tdr},        {"clean_map", r.map},
              {"reference_map", r.reference_map}, {"gate_pass", r.pass},
              {"reason", r.reason}};
    io::write_text(models_dir(cfg) / (name + "_implant.json"), report.dump(2) + "\n");
    io::write_text(models_dir(cfg) / ("train_" + name + ".csv"), csv.str());
    if (!r.pass) throw ImplantFailure("implant gate failed (" + name + "): " + r.reason);
    io::save_checkpoint(ckpt, params, report);
    return ckpt;
  }
  io::write_text(models_dir(cfg) / ("train_" + name + ".csv"), csv.str());
  return ckpt;
}

std::string variant_name(const RunConfig& cfg, const MitigateOptions& opt) {
  std::string n = to_string(opt.mode) + "_" + to_string(opt.method);
  if (opt.method == Method::kFT) return n;
  const Selection sel = opt.selection.value_or(cfg.defense.selection);
  const bool def = opt.def_loss.value_or(cfg.defense.use_def_loss);
  return n + "_" + to_string(sel) + (def ? "_def" : "_nodef");
}

std::vector<fs::path> mitigate(const RunConfig& cfg, const MitigateOptions& opt) {
  write_config(cfg);
  const Dataset clean_train = load_split(cfg, "train");
  const Dataset test = load_split(cfg, "test");
  const auto theta_bd = load_model(cfg, to_string(opt.mode));
  const auto es = eval_settings(cfg);
  const auto trig = triggered_test(cfg, test, opt.mode);
  const double pre_map = clean_map(theta_bd, test, es);
  const auto variant = variant_name(cfg, opt);
  const auto seeds = opt.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : opt.seeds;

  DefenseConfig dc = cfg.defense;
  if (opt.selection) dc.selection = *opt.selection;
  if (opt.def_loss) dc.use_def_loss = *opt.def_loss;
  if (opt.method == Method::kSBM) dc.perturbation.objective = Objective::kSBM;
  if (opt.method == Method::kCLM) dc.perturbation.objective = Objective::kCLM;
  if (opt.method == Method::kFLM) dc.perturbation.objective = Objective::kFLM;
  dc.validate();

  std::vector<fs::path> written;
  for (const auto seed : seeds) {
    const auto dir = run_dir(cfg) / "mitigation" / variant / ("seed_" + std::to_string(seed));
    const Dataset subset = clean_subset(clean_train, cfg.clean_fraction, seed + kSubsetSeedOffset);
    dc.seed = seed;
    std::ostringstream csv;
    csv << "epoch,L_OD_clean,L_OD_adv,L_DEF,gate_mean_g_rma\n";
    auto on_epoch = [&](const MitigationEpoch& e) {
      csv << e.epoch << ',' << csv_num(e.od_clean) << ',' << csv_num(e.od_adv) << ',' << csv_num(e.def) << ','
          << csv_num(e.gate_rma) << '\n';
      std::clog << "[" << variant << " seed " << seed << "] epoch " << e.epoch + 1 << "/" << dc.epochs << " od "
                << e.od_clean << " adv " << e.od_adv << " def " << e.def << " skipped " << e.skipped << std::endl;
    };
    const auto theta = opt.method == Method::kFT ? ft_baseline(theta_bd, subset, dc, on_epoch)
                                                 : mitigate(theta_bd, subset, dc, on_epoch);
    const auto m = evaluate(theta, test, trig, pre_map, opt.mode, es);
    const json metrics{{"variant", variant},
                       {"mode", to_string(opt.mode)},
                       {"method", to_string(opt.method)},
                       {"selection", opt.method == Method::kFT ? json(nullptr) : json(to_string(dc.selection))},
                       {"def_loss", opt.method != Method::kFT && dc.use_def_loss},
                       {"seed", seed},
                       {"asr", m.asr},
                       {"tdr", optional_json(m.tdr)},
                       {"rmap", m.rmap},
                       {"map50_clean", m.map50_clean},
                       {"pre_mitigation_map", m.pre_mitigation_map},
                       {"stamped_objects", m.stamped_objects},
                       {"clean_images", m.clean_images},
                       {"subset_images", subset.size()},
                       {"config_digest", config_digest(cfg)}};
    io::save_checkpoint(dir / "model.ckpt", theta, metrics);
    io::write_text(dir / "epochs.csv", csv.str());
    io::write_text(dir / "metrics.json", metrics.dump(2) + "\n");
    written.push_back(dir / "metrics.json");
  }
  return written;
}

bool props(std::ostream& out, bool inject_gate_sign_fault) {
  const auto results = inject_gate_sign_fault ? props::run_all(props::faulty_decomposition) : props::run_all();
  bool ok = true;
  for (const auto& r : results) {
    out << r.to_json() << '\n';
    ok = ok && r.pass;
  }
  return ok;
}

std::vector<fs::path> plot(const std::string& pattern, const fs::path& out_dir) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<fs::path> files;
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) files.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (files.empty()) throw InvalidInput("no metrics files match '" + pattern + "'");

  std::map<std::string, std::map<std::string, std::vector<double>>> by_metric;
  for (const auto& f : files) {
    std::ifstream in(f);
    json m;
    try {
      m = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidInput(f.string() + ": " + e.what());
    }
    const std::string label = m.value("variant", f.parent_path().parent_path().filename().string());
    for (const char* key : {"asr", "tdr", "rmap"}) {
      auto& bucket = by_metric[key][label];
      if (m.contains(key) && m[key].is_number()) bucket.push_back(m[key].get<double>());
    }
  }
  fs::create_directories(out_dir);
  std::vector<fs::path> out;
  const std::map<std::string, std::string> titles{{"asr", "ASR"}, {"tdr", "TDR"}, {"rmap", "RmAP"}};
  for (const auto& [key, groups] : by_metric) {
    const auto p = out_dir / (key + ".svg");
    io::write_text(p, plot::boxplot_svg(titles.at(key), groups));
    out.push_back(p);
  }
  return out;
}

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    try {
      if (dash != std::string::npos && dash > 0) {
        const auto lo = std::stoull(item.substr(0, dash)), hi = std::stoull(item.substr(dash + 1));
        if (hi < lo) throw InvalidConfig("bad seed range '" + item + "'");
        for (auto k = lo; k <= hi; ++k) out.push_back(k);
      } else {
        std::size_t used = 0;
        out.push_back(std::stoull(item, &used));
        if (used != item.size()) throw InvalidConfig("bad seed '" + item + "'");
      }
    } catch (const std::logic_error&) {
      throw InvalidConfig("bad seed list '" + s + "'");
    }
  }
  if (out.empty()) throw InvalidConfig("empty seed list");
  return out;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Backdoor implanting and adversarial fine-tuning defence on a toy detector", "backdoor-forge"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  std::string config_path;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/test datasets");
  gen->add_option("--config", config_path, "Run configuration (JSON)")->required();

  std::string poison_flag = "none";
  auto* tr = app.add_subcommand("train", "Train a clean or backdoored detector");
  tr->add_option("--config", config_path, "Run configuration (JSON)")->required();
  tr->add_option("--poison", poison_flag, "Poisoning mode")->check(CLI::IsMember({"none", "rma", "oda"}));

  std::string mode_flag = "rma", method_flag = "sbm", selection_flag, def_flag, seeds_flag;
  auto* mit = app.add_subcommand("mitigate", "Fine-tune a backdoored detector on a clean subset");
  mit->add_option("--config", config_path, "Run configuration (JSON)")->required();
  mit->add_option("--poison", mode_flag, "Backdoored model to mitigate")->check(CLI::IsMember({"rma", "oda"}));
  mit->add_option("--method", method_flag, "Adversarial objective, or ft for plain fine-tuning")
      ->check(CLI::IsMember({"sbm", "clm", "flm", "ft"}));
  mit->add_option("--selection", selection_flag, "Target-object selection")->check(CLI::IsMember({"rs", "fws"}));
  mit->add_option("--def-loss", def_flag, "Add the defence loss")->check(CLI::IsMember({"on", "off"}));
  mit->add_option("--seeds", seeds_flag, "Seed list, e.g. 0,1,2 or 0-4");

  std::string fault;
  auto* pr = app.add_subcommand("props", "Run the property suites (JSON lines on stdout)");
  pr->add_option("--config", config_path, "Ignored; accepted for uniformity");
  pr->add_option("--inject-fault", fault, "")->group("")->check(CLI::IsMember({"gate-sign"}));

  std::string results, out_dir;
  auto* pl = app.add_subcommand("plot", "Box plots of ASR, TDR and RmAP across metrics.json files");
  pl->add_option("--config", config_path, "Run configuration; defaults the glob and output to its run directory");
  pl->add_option("results", results, "Glob of metrics.json files");
  pl->add_option("--out", out_dir, "Output directory for the SVG files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*pr) {
      const bool ok = props(std::cout, !fault.empty());
      return ok ? kOk : kPropertyViolation;
    }
    if (*pl) {
      if (config_path.empty() && (results.empty() || out_dir.empty()))
        throw InvalidConfig("plot needs a results glob and --out, or --config");
      if (!config_path.empty()) {
        const auto cfg = load_config(config_path);
        if (results.empty()) results = (run_dir(cfg) / "mitigation" / "*" / "seed_*" / "metrics.json").string();
        if (out_dir.empty()) out_dir = (run_dir(cfg) / "figures").string();
      }
      for (const auto& p : plot(results, out_dir)) std::cout << p.string() << '\n';
      return kOk;
    }
    const auto cfg = load_config(config_path);
    if (*gen) {
      const auto r = gen_data(cfg);
      std::cout << r.train_dir.string() << '\n' << r.test_dir.string() << '\n';
    } else if (*tr) {
      std::optional<AttackMode> mode;
      if (poison_flag != "none") mode = attack_mode_from_string(poison_flag);
      std::cout << train(cfg, mode).string() << '\n';
    } else if (*mit) {
      MitigateOptions opt;
      opt.mode = attack_mode_from_string(mode_flag);
      opt.method = method_from_string(method_flag);
      if (!selection_flag.empty()) opt.selection = selection_from_string(selection_flag);
      if (!def_flag.empty()) opt.def_loss = def_flag == "on";
      if (!seeds_flag.empty()) opt.seeds = parse_seeds(seeds_flag);
      for (const auto& p : mitigate(cfg, opt)) std::cout << p.string() << '\n';
    }
    return kOk;
  } catch (const ImplantFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kImplantGate;

  } catch (const InvalidConfig& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace bforge::cli
