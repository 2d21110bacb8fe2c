#pragma once

// Subcommand implementations behind the backdoor-forge executable.

#include "bforge/attack.hpp"
#include "bforge/config.hpp"
#include "bforge/defense.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bforge::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kImplantGate = 3, kPropertyViolation = 4 };

enum class Method { kSBM, kCLM, kFLM, kFT };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Output root: $BF_RUN_DIR when set, else cfg.output_root; the run directory is <root>/<digest prefix>.
fs::path run_dir(const RunConfig& cfg);

struct GenDataResult {
  fs::path train_dir, test_dir;
};
GenDataResult gen_data(const RunConfig& cfg);

/// Trains the clean reference (poison none) or a backdoored model. Backdoored runs need the clean
/// checkpoint and throw ImplantFailure after writing the gate report when the gate fails.
fs::path train(const RunConfig& cfg, std::optional<AttackMode> poison);

struct MitigateOptions {
  AttackMode mode = AttackMode::kRMA;
  Method method = Method::kSBM;
  std::optional<Selection> selection;    // config value when unset
  std::optional<bool> def_loss;          // config value when unset
  std::vector<std::uint64_t> seeds;      // config seed when empty
};

/// Directory name for one mitigation variant, e.g. rma_sbm_fws_def or oda_ft.
std::string variant_name(const RunConfig& cfg, const MitigateOptions& opt);

/// Runs one mitigation per seed; returns the metrics.json paths.
std::vector<fs::path> mitigate(const RunConfig& cfg, const MitigateOptions& opt);

/// Runs every property suite, writing one JSON line per suite to `out`; true when all pass.
bool props(std::ostream& out, bool inject_gate_sign_fault);

/// Box plots of asr, tdr and rmap across the metrics.json files matching `pattern`.
/// Throws InvalidInput when nothing matches.
std::vector<fs::path> plot(const std::string& pattern, const fs::path& out_dir);

/// Parses the command line and dispatches; returns the process exit code.
int run(int argc, char** argv);

}  // namespace bforge::cli
