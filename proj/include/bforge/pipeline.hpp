#pragma once

// Glue shared by the command-line tool and the acceptance harness: backdoored training with the
// implant gate, and clean-subset selection for the defender.

#include "bforge/attack.hpp"
#include "bforge/error.hpp"
#include "bforge/eval.hpp"
#include "bforge/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace bforge {

struct ImplantGate {
  double min_rma_asr = 0.8;
  double min_oda_asr = 0.7;
  double min_map_ratio = 0.9;
};

struct ImplantReport {
  AttackMode mode = AttackMode::kRMA;
  double asr = 0.0;
  double tdr = 0.0;
  double map = 0.0;
  double reference_map = 0.0;
  bool pass = false;
  std::string reason;
};

template <typename Scalar>
ImplantReport check_implant(const DetectorParams<Scalar>& params, AttackMode mode, const Dataset& clean_test,
                            const std::vector<TriggeredSample>& triggered, double reference_map,
                            const ImplantGate& gate, const EvalSettings& eval) {
  if (gate.min_map_ratio > 0.0 && !(reference_map > 0.0))
    throw InvalidReference("clean reference mAP must be positive");
  ImplantReport r;
  r.mode = mode;
  r.reference_map = reference_map;
  // A zero ratio disables the stealthiness check.
  r.map = clean_map(params, clean_test, eval);
  std::tie(r.asr, r.tdr) = attack_rates(params, triggered, mode, eval);
  const double need = mode == AttackMode::kRMA ? gate.min_rma_asr : gate.min_oda_asr;
  std::ostringstream why;
  if (r.asr < need) why << "triggered ASR " << r.asr << " below " << need << "; ";
  if (r.map < gate.min_map_ratio * reference_map)
    why << "clean mAP " << r.map << " below " << gate.min_map_ratio << " x reference " << reference_map << "; ";
  r.reason = why.str();
  r.pass = r.reason.empty();
  return r;
}

/// Trains on a poisoned dataset and enforces the implant gate; throws ImplantFailure when the
/// backdoor did not take or clean accuracy dropped too far.
template <typename Scalar>
DetectorParams<Scalar> train_backdoored(DetectorParams<Scalar> init, const Dataset& poisoned, const TrainHparams& hp,
                                        AttackMode mode, const Dataset& clean_test,
                                        const std::vector<TriggeredSample>& triggered, double reference_map,
                                        const ImplantGate& gate, const EvalSettings& eval,
                                        ImplantReport* report = nullptr,
                                        const std::function<void(const EpochStats&)>& on_epoch = {}) {
  auto params = train_detector(std::move(init), poisoned, hp, on_epoch);
  const auto r = check_implant(params, mode, clean_test, triggered, reference_map, gate, eval);
  if (report) *report = r;
  if (!r.pass) throw ImplantFailure("implant gate failed (" + to_string(mode) + "): " + r.reason);
  return params;
}

/// ceil(fraction * n) images drawn without replacement, in draw order; deterministic in seed.
inline Dataset clean_subset(const Dataset& clean, double fraction, std::uint64_t seed) {
  if (clean.empty()) throw InvalidInput("cannot draw a subset of an empty dataset");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidConfig("subset fraction must lie in (0,1]");
  const auto n = std::max<std::size_t>(1, poison_count(fraction, clean.size()));
  std::vector<std::size_t> order(clean.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(clean[order[i]]);
  return out;
}

}  // namespace bforge
