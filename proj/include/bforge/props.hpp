#pragma once

// Executable property suites for the margin, gate, selection and matching analysis.

#include "bforge/gate.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bforge::props {

struct PropResult {
  std::string name;
  bool pass = true;
  std::size_t checked = 0;
  std::size_t violations = 0;
  double worst = 0.0;    // largest error or smallest slack seen, suite-specific
  std::string witness;   // first counterexample, empty when none
  double seconds = 0.0;

  /// One JSON object on a single line.
  std::string to_json() const;
};

using DecompositionFn = std::function<LseDecomposition<double>(double, double)>;

/// Order consistency of the four surrogate/margin pairs over `pairs` random score pairs.
PropResult order_consistency(std::size_t pairs = 10000, std::uint64_t seed = 1);
/// Cosine bound under the dilution assumptions over `pairs` constructed gradient pairs.
PropResult dilution_bound(std::size_t pairs = 1000, std::uint64_t seed = 2);
/// CLM ascent vs RMA/ODA directions in the two-class configuration.
PropResult clm_misalignment();
/// Concentration-loss bounds on a grid of non-target scores.
PropResult entropy_bounds();
/// gated = lse + entropy over `samples` random (a, b) in [0, 20]^2.
PropResult decomposition(std::size_t samples = 10000, std::uint64_t seed = 5, const DecompositionFn& fn = {});
/// lse <= gated <= lse + ln 2, and gated -> min(a, b) for large gaps.
PropResult envelope(std::size_t samples = 10000, std::uint64_t seed = 6, const DecompositionFn& fn = {});
/// Positive repaired margin implies s_gt > tau and s_oth < tau on the 0.01 grid.
PropResult repaired_margin();
/// Perturbations below gamma / L keep both inequalities on a linear score model.
PropResult score_stability(std::size_t models = 200, std::uint64_t seed = 7);
/// Confidence weighting vs uniform over random nonnegative-covariance populations.
PropResult confidence_weighting(std::size_t populations = 1000, std::uint64_t seed = 8);

/// Every suite in order.
std::vector<PropResult> run_all(const DecompositionFn& fn = {});

/// Gate with the sign of its logits flipped; used to check that the suites catch it.
LseDecomposition<double> faulty_decomposition(double a, double b);

}  // namespace bforge::props
