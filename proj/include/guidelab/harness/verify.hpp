#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "guidelab/optimizer.hpp"

namespace guidelab::harness {

struct CheckOutcome {
  bool passed = false;
  std::string measured;
  std::string tolerance;
  std::string note;
};

struct Check {
  std::string id;  // "1".."12" for acceptance criteria, "p:<name>" for properties
  std::string name;
  std::function<CheckOutcome()> run;
};

struct CheckResult {
  std::string id;
  std::string name;
  CheckOutcome outcome;
  double seconds = 0.0;
  std::string error;  // set when the check threw
  bool passed() const { return error.empty() && outcome.passed; }
};

using MixedGradFn = std::function<ObjectiveGradient(const PolicyParams&, std::span<const RolloutGroup>,
                                                    const PolicyParams&, const PolicyParams&, const TrainConfig&)>;
using OpsdGradFn = std::function<Table(const PolicyParams&, const PolicyParams&, std::span<const RolloutGroup>,
                                       const GuidanceContext&)>;

MixedGradFn analytic_mixed_grad();
OpsdGradFn analytic_opsd_grad();

/// Compares the supplied gradients to central finite differences of
/// mixed_objective_value and opsd_loss on `instances` random small problems.
CheckOutcome check_gradient_fidelity(const MixedGradFn& mixed, const OpsdGradFn& opsd, int instances = 100,
                                     std::uint64_t seed = 9);

/// The numbered acceptance criteria.
std::vector<Check> acceptance_checks();
/// Structural properties: determinism, round trips, serial/parallel parity.
std::vector<Check> property_checks();

/// Runs checks in order. Exceptions turn into failed results. When `live`
/// is set, each result line is printed as soon as it is known.
std::vector<CheckResult> run_checks(const std::vector<Check>& checks, std::ostream* live = nullptr);

std::string format_result(const CheckResult& r);
void print_report(std::ostream& os, const std::vector<CheckResult>& results);
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace guidelab::harness
