// Runs the numbered acceptance criteria, one result line each.
// Optional arguments restrict the run to the given ids.

#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include "guidelab/harness/verify.hpp"

int main(int argc, char** argv) {
  namespace gh = guidelab::harness;
  auto checks = gh::acceptance_checks();
  const std::vector<std::string> only(argv + 1, argv + argc);
  if (!only.empty())
    std::erase_if(checks, [&](const gh::Check& c) { return std::find(only.begin(), only.end(), c.id) == only.end(); });

  const auto results = gh::run_checks(checks, &std::cout);
  int passed = 0;
  for (const auto& r : results) passed += r.passed();
  std::cout << passed << "/" << results.size() << " acceptance criteria passed\n";
  return gh::all_passed(results) ? 0 : 1;
}
