#pragma once

#include <string>

#include "guidelab/env.hpp"
#include "guidelab/guidance.hpp"

namespace guidelab {

/// One training task: an env instance paired with its reference plan.
struct Task {
  int id = 0;
  std::string difficulty;
  EnvSpec env;
  ReferenceTrajectory reference;

  bool operator==(const Task&) const = default;
};

}  // namespace guidelab
