#pragma once

#include <string>
#include <vector>

namespace mcnet {

struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;  // failure diagnostics incl. reproduction seed
  double seconds = 0;
};

/// The complete property/oracle suite: gradient checks, solver oracles,
/// metric oracles, persistence round-trips and fault injection. quick mode
/// trims the sample counts.
std::vector<VerifyCheck> run_verification(bool quick);

}  // namespace mcnet
