// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace stereodet {

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick oracle and invariant checks on synthetic data, a few seconds total.
std::vector<SelftestCheck> run_selftest();

}  // namespace stereodet
