// Self-check harness behind `stochpool verify`.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stochpool {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  /// Only suites whose name contains this substring; empty runs all.
  std::string filter;
  /// Makes upsample ignore truncation for the duration of the run.
  bool inject_fault = false;
};

std::vector<std::string> verify_suites();
std::vector<CheckResult> run_verify(const VerifyOptions& options);
void print_verify_table(std::ostream& out, const std::vector<CheckResult>& results);

}  // namespace stochpool
