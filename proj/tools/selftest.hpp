#pragma once

#include <cstdint>
#include <cstddef>
#include <string>

struct SelftestArgs {
  std::string fixture;  // empty: the log compiled into the binary
  std::size_t capacity = 2;
  std::uint64_t seed = 1;
};

/// Prints one PASS/FAIL line per suite; returns 0 only if all pass.
int run_selftest(const SelftestArgs& args);
