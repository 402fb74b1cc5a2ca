#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace entlab {

struct PropertyResult {
  std::string name;
  std::size_t cases = 0;
  bool passed = true;
  std::string counterexample;  // inputs + expected/actual for the first failure
};

std::vector<PropertyResult> verify_transforms(std::uint64_t seed);
std::vector<PropertyResult> verify_gradients(std::uint64_t seed);
std::vector<PropertyResult> verify_tasks(std::uint64_t seed, std::size_t samples_per_task = 10000);

}  // namespace entlab
