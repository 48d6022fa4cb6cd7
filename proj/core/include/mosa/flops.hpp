// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace mosa {

// Multiply-accumulate counts from matmul. Elementwise work is not counted.
struct FlopTally {
  std::uint64_t total_macs = 0;
  std::uint64_t adapter_macs = 0;
};

/// Collects matmul MACs issued on this thread while alive. Scopes nest; an
/// inner scope does not report into the outer one.
class ScopedFlopCount {
 public:
  ScopedFlopCount();
  ~ScopedFlopCount();
  ScopedFlopCount(const ScopedFlopCount&) = delete;
  ScopedFlopCount& operator=(const ScopedFlopCount&) = delete;

  const FlopTally& tally() const { return tally_; }

 private:
  FlopTally tally_;
  FlopTally* previous_;
};

/// Marks matmuls issued while alive as adapter-branch work.
class AdapterBranchScope {
 public:
  AdapterBranchScope();
  ~AdapterBranchScope();
  AdapterBranchScope(const AdapterBranchScope&) = delete;
  AdapterBranchScope& operator=(const AdapterBranchScope&) = delete;

 private:
  bool previous_;
};

void record_matmul_macs(std::uint64_t macs);

}  // namespace mosa
