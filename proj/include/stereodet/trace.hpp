// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "stereodet/tensor.hpp"

namespace stereodet {

struct TraceEntry {
  std::string name;
  Shape shape;

  bool operator==(const TraceEntry&) const = default;
};

/// Records named intermediate shapes of a forward pass, in execution order.
class ForwardTrace {
 public:
  void record(std::string name, const Shape& shape) { entries_.push_back({std::move(name), shape}); }
  void record(std::string name, const Tensor& t) { record(std::move(name), t.shape()); }

  const std::vector<TraceEntry>& entries() const noexcept { return entries_; }
  /// First entry with this exact name, or nullptr.
  const TraceEntry* find(std::string_view name) const;
  /// Number of entries whose name starts with `prefix`.
  std::size_t count_prefix(std::string_view prefix) const;

  bool operator==(const ForwardTrace&) const = default;

 private:
  std::vector<TraceEntry> entries_;
};

/// Records into `trace` when it is non-null.
inline void trace_record(ForwardTrace* trace, std::string name, const Tensor& t) {
  if (trace) trace->record(std::move(name), t);
}

}  // namespace stereodet
