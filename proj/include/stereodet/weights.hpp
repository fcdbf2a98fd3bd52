// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stereodet/tensor.hpp"

namespace stereodet {

struct TensorSpec {
  std::string name;
  Shape shape;
};

/// Named float32 tensors. Reads through get() are counted per tensor so
/// callers can check which parts of a model a forward pass touched.
class WeightArchive {
 public:
  WeightArchive() = default;
  WeightArchive(const WeightArchive& other);
  WeightArchive& operator=(const WeightArchive& other);
  WeightArchive(WeightArchive&&) noexcept = default;
  WeightArchive& operator=(WeightArchive&&) noexcept = default;

  /// Adds or replaces a tensor.
  void add(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> names() const;

  /// Throws MissingTensorError.
  const Tensor& get(const std::string& name) const;

  /// Uncounted lookup; nullptr when absent.
  const Tensor* peek(const std::string& name) const;

  std::uint64_t reads(const std::string& name) const;
  std::uint64_t reads_with_prefix(std::string_view prefix) const;
  void reset_reads() const;

  /// Binary form: "SDWA", version, JSON manifest (name, shape, byte offset),
  /// little-endian float32 blob, CRC-32 of manifest and blob.
  std::vector<std::uint8_t> serialize() const;
  /// Throws ChecksumError or InputError.
  static WeightArchive deserialize(std::span<const std::uint8_t> bytes);

  bool operator==(const WeightArchive& other) const;

 private:
  struct Entry {
    std::string name;
    Tensor tensor;
  };
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  mutable std::deque<std::atomic<std::uint64_t>> reads_;
};

void save_weights(const WeightArchive& archive, const std::filesystem::path& path);
WeightArchive load_weights(const std::filesystem::path& path);

/// Throws MissingTensorError for the first absent tensor and WeightShapeError
/// for the first shape mismatch.
void validate_archive(const WeightArchive& archive, std::span<const TensorSpec> required);

}  // namespace stereodet
