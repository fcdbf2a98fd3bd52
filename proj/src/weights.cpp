// SPDX-License-Identifier: Apache-2.0
#include "stereodet/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include <zlib.h>

#include "stereodet/error.hpp"

namespace stereodet {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'W', 'A'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (in.size() - pos < sizeof(T)) throw InputError("weight archive is truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[pos + i]) << (8 * i);
  pos += sizeof(T);
  return v;
}

std::uint32_t crc(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, a.data(), static_cast<uInt>(a.size()));
  c = crc32(c, b.data(), static_cast<uInt>(b.size()));
  return static_cast<std::uint32_t>(c);
}

}  // namespace

WeightArchive::WeightArchive(const WeightArchive& other) : entries_(other.entries_), index_(other.index_) {
  reads_.resize(entries_.size());
}

WeightArchive& WeightArchive::operator=(const WeightArchive& other) {
  if (this != &other) {
    entries_ = other.entries_;
    index_ = other.index_;
    reads_.clear();
    reads_.resize(entries_.size());
  }
  return *this;
}

void WeightArchive::add(const std::string& name, Tensor tensor) {
  if (name.empty()) throw InputError("tensor name must not be empty");
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].tensor = std::move(tensor);
    return;
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(tensor)});
  reads_.emplace_back(0);
}

std::vector<std::string> WeightArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

const Tensor& WeightArchive::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw MissingTensorError(name);
  reads_[it->second].fetch_add(1, std::memory_order_relaxed);
  return entries_[it->second].tensor;
}

const Tensor* WeightArchive::peek(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].tensor;
}

std::uint64_t WeightArchive::reads(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? 0 : reads_[it->second].load();
}

std::uint64_t WeightArchive::reads_with_prefix(std::string_view prefix) const {
  std::uint64_t total = 0;
  for (auto it = index_.lower_bound(prefix); it != index_.end() && it->first.starts_with(prefix); ++it) {
    total += reads_[it->second].load();
  }
  return total;
}

void WeightArchive::reset_reads() const {
  for (auto& r : reads_) r.store(0);
}

std::vector<std::uint8_t> WeightArchive::serialize() const {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    manifest.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.tensor.numel()) * sizeof(float);
  }
  const std::string m = manifest.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, m.size());
  const std::size_t manifest_pos = out.size();
  out.insert(out.end(), m.begin(), m.end());
  put_le<std::uint64_t>(out, offset);
  const std::size_t blob_pos = out.size();
  out.resize(blob_pos + offset);
  std::size_t cursor = blob_pos;
  for (const auto& e : entries_) {
    const std::size_t n = static_cast<std::size_t>(e.tensor.numel()) * sizeof(float);
    std::memcpy(out.data() + cursor, e.tensor.data(), n);
    cursor += n;
  }
  const std::span<const std::uint8_t> all(out);
  const std::uint32_t c = crc(all.subspan(manifest_pos, m.size()), all.subspan(blob_pos));
  put_le<std::uint32_t>(out, c);
  return out;
}

WeightArchive WeightArchive::deserialize(std::span<const std::uint8_t> in) {
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) throw InputError("not a weight archive (bad magic)");
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(in, pos);
  if (version != kVersion) throw InputError("unsupported weight archive version " + std::to_string(version));
  const auto mlen = get_le<std::uint64_t>(in, pos);
  if (in.size() - pos < mlen) throw InputError("weight archive is truncated");
  const auto manifest_bytes = in.subspan(pos, mlen);
  pos += mlen;
  const auto blen = get_le<std::uint64_t>(in, pos);
  if (in.size() - pos < blen + 4) throw InputError("weight archive is truncated");
  const auto blob = in.subspan(pos, blen);
  pos += blen;
  const auto stored = get_le<std::uint32_t>(in, pos);
  if (pos != in.size()) throw InputError("weight archive has trailing bytes");
  if (crc(manifest_bytes, blob) != stored) throw ChecksumError("weight archive checksum mismatch");

  WeightArchive out;
  try {
    const auto manifest =
        nlohmann::json::parse(reinterpret_cast<const char*>(manifest_bytes.data()),
                              reinterpret_cast<const char*>(manifest_bytes.data()) + manifest_bytes.size());
    for (const auto& e : manifest) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto bytes = static_cast<std::uint64_t>(shape_numel(shape)) * sizeof(float);
      if (offset > blen || blen - offset < bytes) throw InputError("tensor '" + name + "' overruns the blob");
      std::vector<float> values(static_cast<std::size_t>(bytes / sizeof(float)));
      std::memcpy(values.data(), blob.data() + offset, bytes);
      out.add(name, Tensor(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed weight manifest: ") + e.what());
  }
  return out;
}

bool WeightArchive::operator==(const WeightArchive& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) return false;
    if (std::memcmp(a.tensor.data(), b.tensor.data(), static_cast<std::size_t>(a.tensor.numel()) * sizeof(float))) {
      return false;
    }
  }
  return true;
}

void save_weights(const WeightArchive& archive, const std::filesystem::path& path) {
  const auto bytes = archive.serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

WeightArchive load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return WeightArchive::deserialize(bytes);
}

void validate_archive(const WeightArchive& archive, std::span<const TensorSpec> required) {
  for (const auto& spec : required) {
    if (!archive.contains(spec.name)) throw MissingTensorError(spec.name);
  }
  for (const auto& spec : required) {
    const Tensor& t = *archive.peek(spec.name);
    if (t.shape() != spec.shape) {
      throw WeightShapeError("tensor '" + spec.name + "' has shape " + to_string(t.shape()) + ", expected " +
                             to_string(spec.shape));
    }
  }
}

}  // namespace stereodet
