// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "interpkit/tensor.hpp"

namespace interpkit {

/// Ordered name -> tensor map plus string metadata. Iteration is lexicographic
/// by name and every tensor shares one dtype.
class NamedTensorArchive {
 public:
  using Entries = std::map<std::string, Tensor>;
  using Metadata = std::map<std::string, std::string>;

  /// Throws ValidationError on a duplicate name or a dtype different from the archive's.
  void insert(std::string name, Tensor tensor);

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::optional<DType> dtype() const;
  std::vector<std::string> names() const;

  Entries::const_iterator begin() const { return entries_.begin(); }
  Entries::const_iterator end() const { return entries_.end(); }

  const Metadata& metadata() const noexcept { return metadata_; }
  void set_metadata(std::string key, std::string value) { metadata_[std::move(key)] = std::move(value); }
  std::optional<std::string> metadata_value(const std::string& key) const;

  bool operator==(const NamedTensorArchive&) const = default;

 private:
  Entries entries_;
  Metadata metadata_;
};

/// Single-file layout: u64 LE header length N, N bytes of JSON header, raw little-endian buffers.
std::string serialize_archive(const NamedTensorArchive& archive);
NamedTensorArchive deserialize_archive(const std::string& bytes);

NamedTensorArchive load_archive(const std::filesystem::path& path);
void save_archive(const NamedTensorArchive& archive, const std::filesystem::path& path);

/// SHA-256 of the serialized archive, hex encoded.
std::string archive_digest(const NamedTensorArchive& archive);

}  // namespace interpkit
