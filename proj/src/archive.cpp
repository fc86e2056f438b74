// SPDX-License-Identifier: Apache-2.0
#include "interpkit/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "interpkit/digest.hpp"
#include "interpkit/error.hpp"

namespace interpkit {

using nlohmann::json;

void NamedTensorArchive::insert(std::string name, Tensor tensor) {
  if (entries_.count(name)) throw ValidationError(fmt::format("duplicate tensor name '{}'", name));
  if (auto dt = dtype(); dt && *dt != tensor.dtype())
    throw ValidationError(fmt::format("tensor '{}' has dtype {} but archive holds {}", name,
                                      dtype_name(tensor.dtype()), dtype_name(*dt)));
  entries_.emplace(std::move(name), std::move(tensor));
}

const Tensor& NamedTensorArchive::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StructureError(fmt::format("no tensor named '{}'", name));
  return it->second;
}

std::optional<DType> NamedTensorArchive::dtype() const {
  if (entries_.empty()) return std::nullopt;
  return entries_.begin()->second.dtype();
}

std::vector<std::string> NamedTensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::optional<std::string> NamedTensorArchive::metadata_value(const std::string& key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end()) return std::nullopt;
  return it->second;
}

namespace {

constexpr const char* kMetadataKey = "__metadata__";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_scalar(std::string& out, double value, DType dtype) {
  if (dtype == DType::F64) {
    put_u64(out, std::bit_cast<std::uint64_t>(value));
  } else {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
  }
}

double get_scalar(const std::string& in, std::size_t pos, DType dtype) {
  if (dtype == DType::F64) return std::bit_cast<double>(get_u64(in, pos));
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

void validate_for_save(const NamedTensorArchive& archive) {
  for (const auto& [name, tensor] : archive) {
    if (!tensor.all_finite())
      throw ValidationError(fmt::format("tensor '{}' holds a non-finite scalar", name));
  }
}

}  // namespace

std::string serialize_archive(const NamedTensorArchive& archive) {
  validate_for_save(archive);
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : archive) {
    const std::uint64_t bytes = tensor.numel() * dtype_size(tensor.dtype());
    header[name] = {{"dtype", dtype_name(tensor.dtype())},
                    {"shape", tensor.shape()},
                    {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!archive.metadata().empty()) header[kMetadataKey] = archive.metadata();

  std::string text = header.dump();
  // Pad with spaces so the data section starts 8-byte aligned.
  while ((text.size() + 8) % 8 != 0) text.push_back(' ');

  std::string out;
  out.reserve(8 + text.size() + offset);
  put_u64(out, text.size());
  out += text;
  for (const auto& [name, tensor] : archive)
    for (double v : tensor.values()) put_scalar(out, v, tensor.dtype());
  return out;
}

NamedTensorArchive deserialize_archive(const std::string& bytes) {
  if (bytes.size() < 8) throw FormatError("file shorter than the 8-byte header length prefix", 0);
  const std::uint64_t header_len = get_u64(bytes, 0);
  if (header_len > bytes.size() - 8)
    throw IntegrityError(fmt::format("header declares {} bytes but only {} follow the prefix",
                                     header_len, bytes.size() - 8));
  const std::string text = bytes.substr(8, header_len);

  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("header is not valid JSON: {}", e.what()),
                      8 + (e.byte > 0 ? e.byte - 1 : 0));
  }
  if (!header.is_object()) throw FormatError("header is not a JSON object", 8);

  auto where = [&](const std::string& key) -> std::uint64_t {
    auto pos = text.find('"' + key + '"');
    return 8 + (pos == std::string::npos ? 0 : pos);
  };

  const std::uint64_t data_begin = 8 + header_len;
  const std::uint64_t data_len = bytes.size() - data_begin;

  NamedTensorArchive archive;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (auto it = header.begin(); it != header.end(); ++it) {
    const std::string& name = it.key();
    const json& entry = it.value();
    if (name == kMetadataKey) {
      if (!entry.is_object()) throw FormatError("__metadata__ must be an object", where(name));
      for (auto m = entry.begin(); m != entry.end(); ++m) {
        if (!m.value().is_string())
          throw FormatError(fmt::format("metadata value for '{}' is not a string", m.key()), where(name));
        archive.set_metadata(m.key(), m.value().get<std::string>());
      }
      continue;
    }
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets"))
      throw FormatError(fmt::format("entry '{}' lacks dtype/shape/data_offsets", name), where(name));

    const json& jd = entry["dtype"];
    if (!jd.is_string() || (jd != "F32" && jd != "F64"))
      throw FormatError(fmt::format("entry '{}' has unsupported dtype", name), where(name));
    const DType dtype = parse_dtype(jd.get<std::string>());

    const json& js = entry["shape"];
    if (!js.is_array()) throw FormatError(fmt::format("entry '{}' shape is not an array", name), where(name));
    Shape shape;
    for (const auto& e : js) {
      if (!e.is_number_unsigned())
        throw FormatError(fmt::format("entry '{}' has a non-integer extent", name), where(name));
      shape.push_back(e.get<std::size_t>());
    }

    const json& jo = entry["data_offsets"];
    if (!jo.is_array() || jo.size() != 2 || !jo[0].is_number_unsigned() || !jo[1].is_number_unsigned())
      throw FormatError(fmt::format("entry '{}' data_offsets must be [begin,end]", name), where(name));
    const auto begin = jo[0].get<std::uint64_t>();
    const auto end = jo[1].get<std::uint64_t>();
    const std::uint64_t expected = shape_numel(shape) * dtype_size(dtype);
    if (end < begin || end - begin != expected)
      throw IntegrityError(fmt::format("entry '{}' spans {} bytes but shape {} needs {}", name,
                                       end >= begin ? end - begin : 0, shape_string(shape), expected));
    if (end > data_len)
      throw IntegrityError(
          fmt::format("entry '{}' ends at byte {} past the {}-byte data section", name, end, data_len));
    spans.emplace_back(begin, end);

    std::vector<double> values(shape_numel(shape));
    const std::size_t width = dtype_size(dtype);
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = get_scalar(bytes, data_begin + begin + i * width, dtype);
    Tensor tensor(std::move(shape), std::move(values), dtype);
    if (!tensor.all_finite()) throw ValidationError(fmt::format("tensor '{}' holds a non-finite scalar", name));
    archive.insert(name, std::move(tensor));
  }

  std::sort(spans.begin(), spans.end());
  std::uint64_t cursor = 0;
  for (const auto& [b, e] : spans) {
    if (b != cursor) throw IntegrityError("tensor buffers overlap or leave gaps in the data section");
    cursor = e;
  }
  if (cursor != data_len)
    throw IntegrityError(fmt::format("data section holds {} bytes, entries cover {}", data_len, cursor));
  return archive;
}

NamedTensorArchive load_archive(const std::filesystem::path& path) {
  return deserialize_archive(read_file(path));
}

void save_archive(const NamedTensorArchive& archive, const std::filesystem::path& path) {
  write_file(path, serialize_archive(archive));
}

std::string archive_digest(const NamedTensorArchive& archive) {
  return sha256_hex(serialize_archive(archive));
}

}  // namespace interpkit
