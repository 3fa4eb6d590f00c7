#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "infoprune/manifest.hpp"

namespace infoprune {

namespace fs = std::filesystem;

/// A manifest with its tensors, validated.
struct Archive {
  ModelManifest manifest;
  TensorMap tensors;
};

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "missing file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

inline std::string encode_floats(const std::vector<float>& data) {
  std::string bytes(data.size() * 4, '\0');
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto v = to_little_endian(std::bit_cast<std::uint32_t>(data[i]));
    std::memcpy(bytes.data() + 4 * i, &v, 4);
  }
  return bytes;
}

inline std::vector<float> decode_floats(std::string_view bytes) {
  std::vector<float> data(bytes.size() / 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + 4 * i, 4);
    data[i] = std::bit_cast<float>(to_little_endian(v));
  }
  return data;
}

/// FNV-1a, 64 bit.
class Fnv1a {
 public:
  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      hash_ ^= c;
      hash_ *= 0x100000001b3ull;
    }
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_));
    return buf;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

}  // namespace detail

/// Canonical text of a manifest, as written to manifest.json.
inline std::string manifest_text(const ModelManifest& m) { return to_json(m).dump(2) + "\n"; }

/// Identity of an archive: hash over the canonical manifest and all tensor
/// bytes. Plans record it so they cannot be applied to a different model.
inline std::string archive_fingerprint(const ModelManifest& m, const TensorMap& tensors) {
  detail::Fnv1a h;
  h.update(manifest_text(m));
  for (const auto& [name, t] : tensors) {
    h.update(name);
    h.update(shape_str(t.shape));
    h.update(detail::encode_floats(t.data));
  }
  return h.hex();
}

inline Archive load_archive(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::is_regular_file(manifest_path))
    throw Error(ErrorKind::io, "missing file: " + manifest_path.string());
  json j;
  try {
    j = json::parse(detail::read_file(manifest_path));
  } catch (const json::parse_error& e) {
    fail("manifest.json: parse error: " + std::string(e.what()));
  }
  Archive a;
  a.manifest = manifest_from_json(j);
  analyze(a.manifest);
  for (const auto& l : a.manifest.layers) {
    for (const auto& [name, shape] : expected_tensors(l)) {
      require(valid_tensor_name(name), "layer '" + l.id + "': invalid tensor name '" + name + "'");
      if (a.tensors.count(name)) continue;  // duplicate reference, reported by validation
      const auto path = dir / (name + ".bin");
      if (!fs::is_regular_file(path))
        fail("layer '" + l.id + "': dangling reference, missing tensor file " + path.string());
      const auto bytes = detail::read_file(path);
      const auto expected = shape_product(shape);
      require(bytes.size() % 4 == 0 && static_cast<std::int64_t>(bytes.size() / 4) == expected,
              "tensor '" + name + "': size mismatch, shape " + shape_str(shape) + " needs " +
                  std::to_string(expected) + " floats, file holds " +
                  std::to_string(bytes.size() / 4) +
                  (bytes.size() % 4 ? " (plus a partial value)" : ""));
      a.tensors.emplace(name, Tensor(name, shape, detail::decode_floats(bytes)));
    }
  }
  validate_archive(a.manifest, a.tensors);
  return a;
}

inline void save_archive(const ModelManifest& m, const TensorMap& tensors, const fs::path& dir) {
  validate_archive(m, tensors);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Error(ErrorKind::io, "cannot create archive directory " + dir.string());
  detail::write_file(dir / "manifest.json", manifest_text(m));
  for (const auto& [name, t] : tensors)
    detail::write_file(dir / (name + ".bin"), detail::encode_floats(t.data));
}

inline void save_archive(const Archive& a, const fs::path& dir) {
  save_archive(a.manifest, a.tensors, dir);
}

}  // namespace infoprune
