#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace switchboard::st {

enum class DType { F32, F16, BF16 };

std::size_t dtype_size(DType d);

struct TensorInfo {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  std::uint64_t begin = 0;  // offsets relative to the data section
  std::uint64_t end = 0;

  std::int64_t numel() const;
};

// Reader for the safetensors layout: u64 little-endian header length, JSON
// header, raw little-endian tensor data.
class Reader {
 public:
  // Throws FormatError on a truncated file, a bad header, or offsets that
  // leave the data section.
  explicit Reader(const std::filesystem::path& path);

  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  const TensorInfo* find(const std::string& name) const;

  // Reads a tensor converted to f32.  `out` must hold numel() values.
  void read(const TensorInfo& info, std::span<float> out) const;
  std::vector<float> read(const std::string& name) const;

  // sha256 of the whole data section, hex.
  std::string data_sha256() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::uint64_t data_offset_ = 0;
  std::uint64_t data_size_ = 0;
  std::vector<TensorInfo> tensors_;
  std::map<std::string, std::string> metadata_;
};

struct TensorView {
  std::string name;
  std::vector<std::int64_t> shape;
  std::span<const float> data;
};

// Writes f32 tensors in the given order; written to a temporary name and
// renamed into place.
void write(const std::filesystem::path& path, std::span<const TensorView> tensors,
           const std::map<std::string, std::string>& metadata = {});

std::string sha256_hex(std::span<const unsigned char> bytes);

}  // namespace switchboard::st
