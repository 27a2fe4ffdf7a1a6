#include "switchboard/safetensors.hpp"

#include "switchboard/error.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <memory>

namespace switchboard::st {
namespace {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

DType parse_dtype(const std::string& s, const std::string& tensor) {
  if (s == "F32") return DType::F32;
  if (s == "F16") return DType::F16;
  if (s == "BF16") return DType::BF16;
  throw FormatError(fmt::format("tensor '{}': unsupported dtype {}", tensor, s));
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000) << 16;
  std::uint32_t exp = (h >> 10) & 0x1F;
  std::uint32_t mant = h & 0x3FF;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3FF;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};

std::string to_hex(const unsigned char* d, unsigned n) {
  std::string out;
  out.reserve(n * 2);
  for (unsigned i = 0; i < n; ++i) out += fmt::format("{:02x}", d[i]);
  return out;
}

}  // namespace

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 2; }

std::int64_t TensorInfo::numel() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Reader::Reader(const std::filesystem::path& path) : path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("{}: cannot open", path.string()));
  const auto file_size = std::filesystem::file_size(path);
  std::uint64_t header_len = 0;
  if (file_size < 8 || !in.read(reinterpret_cast<char*>(&header_len), 8)) {
    throw FormatError(fmt::format("{}: truncated before header length", path.string()));
  }
  if (header_len > file_size - 8 || header_len > (std::uint64_t{100} << 20)) {
    throw FormatError(fmt::format("{}: header length {} exceeds file size", path.string(), header_len));
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  data_offset_ = 8 + header_len;
  data_size_ = file_size - data_offset_;

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: header does not parse: {}", path.string(), e.what()));
  }
  if (!j.is_object()) throw FormatError(fmt::format("{}: header is not an object", path.string()));
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it.value().begin(); m != it.value().end(); ++m) {
        metadata_[m.key()] = m.value().is_string() ? m.value().get<std::string>() : m.value().dump();
      }
      continue;
    }
    try {
      const auto& v = it.value();
      TensorInfo t;
      t.name = it.key();
      t.dtype = parse_dtype(v.at("dtype").get<std::string>(), t.name);
      t.shape = v.at("shape").get<std::vector<std::int64_t>>();
      const auto off = v.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (off.size() != 2 || off[0] > off[1] || off[1] > data_size_) {
        throw FormatError(fmt::format("{}: tensor '{}' offsets outside data section", path.string(), t.name));
      }
      t.begin = off[0];
      t.end = off[1];
      for (auto s : t.shape) {
        if (s < 0) throw FormatError(fmt::format("{}: tensor '{}' negative dim", path.string(), t.name));
      }
      if (static_cast<std::uint64_t>(t.numel()) * dtype_size(t.dtype) != t.end - t.begin) {
        throw FormatError(fmt::format("{}: tensor '{}' byte range does not match its shape", path.string(), t.name));
      }
      tensors_.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(fmt::format("{}: tensor '{}': {}", path.string(), it.key(), e.what()));
    }
  }
}

const TensorInfo* Reader::find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void Reader::read(const TensorInfo& info, std::span<float> out) const {
  if (out.size() != static_cast<std::size_t>(info.numel())) {
    throw InvalidArgument(fmt::format("tensor '{}': output buffer has {} values, need {}", info.name,
                                      out.size(), info.numel()));
  }
  std::ifstream in(path_, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(data_offset_ + info.begin));
  const auto nbytes = static_cast<std::streamsize>(info.end - info.begin);
  if (info.dtype == DType::F32) {
    in.read(reinterpret_cast<char*>(out.data()), nbytes);
  } else {
    std::vector<std::uint16_t> raw(out.size());
    in.read(reinterpret_cast<char*>(raw.data()), nbytes);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      out[i] = info.dtype == DType::F16 ? half_to_float(raw[i])
                                        : std::bit_cast<float>(static_cast<std::uint32_t>(raw[i]) << 16);
    }
  }
  if (!in) throw FormatError(fmt::format("{}: tensor '{}' truncated", path_.string(), info.name));
}

std::vector<float> Reader::read(const std::string& name) const {
  const TensorInfo* t = find(name);
  if (!t) throw FormatError(fmt::format("{}: missing tensor '{}'", path_.string(), name));
  std::vector<float> out(static_cast<std::size_t>(t->numel()));
  read(*t, out);
  return out;
}

std::string Reader::data_sha256() const {
  std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx(EVP_MD_CTX_new());
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::ifstream in(path_, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(data_offset_));
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  return to_hex(md, len);
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  return to_hex(md, len);
}

void write(const std::filesystem::path& path, std::span<const TensorView> tensors,
           const std::map<std::string, std::string>& metadata) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    std::int64_t n = 1;
    for (auto s : t.shape) n *= s;
    if (static_cast<std::size_t>(n) != t.data.size()) {
      throw InvalidArgument(fmt::format("tensor '{}': shape holds {} values, data has {}", t.name, n, t.data.size()));
    }
    const std::uint64_t bytes = t.data.size() * sizeof(float);
    header[t.name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::string h = header.dump();
  while ((8 + h.size()) % 8 != 0) h += ' ';

  const auto tmp = std::filesystem::path(path.string() + ".partial");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("{}: cannot open for writing", tmp.string()));
    const std::uint64_t len = h.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : tensors) {
      out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size_bytes()));
    }
    if (!out) throw Error(fmt::format("{}: write failed", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace switchboard::st
