#include "switchboard/assets.hpp"

#include "switchboard/error.hpp"

#include <curl/curl.h>
#include <fmt/format.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>
#include <thread>

namespace switchboard::assets {
namespace fs = std::filesystem;
namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::string s;
  std::getline(in, s);
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

fs::path with_suffix(fs::path p, const std::string& suffix) {
  p += suffix;
  return p;
}

// Size and digest of `file` against the pins; throws FormatError naming it.
std::string verify(const Asset& a, const fs::path& file, const std::string& expected) {
  if (a.size != 0 && fs::file_size(file) != a.size) {
    throw FormatError(fmt::format("size mismatch for {}: expected {} bytes, found {}", file.string(), a.size,
                                  fs::file_size(file)));
  }
  const std::string got = sha256_file(file);
  if (!expected.empty() && got != expected) {
    throw FormatError(fmt::format("checksum mismatch for {}: expected sha256 {}, found {}", file.string(), expected, got));
  }
  return got;
}

struct CurlGlobal {
  CurlGlobal() { curl_global_init(CURL_GLOBAL_DEFAULT); }
  ~CurlGlobal() { curl_global_cleanup(); }
};

std::size_t write_file(char* data, std::size_t size, std::size_t n, void* user) {
  return std::fwrite(data, size, n, static_cast<std::FILE*>(user)) * size;
}

}  // namespace

Manifest Manifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot read manifest {}", path.string()));
  Manifest m;
  m.base = path.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j.at("assets")) {
      Asset a;
      a.name = e.at("name").get<std::string>();
      a.urls = e.value("urls", std::vector<std::string>{});
      a.sha256 = e.value("sha256", std::string{});
      a.size = e.value("size", std::uint64_t{0});
      a.bundled = e.value("bundled", std::string{});
      if (e.contains("extract")) {
        a.extract_member = e.at("extract").at("member").get<std::string>();
        a.extract_to = e.at("extract").at("to").get<std::string>();
      }
      m.assets.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(fmt::format("manifest {}: {}", path.string(), ex.what()));
  }
  return m;
}

const Asset& Manifest::find(const std::string& name) const {
  for (const auto& a : assets) {
    if (a.name == name) return a;
  }
  throw InvalidArgument(fmt::format("asset '{}' is not in the manifest", name));
}

fs::path cache_dir() {
  if (const char* p = std::getenv("SWITCHBOARD_CACHE"); p && *p) return p;
  if (const char* p = std::getenv("XDG_CACHE_HOME"); p && *p) return fs::path(p) / "switchboard";
  if (const char* p = std::getenv("HOME"); p && *p) return fs::path(p) / ".cache" / "switchboard";
  return fs::temp_directory_path() / "switchboard-cache";
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot read {}", path.string()));
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  for (unsigned i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

void curl_download(const std::string& url, const fs::path& dest, long timeout_seconds) {
  static CurlGlobal global;
  std::unique_ptr<std::FILE, decltype(&std::fclose)> out(std::fopen(dest.c_str(), "wb"), &std::fclose);
  if (!out) throw Error(fmt::format("cannot write {}", dest.string()));
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), &curl_easy_cleanup);
  if (!curl) throw Error("curl initialisation failed");
  char err[CURL_ERROR_SIZE] = {0};
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 30L);
  curl_easy_setopt(curl.get(), CURLOPT_TIMEOUT, timeout_seconds);
  curl_easy_setopt(curl.get(), CURLOPT_USERAGENT, "switchboard/0.1");
  curl_easy_setopt(curl.get(), CURLOPT_ERRORBUFFER, err);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, &write_file);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, out.get());
  const CURLcode rc = curl_easy_perform(curl.get());
  if (rc != CURLE_OK) {
    throw Error(fmt::format("download of {} failed: {}", url, *err ? err : curl_easy_strerror(rc)));
  }
}

FetchResult ensure(const Manifest& manifest, const Asset& asset, const fs::path& cache, const FetchOptions& o) {
  fs::create_directories(cache);
  const fs::path file = cache / asset.name;
  const fs::path pin = with_suffix(file, ".sha256");
  FetchResult r;
  r.path = file;

  if (fs::exists(file)) {
    const std::string expected = !asset.sha256.empty() ? asset.sha256 : fs::exists(pin) ? read_text(pin) : "";
    r.sha256 = verify(asset, file, expected);
    if (expected.empty()) std::ofstream(pin) << r.sha256 << "\n";
  } else {
    const fs::path tmp = with_suffix(file, ".partial");
    bool have = false;
    if (!asset.bundled.empty() && fs::exists(manifest.base / asset.bundled)) {
      fs::copy_file(manifest.base / asset.bundled, tmp, fs::copy_options::overwrite_existing);
      have = true;
    }
    if (!have) {
      if (o.offline) throw Error(fmt::format("{} is not cached in {} and network use is disabled", asset.name, cache.string()));
      if (asset.urls.empty()) throw Error(fmt::format("{} has no download URL", asset.name));
      const Downloader download = o.downloader ? o.downloader : Downloader([](const std::string& u, const fs::path& d) {
        curl_download(u, d);
      });
      double wait = o.backoff_seconds;
      std::string last;
      for (int attempt = 1; attempt <= o.attempts && !have; ++attempt) {
        for (const auto& url : asset.urls) {
          try {
            spdlog::info("fetching {} (attempt {}/{})", url, attempt, o.attempts);
            download(url, tmp);
            have = true;
            break;
          } catch (const std::exception& ex) {
            last = ex.what();
            spdlog::warn("{}", last);
          }
        }
        if (!have && attempt < o.attempts) {
          std::this_thread::sleep_for(std::chrono::duration<double>(wait));
          wait *= 2;
        }
      }
      if (!have) {
        fs::remove(tmp);
        throw Error(fmt::format("could not fetch {} after {} attempts: {}", asset.name, o.attempts, last));
      }
    }
    try {
      r.sha256 = verify(asset, tmp, asset.sha256);
    } catch (...) {
      fs::remove(tmp);
      throw;
    }
    fs::rename(tmp, file);
    if (asset.sha256.empty()) std::ofstream(pin) << r.sha256 << "\n";
    r.downloaded = true;
  }

  if (!asset.extract_member.empty()) {
    const fs::path out = cache / asset.extract_to;
    if (!fs::exists(out)) {
      const fs::path tmp = with_suffix(out, ".partial");
      extract_zip_member(file, asset.extract_member, tmp);
      fs::rename(tmp, out);
    }
    r.path = out;
  }
  return r;
}

void extract_zip_member(const fs::path& zip, const std::string& member, const fs::path& out_path) {
  std::ifstream in(zip, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot read {}", zip.string()));
  const auto size = static_cast<std::uint64_t>(fs::file_size(zip));
  const std::uint64_t tail = std::min<std::uint64_t>(size, 65557);
  std::vector<unsigned char> buf(tail);
  in.seekg(static_cast<std::streamoff>(size - tail));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(tail));
  std::int64_t eocd = -1;
  for (std::int64_t i = static_cast<std::int64_t>(tail) - 22; i >= 0; --i) {
    if (le32(&buf[static_cast<std::size_t>(i)]) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd < 0) throw FormatError(fmt::format("{}: not a zip archive", zip.string()));
  const unsigned char* e = &buf[static_cast<std::size_t>(eocd)];
  const std::uint16_t entries = le16(e + 10);
  const std::uint32_t cd_size = le32(e + 12), cd_offset = le32(e + 16);
  std::vector<unsigned char> cd(cd_size);
  in.seekg(cd_offset);
  in.read(reinterpret_cast<char*>(cd.data()), cd_size);
  if (!in) throw FormatError(fmt::format("{}: truncated central directory", zip.string()));

  std::size_t p = 0;
  for (std::uint16_t i = 0; i < entries; ++i) {
    if (p + 46 > cd.size() || le32(&cd[p]) != 0x02014b50) {
      throw FormatError(fmt::format("{}: malformed central directory", zip.string()));
    }
    const std::uint16_t method = le16(&cd[p + 10]);
    const std::uint32_t crc = le32(&cd[p + 16]), comp = le32(&cd[p + 20]), plain = le32(&cd[p + 24]);
    const std::uint16_t nlen = le16(&cd[p + 28]), xlen = le16(&cd[p + 30]), clen = le16(&cd[p + 32]);
    const std::uint32_t local = le32(&cd[p + 42]);
    const std::string name(reinterpret_cast<const char*>(&cd[p + 46]), nlen);
    p += 46u + nlen + xlen + clen;
    if (name != member) continue;

    unsigned char lh[30];
    in.seekg(local);
    in.read(reinterpret_cast<char*>(lh), 30);
    if (!in || le32(lh) != 0x04034b50) throw FormatError(fmt::format("{}: bad local header for {}", zip.string(), member));
    in.seekg(static_cast<std::streamoff>(local) + 30 + le16(lh + 26) + le16(lh + 28));

    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", out_path.string()));
    std::vector<unsigned char> ibuf(1 << 16), obuf(1 << 18);
    uLong check = crc32(0L, Z_NULL, 0);
    std::uint64_t written = 0, remaining = comp;
    if (method == 0) {
      while (remaining > 0) {
        const auto n = static_cast<std::streamsize>(std::min<std::uint64_t>(remaining, ibuf.size()));
        in.read(reinterpret_cast<char*>(ibuf.data()), n);
        if (in.gcount() != n) throw FormatError(fmt::format("{}: truncated member {}", zip.string(), member));
        check = crc32(check, ibuf.data(), static_cast<uInt>(n));
        out.write(reinterpret_cast<const char*>(ibuf.data()), n);
        written += static_cast<std::uint64_t>(n);
        remaining -= static_cast<std::uint64_t>(n);
      }
    } else if (method == 8) {
      z_stream zs{};
      if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw Error("zlib initialisation failed");
      std::unique_ptr<z_stream, decltype(&inflateEnd)> guard(&zs, &inflateEnd);
      int rc = Z_OK;
      while (rc != Z_STREAM_END) {
        if (zs.avail_in == 0) {
          if (remaining == 0) throw FormatError(fmt::format("{}: truncated member {}", zip.string(), member));
          const auto n = static_cast<std::streamsize>(std::min<std::uint64_t>(remaining, ibuf.size()));
          in.read(reinterpret_cast<char*>(ibuf.data()), n);
          if (in.gcount() != n) throw FormatError(fmt::format("{}: truncated member {}", zip.string(), member));
          remaining -= static_cast<std::uint64_t>(n);
          zs.next_in = ibuf.data();
          zs.avail_in = static_cast<uInt>(n);
        }
        zs.next_out = obuf.data();
        zs.avail_out = static_cast<uInt>(obuf.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
          throw FormatError(fmt::format("{}: corrupt deflate data in {}", zip.string(), member));
        }
        const std::size_t got = obuf.size() - zs.avail_out;
        check = crc32(check, obuf.data(), static_cast<uInt>(got));
        out.write(reinterpret_cast<const char*>(obuf.data()), static_cast<std::streamsize>(got));
        written += got;
      }
    } else {
      throw FormatError(fmt::format("{}: unsupported compression method {} for {}", zip.string(), method, member));
    }
    if (!out.flush()) throw Error(fmt::format("cannot write {}", out_path.string()));
    if (written != plain || check != crc) {
      throw FormatError(fmt::format("{}: CRC or size mismatch in {}", zip.string(), member));
    }
    return;
  }
  throw FormatError(fmt::format("{}: no member named {}", zip.string(), member));
}

}  // namespace switchboard::assets
