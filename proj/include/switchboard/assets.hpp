#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace switchboard::assets {

struct Asset {
  std::string name;  // file name inside the cache
  std::vector<std::string> urls;
  // Empty: the digest of the first download is recorded in <name>.sha256
  // and every later use is verified against it.
  std::string sha256;
  std::uint64_t size = 0;  // 0 = not pinned
  std::string bundled;     // path relative to the manifest's directory
  std::string extract_member;
  std::string extract_to;
};

struct Manifest {
  std::filesystem::path base;  // directory the manifest was read from
  std::vector<Asset> assets;

  static Manifest load(const std::filesystem::path& path);
  const Asset& find(const std::string& name) const;
};

// $SWITCHBOARD_CACHE, else $XDG_CACHE_HOME/switchboard, else
// $HOME/.cache/switchboard.
std::filesystem::path cache_dir();

std::string sha256_file(const std::filesystem::path& path);

using Downloader = std::function<void(const std::string& url, const std::filesystem::path& dest)>;

// libcurl download of one URL; throws Error on HTTP or transport failure.
void curl_download(const std::string& url, const std::filesystem::path& dest, long timeout_seconds = 1800);

struct FetchOptions {
  int attempts = 4;
  double backoff_seconds = 2.0;  // doubled after each failed attempt
  bool offline = false;          // never touch the network
  Downloader downloader;         // defaults to curl_download
};

struct FetchResult {
  std::filesystem::path path;  // the extracted file when the asset has one
  bool downloaded = false;
  std::string sha256;
};

// Verifies a cached copy and downloads only when it is absent.  A cached
// file whose size or digest disagrees with the pin throws FormatError naming
// the file; it is never silently replaced.
FetchResult ensure(const Manifest& manifest, const Asset& asset, const std::filesystem::path& cache,
                   const FetchOptions& options = {});

// Extracts one member of a zip archive (stored or deflate) to `out`.
void extract_zip_member(const std::filesystem::path& zip, const std::string& member,
                        const std::filesystem::path& out);

}  // namespace switchboard::assets
