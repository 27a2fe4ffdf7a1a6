#pragma once

#include "switchboard/moments.hpp"
#include "switchboard/tokenizer.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace switchboard::store {

using tok::TokenId;

// Captures of one window at one layer.  Columns are token positions 0..T-1.
struct CaptureChunk {
  int layer = 0;
  std::uint32_t window = 0;
  std::vector<TokenId> tokens;
  Eigen::MatrixXf x;       // d_model x T, MLP input
  Eigen::MatrixXf y;       // d_model x T, MLP output
  Eigen::MatrixXf hidden;  // |neurons| x T, may be empty when no neurons are stored
};

// A contiguous run of records as read back.  `first` is the index of the
// first record; record index is the global token position.
struct RecordBlock {
  std::size_t first = 0;
  std::vector<std::uint32_t> window;
  std::vector<std::uint32_t> position;
  std::vector<TokenId> tokens;
  Eigen::MatrixXf x;
  Eigen::MatrixXf y;
  Eigen::MatrixXf hidden;

  std::size_t size() const { return tokens.size(); }
};

struct WindowExtent {
  std::uint32_t id = 0;
  std::uint64_t first_record = 0;
  std::uint64_t count = 0;
};

struct StoreInfo {
  int layer = 0;
  int d_model = 0;
  std::vector<int> neurons;  // hidden subset stored per record
  std::uint64_t n_records = 0;
  std::vector<WindowExtent> windows;
  nlohmann::json provenance = nlohmann::json::object();  // model, corpus, seeds

  std::size_t record_bytes() const;
};

std::filesystem::path capture_path(const std::filesystem::path& dir, int layer);
std::filesystem::path sidecar_path(const std::filesystem::path& dir, int layer);

// Single writer for one layer.  Data goes to a ".partial" file that is
// renamed, together with its sidecar, by finish().  An unfinished writer
// leaves no visible store.
class CaptureWriter {
 public:
  CaptureWriter(const std::filesystem::path& dir, int layer, int d_model, std::vector<int> neurons,
                nlohmann::json provenance = nlohmann::json::object());
  ~CaptureWriter();
  CaptureWriter(const CaptureWriter&) = delete;
  CaptureWriter& operator=(const CaptureWriter&) = delete;

  // Throws InvalidArgument on a layer or shape mismatch or a repeated window
  // id; Error when the write fails (for example a full disk).
  void append(const CaptureChunk& chunk);
  void finish();

  const StoreInfo& info() const { return info_; }

 private:
  std::filesystem::path dir_;
  std::filesystem::path partial_;
  std::ofstream out_;
  StoreInfo info_;
  std::set<std::uint32_t> seen_windows_;
  std::vector<char> buffer_;
  bool finished_ = false;
};

class CaptureReader {
 public:
  // Throws FormatError if the sidecar is missing or malformed, or the data
  // file size disagrees with it.
  CaptureReader(const std::filesystem::path& dir, int layer);

  const StoreInfo& info() const { return info_; }
  std::uint64_t size() const { return info_.n_records; }

  RecordBlock read(std::uint64_t first, std::uint64_t count) const;
  // Reads records at the given ascending indices.
  RecordBlock gather(const std::vector<std::size_t>& indices) const;
  // Sequential scan in blocks of at most `block_records`.
  void scan(const std::function<void(const RecordBlock&)>& fn, std::uint64_t block_records = 4096) const;

 private:
  void decode(const char* src, std::size_t n, RecordBlock& out, std::size_t col) const;

  std::filesystem::path data_path_;
  StoreInfo info_;
};

// Combines stores of the same layer and shape written by separate writers.
// Window ids must be disjoint; records are ordered by window id.
void merge_stores(const std::vector<std::filesystem::path>& input_dirs, int layer,
                  const std::filesystem::path& output_dir);

// Moments of (x, y) over every record.  With a projector P (d x k), x is
// replaced by P^T (x - center); center defaults to zero.
MomentAccumulator accumulate_moments(const CaptureReader& reader,
                                     const std::optional<Eigen::MatrixXd>& projector = std::nullopt,
                                     const std::optional<Eigen::VectorXd>& center = std::nullopt);

}  // namespace switchboard::store
