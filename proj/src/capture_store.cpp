#include "switchboard/capture_store.hpp"

#include "switchboard/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cstring>

namespace switchboard::store {
namespace {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

constexpr const char* kFormat = "switchboard-capture";
constexpr int kVersion = 1;
constexpr std::size_t kRecordHeader = 12;  // u32 window, u32 position, i32 token

nlohmann::json to_json(const StoreInfo& s) {
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : s.windows) windows.push_back({w.id, w.first_record, w.count});
  return {{"format", kFormat},
          {"version", kVersion},
          {"layer", s.layer},
          {"d_model", s.d_model},
          {"neurons", s.neurons},
          {"n_records", s.n_records},
          {"record_bytes", s.record_bytes()},
          {"dtype", "f32"},
          {"byte_order", "little"},
          {"record_layout", "u32 window, u32 position, i32 token, f32 x[d_model], f32 y[d_model], f32 hidden[neurons]"},
          {"windows", windows},
          {"provenance", s.provenance}};
}

StoreInfo from_json(const nlohmann::json& j, const std::filesystem::path& where) {
  try {
    if (j.at("format").get<std::string>() != kFormat || j.at("version").get<int>() != kVersion) {
      throw FormatError(fmt::format("{}: not a version {} capture sidecar", where.string(), kVersion));
    }
    StoreInfo s;
    s.layer = j.at("layer").get<int>();
    s.d_model = j.at("d_model").get<int>();
    s.neurons = j.at("neurons").get<std::vector<int>>();
    s.n_records = j.at("n_records").get<std::uint64_t>();
    for (const auto& w : j.at("windows")) {
      s.windows.push_back({w.at(0).get<std::uint32_t>(), w.at(1).get<std::uint64_t>(), w.at(2).get<std::uint64_t>()});
    }
    if (j.contains("provenance")) s.provenance = j.at("provenance");
    if (j.at("record_bytes").get<std::size_t>() != s.record_bytes()) {
      throw FormatError(fmt::format("{}: record_bytes disagrees with dimensions", where.string()));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", where.string(), e.what()));
  }
}

void write_sidecar(const std::filesystem::path& path, const StoreInfo& s) {
  const auto tmp = std::filesystem::path(path.string() + ".partial");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << to_json(s).dump(1) << '\n';
    if (!out) throw Error(fmt::format("{}: write failed", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
void put(char*& p, T v) {
  std::memcpy(p, &v, sizeof(T));
  p += sizeof(T);
}

template <typename T>
T get(const char*& p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  p += sizeof(T);
  return v;
}

}  // namespace

std::size_t StoreInfo::record_bytes() const {
  return kRecordHeader + sizeof(float) * (2 * static_cast<std::size_t>(d_model) + neurons.size());
}

std::filesystem::path capture_path(const std::filesystem::path& dir, int layer) {
  return dir / fmt::format("layer{:02d}.capture", layer);
}

std::filesystem::path sidecar_path(const std::filesystem::path& dir, int layer) {
  return dir / fmt::format("layer{:02d}.json", layer);
}

CaptureWriter::CaptureWriter(const std::filesystem::path& dir, int layer, int d_model, std::vector<int> neurons,
                             nlohmann::json provenance)
    : dir_(dir) {
  if (d_model <= 0) throw InvalidArgument("capture store: d_model must be positive");
  std::filesystem::create_directories(dir);
  info_.layer = layer;
  info_.d_model = d_model;
  info_.neurons = std::move(neurons);
  info_.provenance = std::move(provenance);
  partial_ = std::filesystem::path(capture_path(dir, layer).string() + ".partial");
  out_.open(partial_, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error(fmt::format("{}: cannot open for writing", partial_.string()));
}

CaptureWriter::~CaptureWriter() {
  if (!finished_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(partial_, ec);
  }
}

void CaptureWriter::append(const CaptureChunk& c) {
  if (finished_) throw InvalidArgument("capture store: append after finish");
  if (c.layer != info_.layer) {
    throw InvalidArgument(fmt::format("capture store: chunk layer {} does not match store layer {}", c.layer, info_.layer));
  }
  const auto T = static_cast<Eigen::Index>(c.tokens.size());
  const auto d = static_cast<Eigen::Index>(info_.d_model);
  const auto k = static_cast<Eigen::Index>(info_.neurons.size());
  if (c.x.rows() != d || c.x.cols() != T || c.y.rows() != d || c.y.cols() != T ||
      (k > 0 && (c.hidden.rows() != k || c.hidden.cols() != T))) {
    throw InvalidArgument(fmt::format("capture store: window {} arrays disagree with {} tokens, d_model {}, {} neurons",
                                      c.window, T, d, k));
  }
  if (!seen_windows_.insert(c.window).second) {
    throw InvalidArgument(fmt::format("capture store: window {} appended twice", c.window));
  }
  const std::size_t rb = info_.record_bytes();
  buffer_.resize(rb * static_cast<std::size_t>(T));
  char* p = buffer_.data();
  for (Eigen::Index t = 0; t < T; ++t) {
    put<std::uint32_t>(p, c.window);
    put<std::uint32_t>(p, static_cast<std::uint32_t>(t));
    put<std::int32_t>(p, c.tokens[static_cast<std::size_t>(t)]);
    std::memcpy(p, c.x.col(t).data(), sizeof(float) * static_cast<std::size_t>(d));
    p += sizeof(float) * static_cast<std::size_t>(d);
    std::memcpy(p, c.y.col(t).data(), sizeof(float) * static_cast<std::size_t>(d));
    p += sizeof(float) * static_cast<std::size_t>(d);
    for (Eigen::Index i = 0; i < k; ++i) put<float>(p, c.hidden(i, t));
  }
  out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  out_.flush();
  if (!out_) throw Error(fmt::format("{}: write failed (disk full?)", partial_.string()));
  info_.windows.push_back({c.window, info_.n_records, static_cast<std::uint64_t>(T)});
  info_.n_records += static_cast<std::uint64_t>(T);
}

void CaptureWriter::finish() {
  if (finished_) return;
  out_.close();
  if (!out_) throw Error(fmt::format("{}: close failed", partial_.string()));
  std::filesystem::rename(partial_, capture_path(dir_, info_.layer));
  write_sidecar(sidecar_path(dir_, info_.layer), info_);
  finished_ = true;
}

CaptureReader::CaptureReader(const std::filesystem::path& dir, int layer) {
  const auto side = sidecar_path(dir, layer);
  std::ifstream in(side);
  if (!in) throw FormatError(fmt::format("{}: missing capture sidecar", side.string()));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", side.string(), e.what()));
  }
  info_ = from_json(j, side);
  if (info_.layer != layer) {
    throw FormatError(fmt::format("{}: sidecar says layer {}, expected {}", side.string(), info_.layer, layer));
  }
  data_path_ = capture_path(dir, layer);
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(data_path_, ec);
  if (ec || bytes != info_.n_records * info_.record_bytes()) {
    throw FormatError(fmt::format("{}: size does not match {} records of {} bytes", data_path_.string(),
                                  info_.n_records, info_.record_bytes()));
  }
}

void CaptureReader::decode(const char* p, std::size_t n, RecordBlock& out, std::size_t col) const {
  const auto d = static_cast<std::size_t>(info_.d_model);
  const std::size_t k = info_.neurons.size();
  for (std::size_t r = 0; r < n; ++r) {
    const auto c = static_cast<Eigen::Index>(col + r);
    out.window[col + r] = get<std::uint32_t>(p);
    out.position[col + r] = get<std::uint32_t>(p);
    out.tokens[col + r] = get<std::int32_t>(p);
    std::memcpy(out.x.col(c).data(), p, sizeof(float) * d);
    p += sizeof(float) * d;
    std::memcpy(out.y.col(c).data(), p, sizeof(float) * d);
    p += sizeof(float) * d;
    for (std::size_t i = 0; i < k; ++i) out.hidden(static_cast<Eigen::Index>(i), c) = get<float>(p);
  }
}

namespace {

RecordBlock empty_block(const StoreInfo& s, std::size_t n) {
  RecordBlock b;
  b.window.resize(n);
  b.position.resize(n);
  b.tokens.resize(n);
  b.x.resize(s.d_model, static_cast<Eigen::Index>(n));
  b.y.resize(s.d_model, static_cast<Eigen::Index>(n));
  b.hidden.resize(static_cast<Eigen::Index>(s.neurons.size()), static_cast<Eigen::Index>(n));
  return b;
}

}  // namespace

RecordBlock CaptureReader::read(std::uint64_t first, std::uint64_t count) const {
  if (first + count > info_.n_records) {
    throw InvalidArgument(fmt::format("capture store: records [{}, {}) beyond {}", first, first + count, info_.n_records));
  }
  RecordBlock b = empty_block(info_, count);
  b.first = first;
  const std::size_t rb = info_.record_bytes();
  std::vector<char> raw(rb * count);
  std::ifstream in(data_path_, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(first * rb));
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!in) throw FormatError(fmt::format("{}: short read", data_path_.string()));
  decode(raw.data(), count, b, 0);
  return b;
}

RecordBlock CaptureReader::gather(const std::vector<std::size_t>& indices) const {
  RecordBlock b = empty_block(info_, indices.size());
  b.first = indices.empty() ? 0 : indices.front();
  const std::size_t rb = info_.record_bytes();
  std::vector<char> raw(rb);
  std::ifstream in(data_path_, std::ios::binary);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= info_.n_records) {
      throw InvalidArgument(fmt::format("capture store: record {} beyond {}", indices[i], info_.n_records));
    }
    in.seekg(static_cast<std::streamoff>(indices[i] * rb));
    in.read(raw.data(), static_cast<std::streamsize>(rb));
    if (!in) throw FormatError(fmt::format("{}: short read", data_path_.string()));
    decode(raw.data(), 1, b, i);
  }
  return b;
}

void CaptureReader::scan(const std::function<void(const RecordBlock&)>& fn, std::uint64_t block_records) const {
  if (block_records == 0) throw InvalidArgument("capture store: block size must be positive");
  for (std::uint64_t first = 0; first < info_.n_records; first += block_records) {
    fn(read(first, std::min(block_records, info_.n_records - first)));
  }
}

void merge_stores(const std::vector<std::filesystem::path>& input_dirs, int layer,
                  const std::filesystem::path& output_dir) {
  if (input_dirs.empty()) throw InvalidArgument("merge_stores: no inputs");
  std::vector<CaptureReader> readers;
  for (const auto& d : input_dirs) readers.emplace_back(d, layer);
  const StoreInfo& ref = readers.front().info();
  struct Piece {
    std::uint32_t window;
    std::size_t reader;
    WindowExtent extent;
  };
  std::vector<Piece> pieces;
  for (std::size_t r = 0; r < readers.size(); ++r) {
    const auto& s = readers[r].info();
    if (s.d_model != ref.d_model || s.neurons != ref.neurons) {
      throw InvalidArgument(fmt::format("merge_stores: {} has a different shape", input_dirs[r].string()));
    }
    for (const auto& w : s.windows) pieces.push_back({w.id, r, w});
  }
  std::sort(pieces.begin(), pieces.end(), [](const Piece& a, const Piece& b) { return a.window < b.window; });
  for (std::size_t i = 1; i < pieces.size(); ++i) {
    if (pieces[i].window == pieces[i - 1].window) {
      throw InvalidArgument(fmt::format("merge_stores: window {} present in more than one input", pieces[i].window));
    }
  }
  nlohmann::json prov = ref.provenance;
  prov["merged_from"] = input_dirs.size();
  CaptureWriter w(output_dir, layer, ref.d_model, ref.neurons, prov);
  for (const auto& p : pieces) {
    const RecordBlock b = readers[p.reader].read(p.extent.first_record, p.extent.count);
    CaptureChunk c;
    c.layer = layer;
    c.window = p.window;
    c.tokens = b.tokens;
    c.x = b.x;
    c.y = b.y;
    c.hidden = b.hidden;
    w.append(c);
  }
  w.finish();
}

MomentAccumulator accumulate_moments(const CaptureReader& reader, const std::optional<Eigen::MatrixXd>& projector,
                                     const std::optional<Eigen::VectorXd>& center) {
  const int d = reader.info().d_model;
  if (projector && projector->rows() != d) {
    throw InvalidArgument(fmt::format("accumulate_moments: projector has {} rows, store d_model is {}",
                                      projector->rows(), d));
  }
  if (center && center->size() != d) {
    throw InvalidArgument(fmt::format("accumulate_moments: center has {} entries, store d_model is {}",
                                      center->size(), d));
  }
  MomentAccumulator acc(projector ? projector->cols() : d, d);
  reader.scan([&](const RecordBlock& b) {
    Eigen::MatrixXd x = b.x.cast<double>();
    if (center) x.colwise() -= *center;
    const Eigen::MatrixXd y = b.y.cast<double>();
    if (projector) {
      const Eigen::MatrixXd z = projector->transpose() * x;
      acc.add_rows(z.transpose(), y.transpose());
    } else {
      acc.add_rows(x.transpose(), y.transpose());
    }
  });
  return acc;
}

}  // namespace switchboard::store
