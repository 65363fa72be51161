#pragma once

// KCD1 activation dump reader/writer.
//
// Layout (little-endian):
//   "KCD1" | u32 n | u32 L | u8 has_labels
//   L x { u32 dim | u8 metric kind | f64 metric parameter }
//   u32 len, model_id bytes | u8 family | u64 param_count | u32 len, notes bytes
//   n x { u64 example_id | f32 loss | [u32 label] | layer 1..L: dim x f32 }
//
// A sidecar manifest "<dump>.manifest" holds key=value provenance lines.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kc/datamodel.hpp"
#include "kc/error.hpp"

namespace kc {

enum class DumpErrorKind { MalformedHeader, TruncatedPayload, LayerCountMismatch, NonFiniteValue, InvalidValue, Io };

inline const char* dump_error_code(DumpErrorKind k) {
  switch (k) {
    case DumpErrorKind::MalformedHeader: return "malformed-header";
    case DumpErrorKind::TruncatedPayload: return "truncated-payload";
    case DumpErrorKind::LayerCountMismatch: return "layer-count-mismatch";
    case DumpErrorKind::NonFiniteValue: return "non-finite-value";
    case DumpErrorKind::InvalidValue: return "invalid-value";
    case DumpErrorKind::Io: return "io";
  }
  return "dump";
}

class DumpError : public ValidationError {
public:
  static constexpr std::int64_t kNoRecord = -1;

  DumpError(DumpErrorKind kind, std::size_t offset, std::int64_t record, const std::string& detail)
      : ValidationError(dump_error_code(kind), format(kind, offset, record, detail)),
        kind_(kind), offset_(offset), record_(record) {}

  DumpErrorKind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }
  std::int64_t record() const noexcept { return record_; }

private:
  static std::string format(DumpErrorKind kind, std::size_t offset, std::int64_t record,
                            const std::string& detail) {
    std::string s = std::string(dump_error_code(kind)) + " at byte " + std::to_string(offset);
    if (record >= 0) s += ", record " + std::to_string(record);
    return s + ": " + detail;
  }

  DumpErrorKind kind_;
  std::size_t offset_;
  std::int64_t record_;
};

namespace detail {

class ByteWriter {
public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  // Reads past the end report MalformedHeader before the payload starts and
  // TruncatedPayload after.
  void enter_payload() { in_payload_ = true; }
  void set_record(std::int64_t r) { record_ = r; }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  std::uint8_t u8(const char* what) { need(1, what); return buf_[pos_++]; }
  std::uint32_t u32(const char* what) { return get<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return get<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }
  std::string str(const char* what) {
    const std::uint32_t len = u32(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), len);
    pos_ += len;
    return s;
  }

private:
  void need(std::size_t bytes, const char* what) const {
    if (buf_.size() - pos_ < bytes)
      throw DumpError(in_payload_ ? DumpErrorKind::TruncatedPayload : DumpErrorKind::MalformedHeader,
                      pos_, in_payload_ ? record_ : DumpError::kNoRecord,
                      std::string("file ends while reading ") + what);
  }
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
  bool in_payload_ = false;
  std::int64_t record_ = DumpError::kNoRecord;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_dump(const ActivationDataset& d) {
  validate(d);
  detail::ByteWriter w;
  for (char c : {'K', 'C', 'D', '1'}) w.u8(static_cast<std::uint8_t>(c));
  w.u32(static_cast<std::uint32_t>(d.n()));
  w.u32(static_cast<std::uint32_t>(d.num_layers()));
  w.u8(d.labels ? 1 : 0);
  for (const auto& b : d.layers) {
    w.u32(static_cast<std::uint32_t>(b.dim));
    w.u8(static_cast<std::uint8_t>(b.metric.kind));
    w.f64(b.metric.parameter);
  }
  w.str(d.model_meta.model_id);
  w.u8(static_cast<std::uint8_t>(d.model_meta.family));
  w.u64(d.model_meta.param_count);
  w.str(d.model_meta.notes);
  for (std::size_t i = 0; i < d.n(); ++i) {
    w.u64(d.example_ids[i]);
    w.f32(static_cast<float>(d.losses[i]));
    if (d.labels) w.u32((*d.labels)[i]);
    for (const auto& b : d.layers) {
      const double* r = b.row(i);
      for (std::size_t c = 0; c < b.dim; ++c) w.f32(static_cast<float>(r[c]));
    }
  }
  return w.bytes();
}

inline ActivationDataset decode_dump(const std::vector<std::uint8_t>& buf) {
  using K = DumpErrorKind;
  detail::ByteReader r(buf);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8("magic"));
  if (std::memcmp(magic, "KCD1", 4) != 0)
    throw DumpError(K::MalformedHeader, 0, DumpError::kNoRecord, "bad magic, expected \"KCD1\"");

  const std::uint32_t n = r.u32("example count");
  if (n == 0) throw DumpError(K::MalformedHeader, 4, DumpError::kNoRecord, "header declares n=0; datasets must be nonempty");
  const std::uint32_t L = r.u32("layer count");
  if (L == 0) throw DumpError(K::LayerCountMismatch, 8, DumpError::kNoRecord, "header declares L=0 layers");
  const std::size_t labels_at = r.offset();
  const std::uint8_t has_labels = r.u8("label flag");
  if (has_labels > 1)
    throw DumpError(K::MalformedHeader, labels_at, DumpError::kNoRecord, "label flag must be 0 or 1");

  ActivationDataset d;
  d.layers.resize(L);
  for (std::uint32_t l = 0; l < L; ++l) {
    const std::size_t at = r.offset();
    auto& b = d.layers[l];
    b.index = l + 1;
    b.dim = r.u32("layer dim");
    const std::uint8_t kind = r.u8("metric kind");
    b.metric.parameter = r.f64("metric parameter");
    const std::string tag = "layer " + std::to_string(l + 1);
    if (b.dim == 0) throw DumpError(K::MalformedHeader, at, DumpError::kNoRecord, tag + " has dim 0");
    if (kind > 2) throw DumpError(K::MalformedHeader, at + 4, DumpError::kNoRecord, tag + " has unknown metric kind " + std::to_string(kind));
    b.metric.kind = static_cast<MetricKind>(kind);
    try {
      validate(b.metric);
    } catch (const ValidationError& e) {
      throw DumpError(K::MalformedHeader, at + 5, DumpError::kNoRecord, tag + ": " + e.what());
    }
  }
  d.model_meta.model_id = r.str("model_id");
  const std::size_t fam_at = r.offset();
  const std::uint8_t fam = r.u8("model family");
  if (fam > 3) throw DumpError(K::MalformedHeader, fam_at, DumpError::kNoRecord, "unknown model family tag");
  d.model_meta.family = static_cast<ModelFamily>(fam);
  const std::size_t pc_at = r.offset();
  d.model_meta.param_count = r.u64("param_count");
  if (d.model_meta.param_count == 0)
    throw DumpError(K::MalformedHeader, pc_at, DumpError::kNoRecord, "param_count must be >= 1");
  d.model_meta.notes = r.str("notes");

  r.enter_payload();
  d.example_ids.resize(n);
  d.losses.resize(n);
  if (has_labels) d.labels.emplace(n);
  for (auto& b : d.layers) b.values.resize(static_cast<std::size_t>(n) * b.dim);

  for (std::uint32_t i = 0; i < n; ++i) {
    r.set_record(i);
    d.example_ids[i] = r.u64("example_id");
    const std::size_t loss_at = r.offset();
    const float loss = r.f32("loss");
    if (!std::isfinite(loss))
      throw DumpError(K::NonFiniteValue, loss_at, i, "non-finite loss of example " + std::to_string(i));
    if (loss < 0.0f)
      throw DumpError(K::InvalidValue, loss_at, i, "negative loss of example " + std::to_string(i));
    d.losses[i] = loss;
    if (has_labels) (*d.labels)[i] = r.u32("label");
    for (auto& b : d.layers) {
      double* row = b.values.data() + static_cast<std::size_t>(i) * b.dim;
      for (std::size_t c = 0; c < b.dim; ++c) {
        const std::size_t at = r.offset();
        const float v = r.f32("activation");
        if (!std::isfinite(v))
          throw DumpError(K::NonFiniteValue, at, i,
                          "non-finite activation in layer " + std::to_string(b.index) + ", example " +
                              std::to_string(i) + ", component " + std::to_string(c));
        row[c] = v;
      }
    }
  }
  if (r.remaining() != 0)
    throw DumpError(K::LayerCountMismatch, r.offset(), DumpError::kNoRecord,
                    std::to_string(r.remaining()) + " bytes remain after the declared records; "
                    "header layer layout does not match payload");
  validate(d);
  return d;
}

inline void write_dump(const ActivationDataset& d, const std::filesystem::path& path) {
  const auto bytes = encode_dump(d);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("io", "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("io", "write failed for " + path.string());
}

inline ActivationDataset load_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DumpError(DumpErrorKind::Io, 0, DumpError::kNoRecord, "cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_dump(buf);
}

// Provenance sidecar. Keys are written sorted.
struct Manifest {
  std::map<std::string, std::string> entries;

  static Manifest provenance(std::string source_model, std::string capture_date, std::string loss_function) {
    Manifest m;
    m.entries["source_model"] = std::move(source_model);
    m.entries["capture_date"] = std::move(capture_date);
    m.entries["loss_function"] = std::move(loss_function);
    return m;
  }
};

inline std::filesystem::path manifest_path(const std::filesystem::path& dump) {
  return std::filesystem::path(dump.string() + ".manifest");
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("io", "cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : m.entries) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ValidationError("manifest", "manifest entry '" + k + "' contains '=' or a newline");
    out << k << '=' << v << '\n';
  }
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("io", "cannot open " + path.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("manifest", path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    m.entries[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

}  // namespace kc
