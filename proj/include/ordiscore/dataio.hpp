#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordiscore/dataset.hpp"

namespace ordiscore {

// annotation-jsonl: every record carries its features inline ("feat").
// features-binary: every record references a row of the sidecar matrix
// ("feat_ref"). Formats are not mixed within one file.
enum class DatasetFormat { AnnotationJsonl, FeaturesBinary };

// ---------------------------------------------------------------------------
// Feature sidecar: 8-byte header (4-byte magic "OSFT", u32 feature dim,
// little-endian) followed by rows of d float32 values, little-endian. The
// row count is implied by the file size.
// ---------------------------------------------------------------------------

inline constexpr char kSidecarMagic[4] = {'O', 'S', 'F', 'T'};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f32_le(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32_le(out, bits);
}

inline float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = get_u32_le(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline void put_f64_le(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(out, bits);
}

inline double get_f64_le(const unsigned char* p) {
  const std::uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace detail

struct FeatureMatrix {
  std::size_t dim = 0;
  std::vector<float> values;  // rows * dim, row-major

  std::size_t rows() const { return dim == 0 ? 0 : values.size() / dim; }

  std::vector<double> row(std::size_t r) const {
    std::vector<double> out(dim);
    for (std::size_t j = 0; j < dim; ++j) out[j] = values[r * dim + j];
    return out;
  }
};

inline void write_feature_sidecar(const std::string& path, const FeatureMatrix& m) {
  std::string bytes;
  bytes.reserve(8 + m.values.size() * 4);
  bytes.append(kSidecarMagic, 4);
  detail::put_u32_le(bytes, static_cast<std::uint32_t>(m.dim));
  for (float f : m.values) detail::put_f32_le(bytes, f);
  detail::write_file_bytes(path, bytes);
}

inline FeatureMatrix read_feature_sidecar(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSidecarMagic, 4) != 0)
    throw std::runtime_error("'" + path + "' is not a feature sidecar (bad magic)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  FeatureMatrix m;
  m.dim = detail::get_u32_le(p + 4);
  if (m.dim == 0) throw std::runtime_error("'" + path + "': feature dim 0");
  const std::size_t payload = bytes.size() - 8;
  if (payload % (4 * m.dim) != 0)
    throw std::runtime_error("'" + path + "': truncated payload (" +
                             std::to_string(payload) + " bytes, dim " +
                             std::to_string(m.dim) + ")");
  const std::size_t count = payload / 4;
  m.values.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    m.values[i] = detail::get_f32_le(p + 8 + 4 * i);
  return m;
}

// Default sidecar path: the annotation path with its extension replaced by
// ".fbin" (data.jsonl -> data.fbin).
inline std::string default_sidecar_path(const std::string& annotation_path) {
  std::filesystem::path p(annotation_path);
  p.replace_extension(".fbin");
  return p.string();
}

// ---------------------------------------------------------------------------
// Annotation files: one JSON object per line with fields
//   id        string, required
//   feat      array of numbers (AnnotationJsonl format)
//   feat_ref  row index into the sidecar (FeaturesBinary format)
//   scores    object aspect name -> array of integer rater scores in [1,10]
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> parse_score_list(const nlohmann::json& arr,
                                         const std::string& id,
                                         const char* aspect) {
  std::vector<int> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer())
      throw std::runtime_error("utterance '" + id + "': non-integer " +
                               std::string(aspect) + " score");
    const std::int64_t y = v.get<std::int64_t>();
    if (y < 1 || y > 10)
      throw std::runtime_error("utterance '" + id + "': score " +
                               std::to_string(y) + " outside [1,10]");
    out.push_back(static_cast<int>(y));
  }
  return out;
}

}  // namespace detail

inline std::vector<UtteranceRecord> load_dataset(
    const std::string& path, DatasetFormat format,
    const std::string& sidecar_path = "") {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");

  FeatureMatrix sidecar;
  if (format == DatasetFormat::FeaturesBinary) {
    const std::string sc =
        sidecar_path.empty() ? default_sidecar_path(path) : sidecar_path;
    sidecar = read_feature_sidecar(sc);
  }

  std::vector<UtteranceRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed JSON line: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj["id"].is_string())
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": record is missing a string 'id'");
    UtteranceRecord rec;
    rec.id = obj["id"].get<std::string>();

    const bool has_feat = obj.contains("feat");
    const bool has_ref = obj.contains("feat_ref");
    if (format == DatasetFormat::AnnotationJsonl) {
      if (!has_feat || has_ref)
        throw std::runtime_error("utterance '" + rec.id +
                                 "': annotation-jsonl records must carry inline 'feat'");
      for (const auto& v : obj["feat"]) {
        if (!v.is_number())
          throw std::runtime_error("utterance '" + rec.id + "': non-numeric feature");
        rec.features.push_back(v.get<double>());
      }
    } else {
      if (!has_ref || has_feat)
        throw std::runtime_error("utterance '" + rec.id +
                                 "': features-binary records must carry 'feat_ref'");
      const std::uint64_t row = obj["feat_ref"].get<std::uint64_t>();
      if (row >= sidecar.rows())
        throw std::runtime_error("utterance '" + rec.id + "': feat_ref " +
                                 std::to_string(row) + " beyond sidecar rows " +
                                 std::to_string(sidecar.rows()));
      rec.features = sidecar.row(row);
    }

    if (obj.contains("scores")) {
      if (!obj["scores"].is_object())
        throw std::runtime_error("utterance '" + rec.id + "': 'scores' must be an object");
      for (auto it = obj["scores"].begin(); it != obj["scores"].end(); ++it) {
        const auto aspect = aspect_from_name(it.key());
        if (!aspect)
          throw std::runtime_error("utterance '" + rec.id + "': unknown aspect '" +
                                   it.key() + "'");
        rec.scores[static_cast<int>(*aspect)] =
            detail::parse_score_list(it.value(), rec.id, it.key().c_str());
      }
    }
    records.push_back(std::move(rec));
  }

  validate_dataset(records);
  return records;
}

// Writes a dataset in either format. FeaturesBinary quantizes features to
// float32 (the sidecar element type); callers that need load(save(x)) == x
// should hold float32-representable features, which the synthetic generator
// guarantees.
inline void save_dataset(const std::vector<UtteranceRecord>& records,
                         const std::string& path, DatasetFormat format,
                         const std::string& sidecar_path = "") {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");

  FeatureMatrix sidecar;
  if (!records.empty()) sidecar.dim = records.front().features.size();

  std::size_t row = 0;
  for (const auto& rec : records) {
    nlohmann::json obj;
    obj["id"] = rec.id;
    if (format == DatasetFormat::AnnotationJsonl) {
      obj["feat"] = rec.features;
    } else {
      obj["feat_ref"] = row++;
      for (double f : rec.features)
        sidecar.values.push_back(static_cast<float>(f));
    }
    nlohmann::json scores = nlohmann::json::object();
    for (Aspect a : kAllAspects)
      if (rec.has_aspect(a)) scores[aspect_name(a)] = rec.raters(a);
    if (!scores.empty()) obj["scores"] = scores;
    out << obj.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
  out.close();

  if (format == DatasetFormat::FeaturesBinary) {
    const std::string sc =
        sidecar_path.empty() ? default_sidecar_path(path) : sidecar_path;
    write_feature_sidecar(sc, sidecar);
  }
}

}  // namespace ordiscore
