#pragma once
// Embedding and relevance-judgment storage:
//   - EmbeddingMatrix: N row-major float32 vectors with unique string ids
//   - JSONL and binary readers/writers (binary round-trips bit-exactly)
//   - TREC four-column qrels parsing
//   - deterministic train/validation query splits
//
// Binary layout: magic "MATEMB1\0" (8 bytes), little-endian u32 dim, u64
// count, `count` ids (u16 length prefix + UTF-8 bytes each), then
// count*dim little-endian IEEE-754 float32 values, row-major.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "matadapt/errors.hpp"
#include "matadapt/matrix.hpp"
#include "matadapt/rng.hpp"

namespace matadapt {

struct EmbeddingMatrix {
  std::vector<std::string> ids;
  std::uint32_t dim = 0;
  std::vector<float> data;  // row-major, ids.size() x dim

  std::size_t size() const { return ids.size(); }

  std::span<const float> row(std::size_t i) const {
    return {data.data() + i * static_cast<std::size_t>(dim), dim};
  }
  std::span<float> row(std::size_t i) {
    return {data.data() + i * static_cast<std::size_t>(dim), dim};
  }
};

// Throws unless ids are unique, the buffer matches N x dim and every value
// is finite.
inline void validate_embeddings(const EmbeddingMatrix& m) {
  if (m.data.size() != m.ids.size() * static_cast<std::size_t>(m.dim))
    throw DimMismatch("embedding buffer size does not match N x dim");
  std::unordered_set<std::string_view> seen;
  seen.reserve(m.ids.size());
  for (const auto& id : m.ids)
    if (!seen.insert(id).second) throw DuplicateId("duplicate embedding id: " + id);
  for (float v : m.data)
    if (!std::isfinite(v)) throw FormatError("non-finite embedding value");
}

inline std::unordered_map<std::string, std::uint32_t> id_index(const EmbeddingMatrix& m) {
  std::unordered_map<std::string, std::uint32_t> idx;
  idx.reserve(m.size());
  for (std::uint32_t i = 0; i < m.size(); ++i) idx.emplace(m.ids[i], i);
  return idx;
}

// Widened copy of the selected rows.
inline Matrix gather_rows(const EmbeddingMatrix& m, std::span<const std::uint32_t> rows) {
  Matrix out(rows.size(), m.dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = m.row(rows[i]);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<double>(src[j]);
  }
  return out;
}

// Widened copy of the whole matrix.
inline Matrix to_matrix(const EmbeddingMatrix& m) {
  Matrix out(m.size(), m.dim);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = static_cast<double>(m.data[i]);
  return out;
}

enum class EmbeddingFormat { Jsonl, Binary };

inline EmbeddingFormat format_from_path(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  return (ext == ".jsonl" || ext == ".json") ? EmbeddingFormat::Jsonl : EmbeddingFormat::Binary;
}

namespace detail {

inline constexpr char kEmbeddingMagic[8] = {'M', 'A', 'T', 'E', 'M', 'B', '1', '\0'};

inline void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32le(std::string& out, float v) { put_u32le(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
 public:
  ByteReader(const std::string& buf, const std::string& what) : buf_(buf), what_(what) {}

  std::uint16_t u16le() { return static_cast<std::uint16_t>(byte() | (byte() << 8)); }

  std::uint32_t u32le() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }

  std::uint64_t u64le() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }

  float f32le() { return std::bit_cast<float>(u32le()); }

  std::string bytes(std::size_t n) {
    if (pos_ + n > buf_.size()) throw FormatError(what_ + ": truncated file");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  std::uint32_t byte() {
    if (pos_ >= buf_.size()) throw FormatError(what_ + ": truncated file");
    return static_cast<unsigned char>(buf_[pos_++]);
  }

  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path.string());
  return buf;
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed on " + path.string());
}

}  // namespace detail

inline void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path,
                            EmbeddingFormat format) {
  validate_embeddings(m);
  std::string out;
  if (format == EmbeddingFormat::Binary) {
    out.reserve(24 + m.data.size() * 4 + m.ids.size() * 18);
    out.append(detail::kEmbeddingMagic, 8);
    detail::put_u32le(out, m.dim);
    detail::put_u64le(out, m.ids.size());
    for (const auto& id : m.ids) {
      if (id.size() > 0xffff) throw FormatError("id longer than 65535 bytes: " + id.substr(0, 32));
      detail::put_u16le(out, static_cast<std::uint16_t>(id.size()));
      out.append(id);
    }
    for (float v : m.data) detail::put_f32le(out, v);
  } else {
    for (std::size_t i = 0; i < m.size(); ++i) {
      nlohmann::json rec;
      rec["id"] = m.ids[i];
      auto r = m.row(i);
      rec["vector"] = std::vector<double>(r.begin(), r.end());
      out += rec.dump();
      out += '\n';
    }
  }
  detail::write_file_bytes(path, out);
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
  const std::string buf = detail::read_file_bytes(path);
  EmbeddingMatrix m;
  if (format == EmbeddingFormat::Binary) {
    detail::ByteReader rd(buf, path.string());
    if (rd.bytes(8) != std::string(detail::kEmbeddingMagic, 8))
      throw FormatError(path.string() + ": bad magic");
    m.dim = rd.u32le();
    const std::uint64_t count = rd.u64le();
    if (m.dim == 0 && count > 0) throw FormatError(path.string() + ": zero dim with nonzero count");
    m.ids.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) m.ids.push_back(rd.bytes(rd.u16le()));
    m.data.reserve(count * m.dim);
    for (std::uint64_t i = 0; i < count * static_cast<std::uint64_t>(m.dim); ++i)
      m.data.push_back(rd.f32le());
    if (!rd.exhausted()) throw FormatError(path.string() + ": trailing bytes");
  } else {
    std::size_t line_no = 0, start = 0;
    while (start < buf.size()) {
      std::size_t end = buf.find('\n', start);
      if (end == std::string::npos) end = buf.size();
      std::string_view line(buf.data() + start, end - start);
      start = end + 1;
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (!rec.is_object() || !rec.contains("id") || !rec.contains("vector") ||
          !rec["id"].is_string() || !rec["vector"].is_array())
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": expected {\"id\": ..., \"vector\": [...]}");
      const auto& vec = rec["vector"];
      if (m.ids.empty()) {
        if (vec.empty())
          throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty vector");
        m.dim = static_cast<std::uint32_t>(vec.size());
      } else if (vec.size() != m.dim) {
        throw DimMismatch(path.string() + ":" + std::to_string(line_no) + ": row has dim " +
                          std::to_string(vec.size()) + ", expected " + std::to_string(m.dim));
      }
      m.ids.push_back(rec["id"].get<std::string>());
      for (const auto& v : vec) {
        if (!v.is_number())
          throw FormatError(path.string() + ":" + std::to_string(line_no) + ": non-numeric value");
        m.data.push_back(static_cast<float>(v.get<double>()));
      }
    }
  }
  validate_embeddings(m);
  return m;
}

// --------------------------------------------------------------------------
// Relevance judgments

struct RelevanceTriplet {
  std::string query_id;
  std::string doc_id;
  int grade = 0;
};

struct RelevanceSet {
  std::vector<RelevanceTriplet> triplets;

  // query id -> (doc id -> grade)
  std::unordered_map<std::string, std::unordered_map<std::string, int>> by_query() const {
    std::unordered_map<std::string, std::unordered_map<std::string, int>> grouped;
    for (const auto& t : triplets) grouped[t.query_id][t.doc_id] = t.grade;
    return grouped;
  }
};

inline void validate_relevance(const RelevanceSet& rels) {
  std::unordered_set<std::string> seen;
  seen.reserve(rels.triplets.size());
  for (const auto& t : rels.triplets) {
    if (t.grade < 0) throw NegativeGrade("negative grade for (" + t.query_id + ", " + t.doc_id + ")");
    if (!seen.insert(t.query_id + '\x1f' + t.doc_id).second)
      throw DuplicatePair("duplicate judgment for (" + t.query_id + ", " + t.doc_id + ")");
  }
}

// TREC format: `qid 0 docid grade`, whitespace separated, one judgment per
// line. Blank lines are ignored.
inline RelevanceSet load_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  RelevanceSet rels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream iss(line);
    std::string qid, iter, did, grade_str, extra;
    if (!(iss >> qid >> iter >> did >> grade_str))
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected `qid iter docid grade`");
    if (iss >> extra)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": trailing tokens");
    long grade = 0;
    std::size_t used = 0;
    try {
      grade = std::stol(grade_str, &used);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad grade `" +
                        grade_str + "`");
    }
    if (used != grade_str.size())
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad grade `" +
                        grade_str + "`");
    if (grade < 0)
      throw NegativeGrade(path.string() + ":" + std::to_string(line_no) + ": negative grade");
    rels.triplets.push_back({qid, did, static_cast<int>(grade)});
  }
  validate_relevance(rels);
  return rels;
}

inline void save_qrels(const RelevanceSet& rels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& t : rels.triplets)
    out << t.query_id << " 0 " << t.doc_id << ' ' << t.grade << '\n';
  if (!out) throw IoError("write failed on " + path.string());
}

// --------------------------------------------------------------------------
// Train/validation split

struct DatasetSplit {
  std::vector<std::string> train_query_ids;  // sorted
  std::vector<std::string> val_query_ids;    // sorted
  std::vector<std::string> val_corpus_ids;   // sorted; docs judged for the val queries
};

// Deterministic function of (query ids, val_fraction, seed): the sorted id
// list is shuffled with the seed and the first round(val_fraction * M)
// queries become the validation set.
inline DatasetSplit split_train_val(const EmbeddingMatrix& queries, const RelevanceSet& rels,
                                    double val_fraction, std::uint64_t seed) {
  const std::size_t m = queries.size();
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw Error("val_fraction must be in (0, 1)");
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(m)));
  if (n_val < 1 || n_val >= m)
    throw TooFewQueries("cannot split " + std::to_string(m) + " queries at fraction " +
                        std::to_string(val_fraction));

  std::vector<std::string> ids = queries.ids;
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(ids);

  DatasetSplit split;
  split.val_query_ids.assign(ids.begin(), ids.begin() + n_val);
  split.train_query_ids.assign(ids.begin() + n_val, ids.end());
  std::sort(split.val_query_ids.begin(), split.val_query_ids.end());
  std::sort(split.train_query_ids.begin(), split.train_query_ids.end());

  std::unordered_set<std::string> val_set(split.val_query_ids.begin(), split.val_query_ids.end());
  std::unordered_set<std::string> docs;
  for (const auto& t : rels.triplets)
    if (val_set.count(t.query_id)) docs.insert(t.doc_id);
  split.val_corpus_ids.assign(docs.begin(), docs.end());
  std::sort(split.val_corpus_ids.begin(), split.val_corpus_ids.end());
  return split;
}

}  // namespace matadapt
