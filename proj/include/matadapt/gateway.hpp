#pragma once
// Pluggable black-box embedding providers. The rest of the system only ever
// sees an EmbeddingMatrix; where the vectors came from is invisible.
//
//   file:   rows looked up by id from an embedding file
//   mock:   deterministic hash-seeded unit-norm vector per string
//   remote: minimal JSON protocol, POST {"texts": [...]} -> {"vectors":
//           [[...]]}, batched with retry/backoff
//
// cache_embeddings adds a content-addressed cache: one binary embedding
// file per batch digest plus a JSON manifest, keyed by the provider
// fingerprint and the item list.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "matadapt/embedding.hpp"
#include "matadapt/errors.hpp"
#include "matadapt/rng.hpp"

namespace matadapt {

struct ProviderSpec {
  enum class Kind { File, Mock, Remote };

  Kind kind = Kind::Mock;
  std::uint32_t dim = 0;
  std::string endpoint;     // remote: "http://host:port/path"
  std::string source_path;  // file kind: embedding file, format by extension
  std::uint64_t mock_seed = 0;
  std::uint32_t remote_batch = 64;
  std::uint32_t remote_attempts = 3;

  void validate() const {
    if (dim == 0) throw Error("provider dim must be positive");
    if (kind == Kind::Remote && endpoint.empty()) throw Error("remote provider needs an endpoint");
    if (kind == Kind::File && source_path.empty()) throw Error("file provider needs a source path");
  }

  // Identifies the vector source for cache keying.
  std::string fingerprint() const {
    std::string s;
    switch (kind) {
      case Kind::File: s = "file:" + source_path; break;
      case Kind::Mock: s = "mock:" + std::to_string(mock_seed); break;
      case Kind::Remote: s = "remote:" + endpoint; break;
    }
    s += ":d=" + std::to_string(dim);
    return s;
  }
};

class EmbeddingProvider {
 public:
  explicit EmbeddingProvider(ProviderSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const ProviderSpec& spec() const { return spec_; }

  // Number of times the underlying source was actually consulted; cache
  // hits leave it unchanged.
  std::uint64_t calls() const { return calls_; }

  // One row per distinct item, first-occurrence order; the items double as
  // row ids.
  EmbeddingMatrix embed(const std::vector<std::string>& items) {
    if (items.empty()) throw EmptyInput("embed: no items");
    std::vector<std::string> unique;
    unique.reserve(items.size());
    {
      std::unordered_set<std::string_view> seen;
      for (const auto& it : items)
        if (seen.insert(it).second) unique.push_back(it);
    }
    ++calls_;
    switch (spec_.kind) {
      case ProviderSpec::Kind::Mock: return embed_mock(unique);
      case ProviderSpec::Kind::File: return embed_file(unique);
      default: return embed_remote(unique);
    }
  }

 private:
  EmbeddingMatrix embed_mock(const std::vector<std::string>& items) const {
    EmbeddingMatrix m;
    m.dim = spec_.dim;
    m.ids = items;
    m.data.reserve(items.size() * spec_.dim);
    for (const auto& item : items) {
      Rng rng(fnv1a64(item, spec_.mock_seed ^ 0xa24baed4963ee407ull));
      std::vector<double> v(spec_.dim);
      double norm2 = 0.0;
      for (auto& x : v) {
        x = rng.gaussian();
        norm2 += x * x;
      }
      double norm = std::sqrt(norm2);
      if (norm < 1e-12) {
        v[0] = 1.0;
        norm = 1.0;
      }
      for (double x : v) m.data.push_back(static_cast<float>(x / norm));
    }
    validate_embeddings(m);
    return m;
  }

  EmbeddingMatrix embed_file(const std::vector<std::string>& items) {
    if (!file_store_) {
      file_store_ = load_embeddings(spec_.source_path, format_from_path(spec_.source_path));
      if (file_store_->dim != spec_.dim)
        throw DimMismatch("file provider: file has dim " + std::to_string(file_store_->dim) +
                          ", expected " + std::to_string(spec_.dim));
      file_index_ = id_index(*file_store_);
    }
    EmbeddingMatrix m;
    m.dim = spec_.dim;
    for (const auto& item : items) {
      auto it = file_index_.find(item);
      if (it == file_index_.end()) throw UnknownId("file provider: no embedding for: " + item);
      m.ids.push_back(item);
      auto r = file_store_->row(it->second);
      m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
  }

  EmbeddingMatrix embed_remote(const std::vector<std::string>& items) const {
    const auto scheme_end = spec_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw Error("endpoint must include a scheme");
    auto path_start = spec_.endpoint.find('/', scheme_end + 3);
    std::string base = spec_.endpoint.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : spec_.endpoint.substr(path_start);

    EmbeddingMatrix m;
    m.dim = spec_.dim;
    m.ids = items;
    m.data.reserve(items.size() * spec_.dim);

    httplib::Client client(base);
    for (std::size_t start = 0; start < items.size(); start += spec_.remote_batch) {
      const std::size_t end = std::min(items.size(), start + spec_.remote_batch);
      nlohmann::json req;
      req["texts"] = std::vector<std::string>(items.begin() + start, items.begin() + end);
      const std::string body = req.dump();

      std::string last_error;
      bool done = false;
      for (std::uint32_t attempt = 0; attempt < spec_.remote_attempts && !done; ++attempt) {
        if (attempt > 0)
          std::this_thread::sleep_for(std::chrono::milliseconds(50u << (attempt - 1)));
        auto res = client.Post(path, body, "application/json");
        if (!res || res->status != 200) {
          last_error = res ? "status " + std::to_string(res->status) : "connection failed";
          continue;
        }
        nlohmann::json rsp;
        try {
          rsp = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          last_error = e.what();
          continue;
        }
        if (!rsp.contains("vectors") || !rsp["vectors"].is_array() ||
            rsp["vectors"].size() != end - start)
          throw RemoteError("remote response missing vectors for batch");
        for (const auto& vec : rsp["vectors"]) {
          if (!vec.is_array() || vec.size() != spec_.dim)
            throw DimMismatch("remote vector has dim " + std::to_string(vec.size()) +
                              ", expected " + std::to_string(spec_.dim));
          for (const auto& x : vec) m.data.push_back(x.get<float>());
        }
        done = true;
      }
      if (!done)
        throw RemoteError("remote embed failed after " + std::to_string(spec_.remote_attempts) +
                          " attempts: " + last_error);
    }
    validate_embeddings(m);
    return m;
  }

  ProviderSpec spec_;
  std::uint64_t calls_ = 0;
  std::optional<EmbeddingMatrix> file_store_;
  std::unordered_map<std::string, std::uint32_t> file_index_;
};

// --------------------------------------------------------------------------
// Content-addressed cache

namespace detail {

inline std::string batch_digest(const std::string& fingerprint,
                                const std::vector<std::string>& items) {
  std::uint64_t h1 = fnv1a64(fingerprint);
  std::uint64_t h2 = fnv1a64(fingerprint, 0x9ae16a3b2f90404full);
  for (const auto& it : items) {
    h1 = fnv1a64(it, h1 * 0x100000001b3ull + 1);
    h2 = fnv1a64(it, h2 ^ 0x2545f4914f6cdd1dull);
  }
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(h1),
                static_cast<unsigned long long>(h2));
  return std::string(buf);
}

}  // namespace detail

inline EmbeddingMatrix cache_embeddings(EmbeddingProvider& provider,
                                        const std::vector<std::string>& items,
                                        const std::filesystem::path& cache_dir) {
  if (items.empty()) throw EmptyInput("cache_embeddings: no items");
  std::error_code ec;
  std::filesystem::create_directories(cache_dir, ec);
  if (ec) throw IoError("cannot create cache directory " + cache_dir.string());

  const std::string digest = detail::batch_digest(provider.spec().fingerprint(), items);
  const auto manifest_path = cache_dir / "manifest.json";
  const auto entry_path = cache_dir / (digest + ".bin");

  nlohmann::json manifest{{"version", 1}, {"entries", nlohmann::json::object()}};
  if (std::filesystem::exists(manifest_path)) {
    try {
      manifest = nlohmann::json::parse(detail::read_file_bytes(manifest_path));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(manifest_path.string() + ": " + e.what());
    }
  }

  if (manifest["entries"].contains(digest) && std::filesystem::exists(entry_path)) {
    EmbeddingMatrix cached = load_embeddings(entry_path, EmbeddingFormat::Binary);
    if (cached.dim != provider.spec().dim)
      throw DimMismatch("cache entry " + digest + " has dim " + std::to_string(cached.dim) +
                        ", expected " + std::to_string(provider.spec().dim));
    return cached;
  }

  EmbeddingMatrix fresh = provider.embed(items);
  save_embeddings(fresh, entry_path, EmbeddingFormat::Binary);
  manifest["entries"][digest] = {{"file", digest + ".bin"},
                                 {"count", fresh.size()},
                                 {"fingerprint", provider.spec().fingerprint()}};
  detail::write_file_bytes(manifest_path, manifest.dump(2) + "\n");
  return fresh;
}

}  // namespace matadapt
