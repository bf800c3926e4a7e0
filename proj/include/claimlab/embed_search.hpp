#pragma once

// Embedding providers, weighted text/image fusion and exact cosine retrieval.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "claimlab/claim_store.hpp"
#include "claimlab/errors.hpp"
#include "claimlab/http_client.hpp"
#include "claimlab/io.hpp"
#include "claimlab/random.hpp"

namespace claimlab {

enum class Modality { Text, Image, Fused };

class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  EmbeddingVector(std::vector<double> values, Modality modality)
      : values_(std::move(values)), modality_(modality) {
    if (values_.empty()) throw ValidationError("embedding has zero dimensions");
    for (double v : values_)
      if (!std::isfinite(v)) throw ValidationError("embedding has a non-finite entry");
  }

  std::size_t dim() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  Modality modality() const { return modality_; }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
  Modality modality_ = Modality::Text;
};

struct FusionQuery {
  std::optional<EmbeddingVector> text;
  std::optional<EmbeddingVector> image;
  double weight = 0.0;  // W: share of the image embedding
};

inline void validate(const FusionQuery& q) {
  if (!q.text && !q.image) throw ValidationError("fusion query needs a text or an image embedding");
  if (!(q.weight >= 0.0 && q.weight <= 1.0)) throw ValidationError("fusion weight must lie in [0,1]");
  if (q.text && q.image && q.text->dim() != q.image->dim())
    throw ValidationError("text and image embeddings differ in dimension");
}

// emb = (1 - W) * text + W * image, elementwise, without renormalisation.
// With a single modality present the weight is ignored.
inline EmbeddingVector fuse(const FusionQuery& q) {
  validate(q);
  if (!q.image) return EmbeddingVector({q.text->values().begin(), q.text->values().end()}, Modality::Fused);
  if (!q.text) return EmbeddingVector({q.image->values().begin(), q.image->values().end()}, Modality::Fused);
  const double w = q.weight;
  std::vector<double> out(q.text->dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - w) * (*q.text)[i] + w * (*q.image)[i];
  return EmbeddingVector(std::move(out), Modality::Fused);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine of vectors with different dimensions");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine of a zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine(a.values(), b.values());
}

inline json to_json(const EmbeddingVector& v) { return json(std::vector<double>(v.values().begin(), v.values().end())); }

// Input to an embedding provider: free text or an opaque image reference.
struct EmbedInput {
  enum class Kind { Text, ImageRef } kind = Kind::Text;
  std::string value;

  static EmbedInput text(std::string s) { return {Kind::Text, std::move(s)}; }
  static EmbedInput image_ref(std::string s) { return {Kind::ImageRef, std::move(s)}; }
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual EmbeddingVector embed(const EmbedInput& input) = 0;
};

// Deterministic provider for hermetic runs: each distinct input maps to a
// pseudo-random unit vector seeded by a hash of the input. Text and image
// references hash into disjoint streams.
class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(std::size_t dim = 64, std::uint64_t salt = 0) : dim_(dim), salt_(salt) {
    if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
  }

  std::size_t dim() const override { return dim_; }

  EmbeddingVector embed(const EmbedInput& input) override {
    const std::uint64_t stream = input.kind == EmbedInput::Kind::Text ? 1 : 2;
    Rng rng(derive_seed(salt_ ^ fnv1a64(input.value), stream));
    std::vector<double> v(dim_);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return EmbeddingVector(std::move(v), input.kind == EmbedInput::Kind::Text ? Modality::Text : Modality::Image);
  }

 private:
  std::size_t dim_;
  std::uint64_t salt_;
};

// Remote provider speaking the common embeddings wire shape:
//   request  {"model": ..., "input": "<text>"}
//   response {"data": [{"embedding": [...]}]}
// Image references are not sent over the wire; use an ImageEmbeddingTable.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(HttpEndpoint endpoint, std::size_t dim) : endpoint_(std::move(endpoint)), dim_(dim) {}

  std::size_t dim() const override { return dim_; }

  EmbeddingVector embed(const EmbedInput& input) override {
    if (input.kind != EmbedInput::Kind::Text)
      throw ValidationError("remote embedding provider accepts text only; import image embeddings from a file");
    const auto reply = post_json(endpoint_, {{"model", endpoint_.model}, {"input", input.value}});
    std::vector<double> values;
    try {
      values = reply.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw TransportError(std::string("embedding reply has no vector: ") + e.what());
    }
    if (values.size() != dim_)
      throw TransportError("embedding provider returned dim " + std::to_string(values.size()) + ", expected " +
                           std::to_string(dim_));
    return EmbeddingVector(std::move(values), Modality::Text);
  }

 private:
  HttpEndpoint endpoint_;
  std::size_t dim_;
};

// Precomputed image embeddings keyed by claim id, read from
// {"claim_id": ..., "vector": [...]} lines.
class ImageEmbeddingTable {
 public:
  static ImageEmbeddingTable load(std::istream& in) {
    ImageEmbeddingTable t;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (trim(line).empty()) continue;
      try {
        const auto j = json::parse(line);
        auto id = j.at("claim_id").get<std::string>();
        EmbeddingVector v(j.at("vector").get<std::vector<double>>(), Modality::Image);
        if (!t.vectors_.empty() && t.vectors_.begin()->second.dim() != v.dim())
          throw ValidationError("inconsistent image embedding dimension");
        t.vectors_.insert_or_assign(std::move(id), std::move(v));
      } catch (const json::exception& e) {
        throw ValidationError("image embeddings line " + std::to_string(n) + ": " + e.what());
      } catch (const ValidationError& e) {
        throw ValidationError("image embeddings line " + std::to_string(n) + ": " + e.what());
      }
    }
    return t;
  }

  static ImageEmbeddingTable load(const std::filesystem::path& path) {
    auto in = open_for_reading(path);
    return load(in);
  }

  void set(std::string claim_id, EmbeddingVector v) { vectors_.insert_or_assign(std::move(claim_id), std::move(v)); }

  const EmbeddingVector* find(const std::string& claim_id) const {
    auto it = vectors_.find(claim_id);
    return it == vectors_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return vectors_.size(); }

 private:
  std::map<std::string, EmbeddingVector> vectors_;
};

struct SearchHit {
  std::string claim_id;
  double similarity = 0.0;
  ClaimSource source = ClaimSource::Manual;
};

inline json to_json(const SearchHit& h) {
  return json{{"claim_id", h.claim_id}, {"similarity", h.similarity}, {"source", std::string(to_string(h.source))}};
}

// Which stored representation a query is compared against.
enum class SearchTarget { ClaimText, ClaimImage };

// Orders hits by descending similarity, then ascending claim id.
inline bool hit_before(const SearchHit& a, const SearchHit& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.claim_id < b.claim_id;
}

// Immutable exact-scan index over embedded claims.
class SearchIndex {
 public:
  struct Entry {
    std::string id;
    ClaimSource source;
    TagMap tags;
    EmbeddingVector text;
    std::optional<EmbeddingVector> image;
  };

  static SearchIndex build(const std::vector<Claim>& claims, EmbeddingProvider& provider,
                           const ImageEmbeddingTable* images = nullptr) {
    SearchIndex index;
    for (const auto& c : claims) {
      Entry e{c.id, c.source, c.tags, provider.embed(EmbedInput::text(c.text)), std::nullopt};
      if (e.text.dim() != provider.dim()) throw TransportError("provider returned a vector of the wrong dimension");
      if (images)
        if (const auto* v = images->find(c.id)) e.image = *v;
      index.entries_.push_back(std::move(e));
    }
    return index;
  }

  static SearchIndex from_entries(std::vector<Entry> entries) {
    SearchIndex index;
    index.entries_ = std::move(entries);
    return index;
  }

  std::vector<SearchHit> search_top_k(const FusionQuery& query, std::size_t k, const TagMap& filters = {},
                                      std::optional<ClaimSource> source = std::nullopt,
                                      SearchTarget target = SearchTarget::ClaimText) const {
    if (k == 0) throw ValidationError("k must be at least 1");
    const EmbeddingVector q = fuse(query);
    std::vector<SearchHit> hits;
    for (const auto& e : entries_) {
      if (source && e.source != *source) continue;
      if (!matches_filters(e.tags, filters)) continue;
      const EmbeddingVector* stored = &e.text;
      if (target == SearchTarget::ClaimImage) {
        if (!e.image) continue;
        stored = &*e.image;
      }
      hits.push_back({e.id, cosine(q, *stored), e.source});
    }
    const std::size_t n = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), hit_before);
    hits.resize(n);
    return hits;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
};

// Holds the live index. Searches work on a snapshot; rebuilds swap the whole
// index in one step.
class IndexHandle {
 public:
  IndexHandle() : current_(std::make_shared<const SearchIndex>()) {}

  std::shared_ptr<const SearchIndex> snapshot() const {
    std::lock_guard lock(mutex_);
    return current_;
  }

  void replace(SearchIndex index) {
    auto next = std::make_shared<const SearchIndex>(std::move(index));
    std::lock_guard lock(mutex_);
    current_ = std::move(next);
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const SearchIndex> current_;
};

}  // namespace claimlab
