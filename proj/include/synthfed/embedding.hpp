#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "synthfed/core.hpp"

namespace synthfed {

struct EmbeddingVector {
  std::vector<float> values;
  std::string image_ref;
};

/// Row-major count x dimension store of embeddings with their image refs.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  explicit EmbeddingSet(std::size_t dimension) : dimension_(dimension) {}

  void add(std::span<const float> values, std::string ref);

  std::size_t size() const noexcept { return refs_.size(); }
  bool empty() const noexcept { return refs_.empty(); }
  std::size_t dimension() const noexcept { return dimension_; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dimension_, dimension_}; }
  const std::string& ref(std::size_t i) const { return refs_[i]; }
  const std::vector<std::string>& refs() const noexcept { return refs_; }
  std::span<const float> data() const noexcept { return data_; }
  EmbeddingVector vector(std::size_t i) const;

  /// Rows at the given indices, in that order.
  EmbeddingSet select(std::span<const std::size_t> indices) const;

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;

 private:
  std::size_t dimension_ = 0;
  std::vector<float> data_;
  std::vector<std::string> refs_;
};

/// Deterministic image -> vector map; identical image bytes give identical
/// vectors.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<float> embed(const Image2D& image, std::string_view ref) const = 0;
};

/// Bilinear downsample to 16x16 grayscale, flatten, then a fixed seeded
/// +-1/16 random projection to 64 dimensions.
class ToyEmbeddingProvider final : public EmbeddingProvider {
 public:
  static constexpr int kGrid = 16;
  static constexpr std::size_t kDimension = 64;

  explicit ToyEmbeddingProvider(std::uint64_t seed = 0x5eedULL);

  std::string name() const override { return "toy-projection-16x16-64"; }
  std::size_t dimension() const override { return kDimension; }
  std::vector<float> embed(const Image2D& image, std::string_view ref) const override;

 private:
  std::vector<float> projection_;  // kDimension x kGrid^2
};

/// Serves precomputed vectors (EMB1 files) by image ref.
class FileEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit FileEmbeddingProvider(const EmbeddingSet& set, std::string name = "emb1-file");

  std::string name() const override { return name_; }
  std::size_t dimension() const override { return dimension_; }
  std::vector<float> embed(const Image2D& image, std::string_view ref) const override;

 private:
  std::string name_;
  std::size_t dimension_;
  std::unordered_map<std::string, std::vector<float>> vectors_;
};

struct ImageRef {
  std::string ref;
  const Image2D* image;
};

/// One vector per image, in input order.
EmbeddingSet embed_dataset(std::span<const ImageRef> images, const EmbeddingProvider& provider);
EmbeddingSet embed_dataset(const Dataset& d, const EmbeddingProvider& provider);

/// EMB1: "EMB1", u32 count, u32 dimension (little-endian), count*dimension
/// f32 values, then the UTF-8 ids separated by '\n'.
void write_emb1(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet read_emb1(const std::filesystem::path& path);
std::string encode_emb1(const EmbeddingSet& set);
EmbeddingSet decode_emb1(std::string_view bytes);

}  // namespace synthfed
