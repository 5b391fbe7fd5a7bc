#include "synthfed/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "synthfed/error.hpp"
#include "synthfed/rng.hpp"
#include "synthfed/simd.hpp"

namespace synthfed {

void EmbeddingSet::add(std::span<const float> values, std::string ref) {
  if (refs_.empty() && dimension_ == 0) dimension_ = values.size();
  if (values.size() != dimension_)
    throw DataError("embedding dimension mismatch: expected " + std::to_string(dimension_) + ", got " +
                    std::to_string(values.size()));
  for (float v : values)
    if (!std::isfinite(v)) throw DataError("embedding for " + ref + " has a non-finite component");
  data_.insert(data_.end(), values.begin(), values.end());
  refs_.push_back(std::move(ref));
}

EmbeddingVector EmbeddingSet::vector(std::size_t i) const {
  const auto r = row(i);
  return {{r.begin(), r.end()}, refs_[i]};
}

EmbeddingSet EmbeddingSet::select(std::span<const std::size_t> indices) const {
  EmbeddingSet out(dimension_);
  for (std::size_t i : indices) out.add(row(i), refs_[i]);
  return out;
}

ToyEmbeddingProvider::ToyEmbeddingProvider(std::uint64_t seed) {
  constexpr std::size_t inputs = static_cast<std::size_t>(kGrid) * kGrid;
  projection_.resize(kDimension * inputs);
  Rng rng(seed);
  for (float& w : projection_) w = (rng.next() >> 63) ? 1.0f / kGrid : -1.0f / kGrid;
}

std::vector<float> ToyEmbeddingProvider::embed(const Image2D& image, std::string_view) const {
  const Image2D small = resize_bilinear(image.grayscale(), {kGrid, kGrid});
  const auto pixels = small.pixels();
  constexpr std::size_t inputs = static_cast<std::size_t>(kGrid) * kGrid;
  std::vector<float> out(kDimension);
  for (std::size_t k = 0; k < kDimension; ++k)
    out[k] = static_cast<float>(simd::dot(std::span(projection_).subspan(k * inputs, inputs), pixels));
  return out;
}

FileEmbeddingProvider::FileEmbeddingProvider(const EmbeddingSet& set, std::string name)
    : name_(std::move(name)), dimension_(set.dimension()) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto r = set.row(i);
    if (!vectors_.emplace(set.ref(i), std::vector<float>(r.begin(), r.end())).second)
      throw DataError("embedding file: duplicate id " + set.ref(i));
  }
}

std::vector<float> FileEmbeddingProvider::embed(const Image2D&, std::string_view ref) const {
  const auto it = vectors_.find(std::string(ref));
  if (it == vectors_.end()) throw DataError("embedding file has no vector for " + std::string(ref));
  return it->second;
}

EmbeddingSet embed_dataset(std::span<const ImageRef> images, const EmbeddingProvider& provider) {
  if (images.empty()) throw DataError("embed: empty image list");
  EmbeddingSet out(provider.dimension());
  for (const auto& item : images) {
    auto v = provider.embed(*item.image, item.ref);
    if (v.size() != provider.dimension())
      throw DataError("embed: provider " + provider.name() + " returned dimension " + std::to_string(v.size()) +
                      ", declared " + std::to_string(provider.dimension()));
    out.add(v, item.ref);
  }
  return out;
}

EmbeddingSet embed_dataset(const Dataset& d, const EmbeddingProvider& provider) {
  std::vector<ImageRef> refs;
  for (const Item* item : d.items()) refs.push_back({item->ref, &item->image});
  return embed_dataset(refs, provider);
}

namespace {

static_assert(std::endian::native == std::endian::little, "EMB1 I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + offset, 4);
  return v;
}

}  // namespace

std::string encode_emb1(const EmbeddingSet& set) {
  std::string out = "EMB1";
  put_u32(out, static_cast<std::uint32_t>(set.size()));
  put_u32(out, static_cast<std::uint32_t>(set.dimension()));
  const auto data = set.data();
  out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  for (const auto& ref : set.refs()) {
    if (ref.find('\n') != std::string::npos) throw DataError("EMB1: id contains a newline: " + ref);
    out += ref;
    out += '\n';
  }
  return out;
}

EmbeddingSet decode_emb1(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "EMB1") throw DataError("EMB1: bad magic");
  const std::uint32_t count = get_u32(bytes, 4);
  const std::uint32_t dim = get_u32(bytes, 8);
  const std::size_t payload = static_cast<std::size_t>(count) * dim * sizeof(float);
  if (bytes.size() < 12 + payload) throw DataError("EMB1: truncated vector block");
  std::vector<float> values(static_cast<std::size_t>(count) * dim);
  std::memcpy(values.data(), bytes.data() + 12, payload);

  std::vector<std::string> ids;
  std::string_view tail = bytes.substr(12 + payload);
  while (!tail.empty()) {
    const auto nl = tail.find('\n');
    ids.emplace_back(tail.substr(0, nl));
    tail = nl == std::string_view::npos ? std::string_view() : tail.substr(nl + 1);
  }
  if (ids.size() != count)
    throw DataError("EMB1: header declares " + std::to_string(count) + " vectors but lists " +
                    std::to_string(ids.size()) + " ids");
  EmbeddingSet out(dim);
  for (std::uint32_t i = 0; i < count; ++i)
    out.add(std::span(values).subspan(static_cast<std::size_t>(i) * dim, dim), std::move(ids[i]));
  return out;
}

void write_emb1(const std::filesystem::path& path, const EmbeddingSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string bytes = encode_emb1(set);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

EmbeddingSet read_emb1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_emb1(bytes);
}

}  // namespace synthfed
