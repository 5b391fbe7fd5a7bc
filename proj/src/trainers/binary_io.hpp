#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "core/fs_util.hpp"
#include "synthfed/error.hpp"

// Little-endian primitives for the model/generator files.
namespace synthfed::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  void magic(std::string_view m) { buf_.append(m); }
  template <typename T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf_.append(b, sizeof(T));
  }
  void str(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void floats(std::span<const float> v) {
    put<std::uint64_t>(v.size());
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  }
  void u16s(std::span<const std::uint16_t> v) {
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::uint16_t));
  }
  const std::string& bytes() const noexcept { return buf_; }
  void save(const std::filesystem::path& path) const { fsutil::write_text_atomic(path, buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : name_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + name_);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::string_view(buf_).substr(pos_, m.size()) != m) throw DataError(name_ + ": bad magic");
    pos_ += m.size();
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats() {
    const auto n = get<std::uint64_t>();
    need(n * sizeof(float));
    std::vector<float> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return v;
  }
  std::vector<std::uint16_t> u16s(std::size_t n) {
    need(n * sizeof(std::uint16_t));
    std::vector<std::uint16_t> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(std::uint16_t));
    pos_ += n * sizeof(std::uint16_t);
    return v;
  }
  void expect_end() const {
    if (pos_ != buf_.size()) throw DataError(name_ + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw DataError(name_ + ": truncated file");
  }
  std::string name_;
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace synthfed::binio
