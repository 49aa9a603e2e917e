#pragma once

// Little-endian reader/writer shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spim/errors.hpp"

namespace spim::binio {

class Writer {
public:
  void bytes(const void *p, std::size_t n) {
    const auto *c = static_cast<const unsigned char *>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) {
      b[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(const std::vector<float> &v) {
    for (const float x : v) {
      f32(x);
    }
  }
  void to_file(const std::string &path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw ConfigError("cannot open " + path + " for writing");
    }
    out.write(reinterpret_cast<const char *>(buf_.data()), std::streamsize(buf_.size()));
    if (!out) {
      throw ConfigError("write failed: " + path);
    }
  }
  const std::vector<unsigned char> &buffer() const { return buf_; }

private:
  std::vector<unsigned char> buf_;
};

class Reader {
public:
  Reader(std::vector<unsigned char> data, std::string name)
      : data_(std::move(data)), name_(std::move(name)) {}

  static Reader from_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      throw ConfigError("cannot open " + path);
    }
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return Reader(std::move(data), path);
  }

  std::size_t offset() const { return pos_; }
  std::size_t size() const { return data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n, const char *what) const {
    if (remaining() < n) {
      throw FormatError(name_ + ": truncated " + what + " at byte offset " + std::to_string(pos_) +
                        ": expected " + std::to_string(pos_ + n) + " bytes, file has " +
                        std::to_string(data_.size()));
    }
  }
  void bytes(void *p, std::size_t n, const char *what) {
    need(n, what);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char *what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char *what) {
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    return lo | (hi << 32);
  }
  float f32(const char *what) { return std::bit_cast<float>(u32(what)); }
  void f32s(std::vector<float> &out, std::size_t n, const char *what) {
    need(4 * n, what);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = f32(what);
    }
  }
  [[noreturn]] void fail(const std::string &msg) const {
    throw FormatError(name_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

private:
  std::vector<unsigned char> data_;
  std::string name_;
  std::size_t pos_ = 0;
};

} // namespace spim::binio
