#pragma once

// NPY v1.0 codec restricted to little-endian float32/float64, C order, rank 1..4.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include <unistd.h>

#include "casa/error.hpp"

namespace casa {

enum class Dtype { float32, float64 };

inline constexpr const char* dtype_descr(Dtype d) { return d == Dtype::float32 ? "<f4" : "<f8"; }
inline constexpr std::size_t dtype_size(Dtype d) { return d == Dtype::float32 ? 4 : 8; }

template <typename T>
inline constexpr Dtype dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "float or double only");
  return std::is_same_v<T, float> ? Dtype::float32 : Dtype::float64;
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

/// Row-major contiguous array of float32 or float64 with rank 1..4.
class DenseArray {
 public:
  using Storage = std::variant<std::vector<float>, std::vector<double>>;

  DenseArray() : DenseArray(Shape{1}, std::vector<double>{0.0}) {}

  template <typename T>
  DenseArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate();
  }

  /// Copies `values` into a new array of dtype `dtype`.
  static DenseArray from_doubles(Shape shape, std::span<const double> values, Dtype dtype = Dtype::float64) {
    if (dtype == Dtype::float64) return DenseArray(std::move(shape), std::vector<double>(values.begin(), values.end()));
    std::vector<float> f(values.size());
    std::transform(values.begin(), values.end(), f.begin(), [](double v) { return static_cast<float>(v); });
    return DenseArray(std::move(shape), std::move(f));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return shape_product(shape_); }
  Dtype dtype() const noexcept { return std::holds_alternative<std::vector<float>>(data_) ? Dtype::float32 : Dtype::float64; }

  template <typename T>
  std::span<const T> data() const {
    if (dtype() != dtype_of<T>()) throw DataError("array holds " + std::string(dtype_descr(dtype())) + " data");
    return std::get<std::vector<T>>(data_);
  }

  /// Values widened to double; exact for both dtypes.
  std::vector<double> to_doubles() const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
  }

  /// Raw payload bytes in host order.
  std::span<const std::byte> bytes() const {
    return std::visit([](const auto& v) { return std::as_bytes(std::span(v)); }, data_);
  }

  /// Bitwise equality of shape, dtype and payload.
  friend bool operator==(const DenseArray& a, const DenseArray& b) {
    if (a.shape_ != b.shape_ || a.dtype() != b.dtype()) return false;
    auto x = a.bytes();
    auto y = b.bytes();
    return x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size()) == 0;
  }

 private:
  void validate() const {
    if (shape_.empty() || shape_.size() > 4)
      throw ShapeError("array rank must be between 1 and 4, got " + std::to_string(shape_.size()));
    for (auto d : shape_)
      if (d == 0) throw ShapeError("array dimensions must be positive, got " + shape_string(shape_));
    auto n = std::visit([](const auto& v) { return v.size(); }, data_);
    if (n != shape_product(shape_))
      throw ShapeError("shape " + shape_string(shape_) + " needs " + std::to_string(shape_product(shape_)) +
                       " elements, data has " + std::to_string(n));
  }

  Shape shape_;
  Storage data_;
};

namespace npy_detail {

inline constexpr std::array<unsigned char, 6> magic = {0x93, 'N', 'U', 'M', 'P', 'Y'};
inline constexpr std::size_t preamble_size = 10;
inline constexpr std::size_t alignment = 64;

inline std::string header_for(const DenseArray& arr) {
  std::string dict = "{'descr': '" + std::string(dtype_descr(arr.dtype())) +
                     "', 'fortran_order': False, 'shape': " + shape_string(arr.shape()) + ", }";
  std::size_t unpadded = preamble_size + dict.size() + 1;
  std::size_t padded = (unpadded + alignment - 1) / alignment * alignment;
  dict.append(padded - unpadded, ' ');
  dict.push_back('\n');
  return dict;
}

template <typename T>
void swap_bytes_inplace(std::span<T> values) {
  for (auto& v : values) {
    auto b = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    std::reverse(b.begin(), b.end());
    v = std::bit_cast<T>(b);
  }
}

/// Minimal parser for the python-literal header dict.
class HeaderParser {
 public:
  HeaderParser(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  struct Result {
    std::string descr;
    bool fortran_order = false;
    Shape shape;
  };

  Result parse() {
    Result r;
    bool have_descr = false, have_order = false, have_shape = false;
    skip_ws();
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      std::size_t key_at = pos_;
      std::string key = quoted();
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        std::size_t at = pos_;
        r.descr = quoted();
        if (r.descr != "<f4" && r.descr != "<f8") throw UnsupportedDtypeError(base_ + at, r.descr);
        have_descr = true;
      } else if (key == "fortran_order") {
        r.fortran_order = boolean();
        have_order = true;
      } else if (key == "shape") {
        r.shape = tuple();
        have_shape = true;
      } else {
        throw FormatError(base_ + key_at, "unexpected header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != '}') {
        fail("expected ',' or '}'");
      }
    }
    if (!have_descr || !have_order || !have_shape) fail("header lacks descr, fortran_order or shape");
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters after header dict");
    return r;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(base_ + pos_, msg); }

  char peek() const {
    if (pos_ >= text_.size()) fail("unexpected end of header");
    return text_[pos_];
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\n' || text_[pos_] == '\t')) ++pos_;
  }

  std::string quoted() {
    char q = peek();
    if (q != '\'' && q != '"') fail("expected quoted string");
    ++pos_;
    auto end = text_.find(q, pos_);
    if (end == std::string_view::npos) fail("unterminated string");
    std::string s(text_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return s;
  }

  bool boolean() {
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail("expected True or False");
  }

  Shape tuple() {
    Shape shape;
    expect('(');
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return shape;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected integer dimension");
      std::size_t v = 0;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        v = v * 10 + static_cast<std::size_t>(text_[pos_] - '0');
        ++pos_;
      }
      shape.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
      else if (peek() != ')') fail("expected ',' or ')' in shape");
    }
  }

  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

template <typename T>
DenseArray decode_payload(Shape shape, const std::vector<char>& buf, std::size_t offset) {
  std::vector<T> values(shape_product(shape));
  std::memcpy(values.data(), buf.data() + offset, values.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) swap_bytes_inplace(std::span(values));
  return DenseArray(std::move(shape), std::move(values));
}

}  // namespace npy_detail

/// Encodes `arr` as an NPY v1.0 byte string with the canonical header.
inline std::vector<char> encode_array(const DenseArray& arr) {
  std::string header = npy_detail::header_for(arr);
  std::vector<char> out;
  auto payload = arr.bytes();
  out.reserve(npy_detail::preamble_size + header.size() + payload.size());
  for (auto c : npy_detail::magic) out.push_back(static_cast<char>(c));
  out.push_back(1);
  out.push_back(0);
  auto hlen = static_cast<std::uint16_t>(header.size());
  out.push_back(static_cast<char>(hlen & 0xff));
  out.push_back(static_cast<char>(hlen >> 8));
  out.insert(out.end(), header.begin(), header.end());
  std::size_t start = out.size();
  out.resize(start + payload.size());
  std::memcpy(out.data() + start, payload.data(), payload.size());
  if constexpr (std::endian::native == std::endian::big) {
    char* p = out.data() + start;
    std::size_t w = dtype_size(arr.dtype());
    for (std::size_t i = 0; i < payload.size(); i += w) std::reverse(p + i, p + i + w);
  }
  return out;
}

/// Decodes an NPY v1.0 byte string.
inline DenseArray decode_array(const std::vector<char>& buf) {
  using namespace npy_detail;
  for (std::size_t i = 0; i < magic.size(); ++i)
    if (i >= buf.size() || static_cast<unsigned char>(buf[i]) != magic[i]) throw FormatError(i, "bad magic string");
  if (buf.size() < preamble_size) throw FormatError(buf.size(), "file too short for NPY preamble");
  if (buf[6] != 1 || buf[7] != 0)
    throw FormatError(6, "unsupported format version " + std::to_string(static_cast<int>(buf[6])) + "." +
                             std::to_string(static_cast<int>(buf[7])));
  std::size_t hlen = static_cast<unsigned char>(buf[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(buf[9])) << 8);
  if (buf.size() < preamble_size + hlen) throw FormatError(buf.size(), "header length exceeds file size");
  std::string_view header(buf.data() + preamble_size, hlen);
  if (header.empty() || header.back() != '\n') throw FormatError(preamble_size + hlen - 1, "header must end with newline");

  auto parsed = HeaderParser(header, preamble_size).parse();
  if (parsed.fortran_order) throw FormatError(preamble_size, "fortran_order arrays are not supported");
  if (parsed.shape.empty() || parsed.shape.size() > 4)
    throw FormatError(preamble_size, "array rank must be between 1 and 4, got " + std::to_string(parsed.shape.size()));
  for (auto d : parsed.shape)
    if (d == 0) throw FormatError(preamble_size, "zero-sized dimension in shape " + shape_string(parsed.shape));

  Dtype dtype = parsed.descr == "<f4" ? Dtype::float32 : Dtype::float64;
  std::size_t offset = preamble_size + hlen;
  std::size_t expected = shape_product(parsed.shape) * dtype_size(dtype);
  if (buf.size() - offset != expected) throw LengthMismatchError(expected, buf.size() - offset);
  return dtype == Dtype::float32 ? decode_payload<float>(std::move(parsed.shape), buf, offset)
                                 : decode_payload<double>(std::move(parsed.shape), buf, offset);
}

inline DenseArray read_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return decode_array(buf);
}

/// Writes `bytes` to a sibling temp file then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failure on '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
  }
}

inline void write_array(const DenseArray& arr, const std::filesystem::path& path) {
  auto bytes = encode_array(arr);
  write_file_atomic(path, bytes);
}

}  // namespace casa
