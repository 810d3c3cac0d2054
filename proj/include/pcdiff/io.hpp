#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pcdiff/errors.hpp"
#include "pcdiff/image.hpp"
#include "pcdiff/params.hpp"

namespace pcdiff {

inline constexpr char kCheckpointMagic[] = "PCDF1\n";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::variant<Tensor<float>, Tensor<double>> value;
  bool frozen = false;

  const Shape& shape() const {
    return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, value);
  }
};

/// Named tensors with their frozen/trainable partition plus free-form metadata.
/// Keys never appear here, only their salted fingerprint.
struct Checkpoint {
  std::vector<CheckpointTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

template <typename T>
Checkpoint to_checkpoint(const ParameterSet<T>& params, nlohmann::json metadata = nlohmann::json::object()) {
  Checkpoint c;
  c.metadata = std::move(metadata);
  for (const auto& p : params.items()) c.tensors.push_back({p.name, p.var.value(), p.frozen});
  return c;
}

/// Copies every parameter of `params` from the checkpoint, including frozen flags.
template <typename T>
void apply_checkpoint(ParameterSet<T>& params, const Checkpoint& c) {
  for (auto& p : params.items()) {
    const auto* t = c.find(p.name);
    if (!t) throw IoError("checkpoint is missing parameter '" + p.name + "'");
    const auto* v = std::get_if<Tensor<T>>(&t->value);
    if (!v) throw IoError("checkpoint parameter '" + p.name + "' has the wrong dtype");
    if (v->shape() != p.var.shape()) {
      throw IoError("checkpoint parameter '" + p.name + "' has shape " + shape_str(v->shape()) + ", model expects " +
                    shape_str(p.var.shape()));
    }
    p.var.mutable_value() = *v;
    p.frozen = t->frozen;
    p.var.set_requires_grad(!t->frozen);
  }
}

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename U>
  void le(U v) {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
    const auto bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  void bytes(void* out, std::size_t n) {
    if (pos_ + n > data_.size()) throw IoError(path_ + ": truncated checkpoint at byte " + std::to_string(pos_));
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U le() {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
    unsigned char raw[sizeof(U)];
    bytes(raw, sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(static_cast<Bits>(raw[i]) << (8 * i));
    return std::bit_cast<U>(bits);
  }
  std::string string(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.bytes(kCheckpointMagic, 6);
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.le(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    const auto& shape = t.shape();
    w.le(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.le(static_cast<std::uint64_t>(d));
    w.le(static_cast<std::uint8_t>(t.value.index()));
    w.le(static_cast<std::uint8_t>(t.frozen));
    std::visit([&](const auto& tensor) {
      for (auto v : tensor.data()) w.le(v);
    }, t.value);
  }
  const std::string meta = c.metadata.dump();
  w.le(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());
  return w.str();
}

inline Checkpoint parse_checkpoint(std::string data, const std::string& origin = "checkpoint") {
  detail::Reader r(std::move(data), origin);
  const std::string magic = r.string(6);
  if (magic != std::string(kCheckpointMagic, 6)) {
    std::string shown;
    for (char ch : magic) shown += std::isprint(static_cast<unsigned char>(ch)) ? std::string(1, ch) : "\\x" + std::to_string(static_cast<unsigned char>(ch));
    throw IoError(origin + ": bad magic, expected 'PCDF1\\n' found '" + shown + "'");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError(origin + ": unsupported version, expected " + std::to_string(kCheckpointVersion) + " found " +
                  std::to_string(version));
  }
  Checkpoint c;
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.string(r.le<std::uint32_t>());
    Shape shape(r.le<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
    const auto dtype = r.le<std::uint8_t>();
    t.frozen = r.le<std::uint8_t>() != 0;
    if (dtype == 0) {
      Tensor<float> v(shape);
      for (auto& x : v.storage()) x = r.le<float>();
      t.value = std::move(v);
    } else if (dtype == 1) {
      Tensor<double> v(shape);
      for (auto& x : v.storage()) x = r.le<double>();
      t.value = std::move(v);
    } else {
      throw IoError(origin + ": tensor '" + t.name + "' has unknown dtype " + std::to_string(dtype));
    }
    c.tensors.push_back(std::move(t));
  }
  const std::string meta = r.string(r.le<std::uint32_t>());
  try {
    c.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(origin + ": malformed metadata: " + e.what());
  }
  if (!r.done()) throw IoError(origin + ": trailing bytes after metadata");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  detail::write_file(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(detail::read_file(path), path.string());
}

inline std::uint8_t quantize_8bit(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Binary PPM (P6, maxval 255).
inline std::string encode_ppm(const ImageF32& img) {
  if (img.channels != 3) throw IoError("ppm: expected 3 channels, got " + std::to_string(img.channels));
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.data.size());
  for (float v : img.data) out.push_back(static_cast<char>(quantize_8bit(v)));
  return out;
}

inline ImageF32 decode_ppm(const std::string& data, const std::string& origin = "ppm") {
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
      if (pos < data.size() && data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t begin = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (begin == pos) throw IoError(origin + ": truncated header");
    return data.substr(begin, pos - begin);
  };
  const std::string magic = token();
  if (magic != "P6") throw IoError(origin + ": expected binary RGB PPM 'P6', found '" + magic + "'");
  auto number = [&](const char* what) {
    const std::string t = token();
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(t, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != t.size() || v <= 0) throw IoError(origin + ": bad " + std::string(what) + " '" + t + "'");
    return static_cast<std::size_t>(v);
  };
  const std::size_t width = number("width"), height = number("height"), maxval = number("maxval");
  if (maxval != 255) throw IoError(origin + ": expected maxval 255, found " + std::to_string(maxval));
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    throw IoError(origin + ": missing whitespace after header");
  }
  ++pos;
  const std::size_t n = width * height * 3;
  if (data.size() - pos != n) {
    throw IoError(origin + ": expected " + std::to_string(n) + " pixel bytes, found " + std::to_string(data.size() - pos));
  }
  ImageF32 img(height, width, 3);
  for (std::size_t i = 0; i < n; ++i) img.data[i] = static_cast<float>(static_cast<unsigned char>(data[pos + i])) / 255.0f;
  return img;
}

inline void save_image(const std::filesystem::path& path, const ImageF32& img) {
  detail::write_file(path, encode_ppm(img));
}

inline ImageF32 load_image(const std::filesystem::path& path) {
  return decode_ppm(detail::read_file(path), path.string());
}

}  // namespace pcdiff
