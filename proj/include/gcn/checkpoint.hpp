#pragma once

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gcn/json_reader.hpp"
#include "gcn/tensor.hpp"

namespace gcn {

// GCN1 checkpoint layout, all integers little-endian:
//   "GCN1" | u32 version | u64 json length | json text
//   | u32 record count | records...
// record: u32 name length | name | u8 dtype (0 = f32, 1 = f64) | u32 rank
//   | rank x u64 extents | payload (little-endian scalars, row-major)

inline constexpr char kCheckpointMagic[4] = {'G', 'C', 'N', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  return std::is_same_v<Scalar, float> ? 0 : 1;
}

template <typename Scalar>
struct Checkpoint {
  Json header;
  std::vector<std::pair<std::string, Tensor<Scalar>>> records;

  const Tensor<Scalar>* find(const std::string& name) const {
    for (const auto& [n, t] : records)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

class ByteReader {
public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    char tmp[sizeof(T)];
    std::memcpy(tmp, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(tmp, tmp + sizeof(T));
    std::memcpy(&value, tmp, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path + "'");
}

}  // namespace detail

template <typename Scalar>
std::string encode_checkpoint(const Checkpoint<Scalar>& ckpt) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = ckpt.header.dump();
  detail::put_le<std::uint64_t>(out, header.size());
  out += header;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& [name, t] : ckpt.records) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint8_t>(out, dtype_tag<Scalar>());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    for (Scalar v : t.values()) detail::put_le<Scalar>(out, v);
  }
  return out;
}

template <typename Scalar>
Checkpoint<Scalar> decode_checkpoint(std::string bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.take(4, "magic") != std::string(kCheckpointMagic, 4)) throw FormatError("not a GCN1 checkpoint", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const auto header_len = r.get<std::uint64_t>("header length");
  const std::size_t header_at = r.offset();
  Checkpoint<Scalar> ckpt;
  try {
    ckpt.header = Json::parse(r.take(header_len, "header"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), header_at);
  }
  const auto count = r.get<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.take(name_len, "name");
    const std::size_t tag_at = r.offset();
    const auto tag = r.get<std::uint8_t>("dtype");
    if (tag != dtype_tag<Scalar>())
      throw FormatError("record '" + name + "' has dtype tag " + std::to_string(tag) + ", expected " +
                            std::to_string(dtype_tag<Scalar>()),
                        tag_at);
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape;
    const std::size_t shape_at = r.offset();
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint64_t>("extent");
      if (e == 0 || e > (std::uint64_t{1} << 40) || numel > r.remaining() / e)
        throw FormatError("record '" + name + "' has an invalid or oversized shape", shape_at);
      numel *= e;
      shape.push_back(static_cast<Index>(e));
    }
    if (rank == 0) throw FormatError("record '" + name + "' has rank 0", shape_at);
    if (r.remaining() / sizeof(Scalar) < numel) throw FormatError("truncated payload for '" + name + "'", r.offset());
    Tensor<Scalar> t(shape);
    for (auto& v : t.values()) v = r.get<Scalar>("payload");
    ckpt.records.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint records", r.offset());
  return ckpt;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& ckpt) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  return decode_checkpoint<Scalar>(detail::read_file(path));
}

}  // namespace gcn
