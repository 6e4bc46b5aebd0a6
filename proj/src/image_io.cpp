#include "gcn/image_io.hpp"

#include <cctype>
#include <cmath>

#include "gcn/checkpoint.hpp"

namespace gcn {

std::uint8_t quantize_unit(float v) {
  if (!std::isfinite(v)) throw ContractError("cannot quantize a non-finite pixel");
  const float clamped = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(static_cast<double>(clamped) * 255.0));
}

std::string encode_netpbm(const Tensor<float>& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw ShapeError("netpbm: expected [1,H,W] or [3,H,W], got " + shape_string(image.shape()));
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::string out = (c == 1 ? "P5\n" : "P6\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(c * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < c; ++ch) out.push_back(static_cast<char>(quantize_unit(image[(ch * h + y) * w + x])));
  return out;
}

namespace {

class HeaderScanner {
public:
  explicit HeaderScanner(const std::string& bytes) : b_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long v = 0;
    while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 1'000'000) throw FormatError(std::string("netpbm: ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("netpbm: expected ") + what, start);
    return v;
  }

  std::size_t pos_ = 0;

private:
  const std::string& b_;
};

}  // namespace

Tensor<float> decode_netpbm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("netpbm: expected P5 or P6 magic", 0);
  const Index c = bytes[1] == '5' ? 1 : 3;
  HeaderScanner s(bytes);
  s.pos_ = 2;
  const long w = s.number("width");
  const long h = s.number("height");
  const std::size_t maxval_at = s.pos_;
  const long maxval = s.number("maxval");
  if (w < 1 || h < 1) throw FormatError("netpbm: empty image", maxval_at);
  if (maxval != 255) throw FormatError("netpbm: only maxval 255 is supported", maxval_at);
  if (s.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[s.pos_])))
    throw FormatError("netpbm: expected whitespace after header", s.pos_);
  const std::size_t start = s.pos_ + 1;
  const std::size_t need = static_cast<std::size_t>(c * h * w);
  if (bytes.size() - start < need) throw FormatError("netpbm: truncated pixel data", bytes.size());
  if (bytes.size() - start > need) throw FormatError("netpbm: trailing bytes after pixel data", start + need);
  Tensor<float> img({c, h, w});
  std::size_t p = start;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < c; ++ch)
        img[(ch * h + y) * w + x] = static_cast<float>(static_cast<unsigned char>(bytes[p++])) / 255.0f;
  return img;
}

void write_netpbm(const std::string& path, const Tensor<float>& image) {
  detail::write_file(path, encode_netpbm(image));
}

Tensor<float> read_netpbm(const std::string& path) { return decode_netpbm(detail::read_file(path)); }

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::uint32_t get_be32(const std::string& b, std::size_t at) {
  if (b.size() < at + 4) throw FormatError("idx: truncated header", b.size());
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(b[at + i]);
  return v;
}

}  // namespace

std::string encode_idx(const IdxArray& array) {
  if (array.dims.empty() || array.dims.size() > 255) throw ShapeError("idx: rank must lie in [1,255]");
  if (static_cast<Index>(array.data.size()) != checked_numel(array.dims))
    throw ShapeError("idx: data size does not match " + shape_string(array.dims));
  std::string out;
  put_be32(out, 0x0800u | static_cast<std::uint32_t>(array.dims.size()));
  for (Index d : array.dims) put_be32(out, static_cast<std::uint32_t>(d));
  out.append(reinterpret_cast<const char*>(array.data.data()), array.data.size());
  return out;
}

IdxArray decode_idx(const std::string& bytes) {
  const std::uint32_t magic = get_be32(bytes, 0);
  if ((magic >> 16) != 0) throw FormatError("idx: bad magic", 0);
  if (((magic >> 8) & 0xff) != 0x08) throw FormatError("idx: only unsigned byte data (type 0x08) is supported", 2);
  const std::size_t rank = magic & 0xff;
  if (rank == 0) throw FormatError("idx: rank 0", 3);
  IdxArray out;
  std::uint64_t total = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::uint32_t e = get_be32(bytes, 4 + 4 * d);
    if (e == 0) throw FormatError("idx: zero extent", 4 + 4 * d);
    total *= e;
    if (total > bytes.size()) throw FormatError("idx: truncated payload", bytes.size());
    out.dims.push_back(static_cast<Index>(e));
  }
  const std::size_t start = 4 + 4 * rank;
  if (bytes.size() - start < total) throw FormatError("idx: truncated payload", bytes.size());
  if (bytes.size() - start > total) throw FormatError("idx: trailing bytes after payload", start + total);
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  return out;
}

IdxArray read_idx(const std::string& path) { return decode_idx(detail::read_file(path)); }

void write_idx(const std::string& path, const IdxArray& array) { detail::write_file(path, encode_idx(array)); }

IdxDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const IdxArray images = read_idx(images_path);
  const IdxArray labels = read_idx(labels_path);
  if (images.dims.size() != 3) throw FormatError("idx: image file must have rank 3 (magic 0x00000803)", 3);
  if (labels.dims.size() != 1) throw FormatError("idx: label file must have rank 1 (magic 0x00000801)", 3);
  if (images.dims[0] != labels.dims[0])
    throw ShapeError("idx: " + std::to_string(images.dims[0]) + " images but " + std::to_string(labels.dims[0]) +
                     " labels");
  IdxDataset out{Tensor<float>({images.dims[0], 1, images.dims[1], images.dims[2]}), {}};
  for (std::size_t i = 0; i < images.data.size(); ++i)
    out.images[static_cast<Index>(i)] = static_cast<float>(images.data[i]) / 255.0f;
  out.labels.assign(labels.data.begin(), labels.data.end());
  return out;
}

}  // namespace gcn
