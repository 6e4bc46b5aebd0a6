#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gcn/autograd.hpp"

namespace gcn {

// ---------------------------------------------------------------------------
// Geometry

struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel_size = 1;
  Index stride = 1;
  Index pad = 0;
};

/// Transposed convolution shares the field layout; its weights are [in, out, k, k].
struct DeconvSpec : ConvSpec {};

/// Strided convolution output extent. The stride must divide the swept range exactly.
inline Index conv_output_size(Index size_in, Index stride, Index kernel_size, Index pad) {
  if (size_in < 1 || stride < 1 || kernel_size < 1 || pad < 0)
    throw GeometryError("invalid convolution parameters");
  const Index span = size_in + 2 * pad - kernel_size;
  if (span < 0)
    throw GeometryError("kernel " + std::to_string(kernel_size) + " larger than padded input " +
                        std::to_string(size_in + 2 * pad));
  if (span % stride != 0)
    throw GeometryError("stride " + std::to_string(stride) + " does not divide (" +
                        std::to_string(size_in) + " + 2*" + std::to_string(pad) + " - " +
                        std::to_string(kernel_size) + ")");
  return span / stride + 1;
}

/// (size_in - 1) * stride + kernel_size - 2 * pad
inline Index deconv_output_size(Index size_in, Index stride, Index kernel_size, Index pad) {
  if (size_in < 1 || stride < 1 || kernel_size < 1 || pad < 0)
    throw GeometryError("invalid transposed-convolution parameters");
  const Index out = (size_in - 1) * stride + kernel_size - 2 * pad;
  if (out < 1) throw GeometryError("transposed convolution yields non-positive size " + std::to_string(out));
  return out;
}

namespace detail {

/// Unfolds one [C,H,W] image into columns [C*k*k, Ho*Wo].
template <typename Scalar>
void im2col(const Scalar* img, Index channels, Index height, Index width, Index k, Index stride,
            Index pad, Index out_h, Index out_w, Scalar* col) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c)
    for (Index ki = 0; ki < k; ++ki)
      for (Index kj = 0; kj < k; ++kj) {
        Scalar* row = col + ((c * k + ki) * k + kj) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - pad + ki;
          Scalar* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = img + (c * height + iy) * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : Scalar(0);
          }
        }
      }
}

/// Adjoint of im2col: scatters-and-adds columns back into an image.
template <typename Scalar>
void col2im(const Scalar* col, Index channels, Index height, Index width, Index k, Index stride,
            Index pad, Index out_h, Index out_w, Scalar* img) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c)
    for (Index ki = 0; ki < k; ++ki)
      for (Index kj = 0; kj < k; ++kj) {
        const Scalar* row = col + ((c * k + ki) * k + kj) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= height) continue;
          Scalar* dst = img + (c * height + iy) * width;
          const Scalar* src = row + oy * out_w;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
}

inline void check_conv_operands(const Shape& x, const Shape& w, const Shape& b, const ConvSpec& spec,
                                Index weight_in, Index weight_out, const char* op) {
  if (x.size() != 4) throw ShapeError(std::string(op) + ": input must be [batch,C,H,W]");
  if (x[1] != spec.in_channels)
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x[1]) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  const Shape expect_w{weight_in, weight_out, spec.kernel_size, spec.kernel_size};
  if (w != expect_w)
    throw ShapeError(std::string(op) + ": weights " + shape_string(w) + ", expected " + shape_string(expect_w));
  if (b != Shape{spec.out_channels})
    throw ShapeError(std::string(op) + ": bias " + shape_string(b) + ", expected [" +
                     std::to_string(spec.out_channels) + "]");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Layers

/// x [batch,in] * W [in,out] + b [out]
template <typename Scalar>
Var<Scalar> fully_connected(const Var<Scalar>& x, const Var<Scalar>& weights, const Var<Scalar>& bias) {
  const auto& xs = x.shape();
  const auto& ws = weights.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0] || bias.shape() != Shape{ws[1]})
    throw ShapeError("fully_connected: x " + shape_string(xs) + ", W " + shape_string(ws) + ", b " +
                     shape_string(bias.shape()));
  Tensor<Scalar> out({xs[0], ws[1]});
  auto o = out.matrix();
  o.noalias() = x.value().matrix() * weights.value().matrix();
  o.rowwise() += bias.value().matrix(1, ws[1]).row(0);
  return make_op<Scalar>("fully_connected", std::move(out), {x, weights, bias}, [](Node<Scalar>& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    auto& pb = *n.parents[2];
    const auto g = n.grad.matrix();
    if (px.requires_grad) px.grad_buffer().matrix().noalias() += g * pw.value.matrix().transpose();
    if (pw.requires_grad) pw.grad_buffer().matrix().noalias() += px.value.matrix().transpose() * g;
    if (pb.requires_grad) {
      auto gb = pb.grad_buffer().matrix(1, g.cols());
      gb.row(0) += g.colwise().sum();
    }
  });
}

/// Cross-correlation (no kernel flip). x [N,C,H,W], weights [O,C,k,k], bias [O].
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const ConvSpec& spec, const Var<Scalar>& weights,
                   const Var<Scalar>& bias) {
  detail::check_conv_operands(x.shape(), weights.shape(), bias.shape(), spec, spec.out_channels,
                              spec.in_channels, "conv2d");
  const Index batch = x.shape()[0], channels = spec.in_channels, h = x.shape()[2], w = x.shape()[3];
  const Index k = spec.kernel_size, s = spec.stride, p = spec.pad, oc = spec.out_channels;
  const Index oh = conv_output_size(h, s, k, p), ow = conv_output_size(w, s, k, p);
  const Index ckk = channels * k * k, plane = oh * ow;

  Tensor<Scalar> out({batch, oc, oh, ow});
  RowMatrix<Scalar> col(ckk, plane);
  const auto wm = weights.value().matrix(oc, ckk);
  const auto bv = bias.value().matrix(oc, 1);
  for (Index b = 0; b < batch; ++b) {
    detail::im2col(x.value().data() + b * channels * h * w, channels, h, w, k, s, p, oh, ow, col.data());
    MatrixMap<Scalar> ob(out.data() + b * oc * plane, oc, plane);
    ob.noalias() = wm * col;
    ob.colwise() += bv.col(0);
  }
  return make_op<Scalar>("conv2d", std::move(out), {x, weights, bias},
                         [=](Node<Scalar>& n) {
                           auto& px = *n.parents[0];
                           auto& pw = *n.parents[1];
                           auto& pb = *n.parents[2];
                           RowMatrix<Scalar> col(ckk, plane), dcol(ckk, plane);
                           for (Index b = 0; b < batch; ++b) {
                             ConstMatrixMap<Scalar> g(n.grad.data() + b * oc * plane, oc, plane);
                             if (pw.requires_grad) {
                               detail::im2col(px.value.data() + b * channels * h * w, channels, h, w, k, s, p,
                                              oh, ow, col.data());
                               pw.grad_buffer().matrix(oc, ckk).noalias() += g * col.transpose();
                             }
                             if (pb.requires_grad) pb.grad_buffer().matrix(oc, 1).col(0) += g.rowwise().sum();
                             if (px.requires_grad) {
                               dcol.noalias() = pw.value.matrix(oc, ckk).transpose() * g;
                               detail::col2im(dcol.data(), channels, h, w, k, s, p, oh, ow,
                                              px.grad_buffer().data() + b * channels * h * w);
                             }
                           }
                         });
}

/// Transposed (fractionally strided) convolution. x [N,Cin,H,W], weights [Cin,Cout,k,k],
/// bias [Cout]. Output extent per axis is deconv_output_size; with shared weights this is
/// the adjoint of conv2d.
template <typename Scalar>
Var<Scalar> deconv2d(const Var<Scalar>& x, const DeconvSpec& spec, const Var<Scalar>& weights,
                     const Var<Scalar>& bias) {
  detail::check_conv_operands(x.shape(), weights.shape(), bias.shape(), spec, spec.in_channels,
                              spec.out_channels, "deconv2d");
  const Index batch = x.shape()[0], ic = spec.in_channels, h = x.shape()[2], w = x.shape()[3];
  const Index k = spec.kernel_size, s = spec.stride, p = spec.pad, oc = spec.out_channels;
  const Index oh = deconv_output_size(h, s, k, p), ow = deconv_output_size(w, s, k, p);
  const Index okk = oc * k * k, in_plane = h * w, out_plane = oh * ow;

  Tensor<Scalar> out({batch, oc, oh, ow});
  RowMatrix<Scalar> col(okk, in_plane);
  const auto wm = weights.value().matrix(ic, okk);
  const auto bv = bias.value();
  for (Index b = 0; b < batch; ++b) {
    ConstMatrixMap<Scalar> xb(x.value().data() + b * ic * in_plane, ic, in_plane);
    col.noalias() = wm.transpose() * xb;
    Scalar* ob = out.data() + b * oc * out_plane;
    for (Index c = 0; c < oc; ++c) std::fill(ob + c * out_plane, ob + (c + 1) * out_plane, bv[c]);
    detail::col2im(col.data(), oc, oh, ow, k, s, p, h, w, ob);
  }
  return make_op<Scalar>("deconv2d", std::move(out), {x, weights, bias},
                         [=](Node<Scalar>& n) {
                           auto& px = *n.parents[0];
                           auto& pw = *n.parents[1];
                           auto& pb = *n.parents[2];
                           RowMatrix<Scalar> gcol(okk, in_plane);
                           for (Index b = 0; b < batch; ++b) {
                             const Scalar* gb = n.grad.data() + b * oc * out_plane;
                             if (pb.requires_grad) {
                               auto& db = pb.grad_buffer();
                               for (Index c = 0; c < oc; ++c)
                                 db[c] += ConstArrayMap<Scalar>(gb + c * out_plane, out_plane).sum();
                             }
                             if (!px.requires_grad && !pw.requires_grad) continue;
                             detail::im2col(gb, oc, oh, ow, k, s, p, h, w, gcol.data());
                             if (px.requires_grad) {
                               MatrixMap<Scalar> dx(px.grad_buffer().data() + b * ic * in_plane, ic, in_plane);
                               dx.noalias() += pw.value.matrix(ic, okk) * gcol;
                             }
                             if (pw.requires_grad) {
                               ConstMatrixMap<Scalar> xb(px.value.data() + b * ic * in_plane, ic, in_plane);
                               pw.grad_buffer().matrix(ic, okk).noalias() += xb * gcol.transpose();
                             }
                           }
                         });
}

/// Max pooling over k×k windows; the stride must tile the input exactly.
/// Ties route the gradient to the first maximum in scan order.
template <typename Scalar>
Var<Scalar> max_pool2d(const Var<Scalar>& x, Index kernel_size, Index stride) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("max_pool2d: input must be [batch,C,H,W]");
  const Index planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const Index oh = conv_output_size(h, stride, kernel_size, 0), ow = conv_output_size(w, stride, kernel_size, 0);
  Tensor<Scalar> out({xs[0], xs[1], oh, ow});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const Scalar* in = x.value().data();
  for (Index pl = 0; pl < planes; ++pl)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        Index best = pl * h * w + (oy * stride) * w + ox * stride;
        for (Index ky = 0; ky < kernel_size; ++ky)
          for (Index kx = 0; kx < kernel_size; ++kx) {
            const Index idx = pl * h * w + (oy * stride + ky) * w + ox * stride + kx;
            if (in[idx] > in[best]) best = idx;
          }
        const Index o = (pl * oh + oy) * ow + ox;
        out[o] = in[best];
        argmax[static_cast<std::size_t>(o)] = best;
      }
  return make_op<Scalar>("max_pool2d", std::move(out), {x}, [argmax = std::move(argmax)](Node<Scalar>& n) {
    auto& gx = n.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += n.grad[static_cast<Index>(o)];
  });
}

/// max(x, slope*x). At exactly 0 the derivative is the negative-side slope.
template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar negative_slope) {
  Tensor<Scalar> out(x.shape());
  out.array() = (x.value().array() > Scalar(0)).select(x.value().array(), x.value().array() * negative_slope);
  return make_op<Scalar>("leaky_relu", std::move(out), {x}, [negative_slope](Node<Scalar>& n) {
    auto& p = *n.parents[0];
    p.grad_buffer().array() +=
        (p.value.array() > Scalar(0)).select(n.grad.array(), n.grad.array() * negative_slope);
  });
}

/// Concatenates along `axis`; all other extents must agree.
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis < 0 || axis >= static_cast<Index>(first.size())) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& part : parts) {
    const Shape& s = part.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      if (static_cast<Index>(d) != axis && s[d] != first[d]) ok = false;
    if (!ok) throw ShapeError("concat: " + shape_string(s) + " incompatible with " + shape_string(first));
    out_shape[axis] += s[axis];
  }
  Index outer = 1, inner = 1;
  for (Index d = 0; d < axis; ++d) outer *= first[d];
  for (Index d = axis + 1; d < static_cast<Index>(first.size()); ++d) inner *= first[d];
  std::vector<Index> widths;
  for (const auto& part : parts) widths.push_back(part.shape()[axis] * inner);
  const Index row = out_shape[axis] * inner;

  Tensor<Scalar> out(out_shape);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Scalar* src = parts[i].value().data();
    for (Index o = 0; o < outer; ++o)
      std::copy(src + o * widths[i], src + (o + 1) * widths[i], out.data() + o * row + offset);
    offset += widths[i];
  }
  return make_op<Scalar>("concat", std::move(out), parts, [=](Node<Scalar>& n) {
    Index off = 0;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = *n.parents[i];
      if (p.requires_grad) {
        Scalar* dst = p.grad_buffer().data();
        for (Index o = 0; o < outer; ++o)
          for (Index j = 0; j < widths[i]; ++j) dst[o * widths[i] + j] += n.grad[o * row + off + j];
      }
      off += widths[i];
    }
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape new_shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(new_shape));
  return make_op<Scalar>("reshape", std::move(out), {x}, [](Node<Scalar>& n) {
    n.parents[0]->grad_buffer().array() += n.grad.array();
  });
}

/// Row-wise softmax of a [batch,K] tensor.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [batch,K]");
  Tensor<Scalar> out(logits.shape());
  auto o = out.matrix();
  const auto z = logits.matrix();
  for (Index r = 0; r < z.rows(); ++r) {
    const Scalar m = z.row(r).maxCoeff();
    o.row(r) = (z.row(r).array() - m).exp().matrix();
    o.row(r) /= o.row(r).sum();
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, std::span<const Index> labels) {
  const auto& ls = logits.shape();
  if (ls.size() != 2) throw ShapeError("softmax_cross_entropy expects [batch,K] logits");
  const Index batch = ls[0], classes = ls[1];
  if (classes < 2) throw ShapeError("softmax_cross_entropy needs at least 2 classes");
  if (static_cast<Index>(labels.size()) != batch)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(batch));
  for (Index y : labels)
    if (y < 0 || y >= classes)
      throw LabelError("label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");

  const auto z = logits.value().matrix();
  Scalar total = 0;
  for (Index r = 0; r < batch; ++r) {
    const Scalar m = z.row(r).maxCoeff();
    const Scalar lse = m + std::log((z.row(r).array() - m).exp().sum());
    total += lse - z(r, labels[r]);
  }
  std::vector<Index> y(labels.begin(), labels.end());
  return make_op<Scalar>("softmax_cross_entropy", Tensor<Scalar>::scalar(total / Scalar(batch)), {logits},
                         [y = std::move(y)](Node<Scalar>& n) {
                           auto& p = *n.parents[0];
                           Tensor<Scalar> d = softmax(p.value);
                           auto dm = d.matrix();
                           for (Index r = 0; r < dm.rows(); ++r) dm(r, y[r]) -= Scalar(1);
                           p.grad_buffer().array() += d.array() * (n.grad[0] / Scalar(dm.rows()));
                         });
}

/// Squared L2 distance per sample (sum over all non-batch axes), averaged over the batch.
template <typename Scalar>
Var<Scalar> mse_pixel_loss(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "mse_pixel_loss");
  const Index batch = a.shape()[0];
  const Scalar loss = (a.value().array() - b.value().array()).square().sum() / Scalar(batch);
  return make_op<Scalar>("mse_pixel_loss", Tensor<Scalar>::scalar(loss), {a, b}, [batch](Node<Scalar>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const Scalar k = Scalar(2) * n.grad[0] / Scalar(batch);
    if (pa.requires_grad) pa.grad_buffer().array() += k * (pa.value.array() - pb.value.array());
    if (pb.requires_grad) pb.grad_buffer().array() -= k * (pa.value.array() - pb.value.array());
  });
}

}  // namespace gcn
