// SPDX-License-Identifier: Apache-2.0

#include "hsd/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hsd {
namespace ops {

namespace {

using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail + " (input shape " + a.shape_str() +
                              ")");
}

bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void mark_and_record(Tensor& out, std::function<void()> backward_step) {
  out.set_requires_grad(true);
  Tape::active()->record(std::move(backward_step));
}

/// axis -> (outer, n, inner) decomposition of a row-major layout.
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Tensor& x, int axis, const char* op) {
  const auto& shape = x.shape();
  if (axis < 0) axis += static_cast<int>(shape.size());
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    shape_error(op, x, "axis " + std::to_string(axis) + " out of range");
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<std::int64_t> shape_without_axis(const Tensor& x, int axis) {
  const auto& shape = x.shape();
  if (axis < 0) axis += static_cast<int>(shape.size());
  std::vector<std::int64_t> out;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// Gathers k x k patches around every output pixel of one image into a
// (C*k*k) x (OH*OW) column matrix. Out-of-range taps read as zero.
void im2col(std::span<const double> image, std::int64_t channels, std::int64_t height,
            std::int64_t width, int k, int padding, std::int64_t out_h, std::int64_t out_w,
            detail::AlignedBuffer& columns) {
  const std::int64_t cols = out_h * out_w;
  std::size_t row = 0;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = columns.data() + row * cols;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t iy = oy + ky - padding;
          if (iy < 0 || iy >= height) {
            std::fill(dst + oy * out_w, dst + (oy + 1) * out_w, 0.0);
            continue;
          }
          const double* src = image.data() + (c * height + iy) * width;
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const std::int64_t ix = ox + kx - padding;
            dst[oy * out_w + ox] = (ix < 0 || ix >= width) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

// Scatter-adds a (C*k*k) x (OH*OW) column matrix back into one image.
void col2im_add(const detail::AlignedBuffer& columns, std::int64_t channels, std::int64_t height,
                std::int64_t width, int k, int padding, std::int64_t out_h, std::int64_t out_w,
                std::span<double> image) {
  const std::int64_t cols = out_h * out_w;
  std::size_t row = 0;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = columns.data() + row * cols;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t iy = oy + ky - padding;
          if (iy < 0 || iy >= height) continue;
          double* dst = image.data() + (c * height + iy) * width;
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const std::int64_t ix = ox + kx - padding;
            if (ix >= 0 && ix < width) dst[ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a, b);
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  {
    ConstMatrixMap am(a.values().data(), m, k), bm(b.values().data(), k, n);
    MatrixMap om(out.values().data(), m, n);
    om.noalias() = am * bm;
  }
  if (tracing({&a, &b})) {
    Tensor as = a, bs = b, os = out;
    mark_and_record(out, [as, bs, os]() mutable {
      if (!os.has_grad()) return;
      const std::int64_t m = as.dim(0), k = as.dim(1), n = bs.dim(1);
      ConstMatrixMap go(os.grad().data(), m, n);
      if (as.requires_grad()) {
        ConstMatrixMap bm(bs.values().data(), k, n);
        MatrixMap ga(as.grad().data(), m, k);
        ga.noalias() += go * bm.transpose();
      }
      if (bs.requires_grad()) {
        ConstMatrixMap am(as.values().data(), m, k);
        MatrixMap gb(bs.grad().data(), k, n);
        gb.noalias() += am.transpose() * go;
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) shape_error("linear", x, w);
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) shape_error("linear", w, b);
  const std::int64_t batch = x.dim(0), in = x.dim(1), out_features = w.dim(0);
  Tensor out({batch, out_features});
  {
    ConstMatrixMap xm(x.values().data(), batch, in), wm(w.values().data(), out_features, in);
    MatrixMap om(out.values().data(), batch, out_features);
    om.noalias() = xm * wm.transpose();
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), out_features);
  }
  if (tracing({&x, &w, &b})) {
    Tensor xs = x, ws = w, bs = b, os = out;
    mark_and_record(out, [xs, ws, bs, os]() mutable {
      if (!os.has_grad()) return;
      const std::int64_t batch = xs.dim(0), in = xs.dim(1), out_features = ws.dim(0);
      ConstMatrixMap go(os.grad().data(), batch, out_features);
      if (xs.requires_grad()) {
        ConstMatrixMap wm(ws.values().data(), out_features, in);
        MatrixMap gx(xs.grad().data(), batch, in);
        gx.noalias() += go * wm;
      }
      if (ws.requires_grad()) {
        ConstMatrixMap xm(xs.values().data(), batch, in);
        MatrixMap gw(ws.grad().data(), out_features, in);
        gw.noalias() += go.transpose() * xm;
      }
      if (bs.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXd> gb(bs.grad().data(), out_features);
        gb += go.colwise().sum();
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, int padding) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(2) != w.dim(3) || x.dim(1) != w.dim(1)) {
    shape_error("conv2d", x, w);
  }
  if (padding < 0) shape_error("conv2d", x, "negative padding");
  const std::int64_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), width = x.dim(3);
  const std::int64_t cout = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  const std::int64_t out_h = h + 2 * padding - k + 1;
  const std::int64_t out_w = width + 2 * padding - k + 1;
  if (out_h <= 0 || out_w <= 0) shape_error("conv2d", x, "kernel larger than padded input");

  const std::int64_t patch = cin * k * k, cols = out_h * out_w;
  Tensor out({batch, cout, out_h, out_w});
  {
    detail::AlignedBuffer columns(static_cast<std::size_t>(patch * cols));
    ConstMatrixMap wm(w.values().data(), cout, patch);
    for (std::int64_t b = 0; b < batch; ++b) {
      im2col(x.values().subspan(b * cin * h * width, cin * h * width), cin, h, width, k, padding,
             out_h, out_w, columns);
      ConstMatrixMap pm(columns.data(), patch, cols);
      MatrixMap om(out.values().data() + b * cout * cols, cout, cols);
      om.noalias() = wm * pm;
    }
  }
  if (tracing({&x, &w})) {
    Tensor xs = x, ws = w, os = out;
    mark_and_record(out, [xs, ws, os, padding, k]() mutable {
      if (!os.has_grad()) return;
      const std::int64_t batch = xs.dim(0), cin = xs.dim(1), h = xs.dim(2), width = xs.dim(3);
      const std::int64_t cout = ws.dim(0);
      const std::int64_t out_h = os.dim(2), out_w = os.dim(3);
      const std::int64_t patch = cin * k * k, cols = out_h * out_w;
      // Patches are rebuilt here instead of being saved from the forward
      // pass; memory stays O(one image) at the cost of a second im2col.
      detail::AlignedBuffer columns(static_cast<std::size_t>(patch * cols));
      ConstMatrixMap wm(ws.values().data(), cout, patch);
      const bool need_x = xs.requires_grad();
      const bool need_w = ws.requires_grad();
      MatrixMap gw(need_w ? ws.grad().data() : nullptr, need_w ? cout : 0, need_w ? patch : 0);
      for (std::int64_t b = 0; b < batch; ++b) {
        ConstMatrixMap go(os.grad().data() + b * cout * cols, cout, cols);
        if (need_w) {
          im2col(xs.values().subspan(b * cin * h * width, cin * h * width), cin, h, width, k,
                 padding, out_h, out_w, columns);
          ConstMatrixMap pm(columns.data(), patch, cols);
          gw.noalias() += go * pm.transpose();
        }
        if (need_x) {
          MatrixMap gp(columns.data(), patch, cols);
          gp.noalias() = wm.transpose() * go;
          col2im_add(columns, cin, h, width, k, padding, out_h, out_w,
                     xs.grad().subspan(b * cin * h * width, cin * h * width));
        }
      }
    });
  }
  return out;
}

Tensor bias_add(const Tensor& x, const Tensor& bias, int axis) {
  if (bias.rank() != 1) shape_error("bias_add", x, bias);
  const AxisSplit s = split_axis(x, axis, "bias_add");
  if (bias.dim(0) != s.n) shape_error("bias_add", x, bias);
  Tensor out = x.clone();
  {
    auto ov = out.values();
    auto bv = bias.values();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t i = 0; i < s.n; ++i) {
        double* row = ov.data() + (o * s.n + i) * s.inner;
        const double b = bv[i];
        for (std::int64_t j = 0; j < s.inner; ++j) row[j] += b;
      }
    }
  }
  if (tracing({&x, &bias})) {
    Tensor xs = x, bs = bias, os = out;
    mark_and_record(out, [xs, bs, os, s]() mutable {
      if (!os.has_grad()) return;
      auto go = os.grad();
      if (xs.requires_grad()) detail::accumulate_grad(xs, go);
      if (bs.requires_grad()) {
        auto gb = bs.grad();
        for (std::int64_t o = 0; o < s.outer; ++o) {
          for (std::int64_t i = 0; i < s.n; ++i) {
            const double* row = go.data() + (o * s.n + i) * s.inner;
            double acc = 0.0;
            for (std::int64_t j = 0; j < s.inner; ++j) acc += row[j];
            gb[i] += acc;
          }
        }
      }
    });
  }
  return out;
}

Tensor avgpool2d(const Tensor& x, int k) {
  if (x.rank() != 4) shape_error("avgpool2d", x, "expected rank-4 input");
  if (k < 1 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
    shape_error("avgpool2d", x, "spatial dims must divide window " + std::to_string(k));
  }
  const std::int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = h / k, ow = w / k;
  const double inv = 1.0 / (k * k);
  Tensor out({batch, c, oh, ow});
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::int64_t bc = 0; bc < batch * c; ++bc) {
      const double* plane = xv.data() + bc * h * w;
      double* oplane = ov.data() + bc * oh * ow;
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int dy = 0; dy < k; ++dy) {
            const double* row = plane + (oy * k + dy) * w + ox * k;
            for (int dx = 0; dx < k; ++dx) acc += row[dx];
          }
          oplane[oy * ow + ox] = acc * inv;
        }
      }
    }
  }
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os, k, inv]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      const std::int64_t batch = xs.dim(0), c = xs.dim(1), h = xs.dim(2), w = xs.dim(3);
      const std::int64_t oh = h / k, ow = w / k;
      auto gx = xs.grad();
      auto go = os.grad();
      for (std::int64_t bc = 0; bc < batch * c; ++bc) {
        double* gplane = gx.data() + bc * h * w;
        const double* goplane = go.data() + bc * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const double g = goplane[oy * ow + ox] * inv;
            for (int dy = 0; dy < k; ++dy) {
              double* row = gplane + (oy * k + dy) * w + ox * k;
              for (int dx = 0; dx < k; ++dx) row[dx] += g;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a, b);
  Tensor out(a.shape());
  {
    auto av = a.values(), bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  }
  if (tracing({&a, &b})) {
    Tensor as = a, bs = b, os = out;
    mark_and_record(out, [as, bs, os]() mutable {
      if (!os.has_grad()) return;
      auto go = os.grad();
      if (as.requires_grad()) detail::accumulate_grad(as, go);
      if (bs.requires_grad()) detail::accumulate_grad(bs, go);
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  Tensor out(a.shape());
  {
    auto av = a.values(), bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  }
  if (tracing({&a, &b})) {
    Tensor as = a, bs = b, os = out;
    mark_and_record(out, [as, bs, os]() mutable {
      if (!os.has_grad()) return;
      auto go = os.grad();
      if (as.requires_grad()) {
        auto ga = as.grad();
        auto bv = bs.values();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (bs.requires_grad()) {
        auto gb = bs.grad();
        auto av = as.values();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape());
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * c;
  }
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os, c]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      auto go = os.grad();
      auto gx = xs.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * c;
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  }
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      auto go = os.grad();
      auto gx = xs.grad();
      auto xv = xs.values();
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += go[i];
      }
    });
  }
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out(x.shape());
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(xv[i]);
  }
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      auto go = os.grad();
      auto gx = xs.grad();
      auto xv = xs.values();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / xv[i];
    });
  }
  return out;
}

Tensor clamp_min(const Tensor& x, double floor) {
  Tensor out(x.shape());
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > floor ? xv[i] : floor;
  }
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os, floor]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      auto go = os.grad();
      auto gx = xs.grad();
      auto xv = xs.values();
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (xv[i] > floor) gx[i] += go[i];
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x, axis, "softmax");
  Tensor out(x.shape());
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t j = 0; j < s.inner; ++j) {
        const std::size_t base = o * s.n * s.inner + j;
        double hi = -1e300;
        for (std::int64_t i = 0; i < s.n; ++i) hi = std::max(hi, xv[base + i * s.inner]);
        double z = 0.0;
        for (std::int64_t i = 0; i < s.n; ++i) {
          const double e = std::exp(xv[base + i * s.inner] - hi);
          ov[base + i * s.inner] = e;
          z += e;
        }
        for (std::int64_t i = 0; i < s.n; ++i) ov[base + i * s.inner] /= z;
      }
    }
  }
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os, s]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      auto go = os.grad();
      auto gx = xs.grad();
      auto p = os.values();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t j = 0; j < s.inner; ++j) {
          const std::size_t base = o * s.n * s.inner + j;
          double dot = 0.0;
          for (std::int64_t i = 0; i < s.n; ++i) {
            dot += go[base + i * s.inner] * p[base + i * s.inner];
          }
          for (std::int64_t i = 0; i < s.n; ++i) {
            const std::size_t idx = base + i * s.inner;
            gx[idx] += p[idx] * (go[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

namespace {
Tensor reduce_axis(const Tensor& x, int axis, bool take_mean, const char* op) {
  const AxisSplit s = split_axis(x, axis, op);
  const double w = take_mean ? 1.0 / static_cast<double>(s.n) : 1.0;
  Tensor out(shape_without_axis(x, axis));
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t j = 0; j < s.inner; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < s.n; ++i) acc += xv[o * s.n * s.inner + i * s.inner + j];
        ov[o * s.inner + j] = acc * w;
      }
    }
  }
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os, s, w]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      auto go = os.grad();
      auto gx = xs.grad();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t j = 0; j < s.inner; ++j) {
          const double g = go[o * s.inner + j] * w;
          for (std::int64_t i = 0; i < s.n; ++i) gx[o * s.n * s.inner + i * s.inner + j] += g;
        }
      }
    });
  }
  return out;
}
}  // namespace

Tensor mean(const Tensor& x, int axis) { return reduce_axis(x, axis, true, "mean"); }
Tensor sum(const Tensor& x, int axis) { return reduce_axis(x, axis, false, "sum"); }

Tensor sum_all(const Tensor& x) {
  Tensor out({1});
  {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    out.values()[0] = acc;
  }
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      const double g = os.grad()[0];
      auto gx = xs.grad();
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape) {
  if (detail::shape_numel(shape) != x.numel()) {
    shape_error("reshape", x, "target shape " + detail::shape_to_string(shape) +
                                  " has different element count");
  }
  Tensor out = Tensor::from_data(std::move(shape),
                                 std::vector<double>(x.values().begin(), x.values().end()));
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      detail::accumulate_grad(xs, os.grad());
    });
  }
  return out;
}

Tensor gather_labels(const Tensor& x, const std::vector<int>& labels) {
  if (x.rank() != 2 || static_cast<std::size_t>(x.dim(0)) != labels.size()) {
    shape_error("gather_labels", x, std::to_string(labels.size()) + " labels");
  }
  const std::int64_t batch = x.dim(0), classes = x.dim(1);
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      shape_error("gather_labels", x, "label " + std::to_string(label) + " out of range");
    }
  }
  Tensor out({batch});
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::int64_t b = 0; b < batch; ++b) ov[b] = xv[b * classes + labels[b]];
  }
  if (tracing({&x})) {
    Tensor xs = x, os = out;
    mark_and_record(out, [xs, os, labels]() mutable {
      if (!os.has_grad() || !xs.requires_grad()) return;
      const std::int64_t classes = xs.dim(1);
      auto go = os.grad();
      auto gx = xs.grad();
      for (std::size_t b = 0; b < labels.size(); ++b) {
        gx[static_cast<std::int64_t>(b) * classes + labels[b]] += go[b];
      }
    });
  }
  return out;
}

Tensor custom_gradient(std::vector<Tensor> inputs, const CustomForward& forward,
                       CustomBackward backward) {
  Tensor out = forward(inputs);
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (Tape::active() != nullptr && any) {
    Tensor os = out;
    mark_and_record(out, [inputs = std::move(inputs), backward = std::move(backward),
                          os]() mutable {
      if (!os.has_grad()) return;
      Tensor upstream = Tensor::from_data(os.shape(),
                                          std::vector<double>(os.grad().begin(), os.grad().end()));
      std::vector<Tensor> grads = backward(upstream, inputs, os);
      if (grads.size() != inputs.size()) {
        throw std::logic_error("custom_gradient: backward returned wrong number of gradients");
      }
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad() || !grads[i].defined()) continue;
        if (grads[i].shape() != inputs[i].shape()) {
          throw std::logic_error("custom_gradient: gradient shape " + grads[i].shape_str() +
                                 " does not match input shape " + inputs[i].shape_str());
        }
        detail::accumulate_grad(inputs[i], grads[i].values());
      }
    });
  }
  return out;
}

}  // namespace ops
}  // namespace hsd
