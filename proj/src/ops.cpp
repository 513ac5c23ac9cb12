#include "swintempo/ops.hpp"

#include "swintempo/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace swintempo::ops {

namespace {

thread_local ActivationPattern* g_active_pattern = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using detail::Node;

// Gradient buffer of parent `i`, or null when that input takes no gradient.
double* parent_grad(Node& self, std::size_t i) {
    auto& parent = self.parents[i];
    if (!parent || !parent->requires_grad) {
        return nullptr;
    }
    parent->ensure_grad();
    return parent->grad.data();
}

const double* parent_value(Node& self, std::size_t i) { return self.parents[i]->value.data(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                              shape_str(t.shape()));
    }
}

template <class Forward, class Derivative>
Tensor unary(const Tensor& a, Forward f, Derivative df) {
    const auto in = a.values();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = f(in[i]);
    }
    return make_op_result(a.shape(), std::move(out), {a}, [df](Node& self) {
        double* ga = parent_grad(self, 0);
        if (!ga) {
            return;
        }
        const double* x = parent_value(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i] * df(x[i], self.value[i]);
        }
    });
}

// Rows of `cols` are (ci, ky, kx); columns are output pixels.
void im2col(const double* x, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t pad, double* cols) {
    const std::size_t hw = height * width;
    const auto h = static_cast<std::ptrdiff_t>(height);
    const auto w = static_cast<std::ptrdiff_t>(width);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
                double* row = cols + ((c * kernel + ky) * kernel + kx) * hw;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
                for (std::ptrdiff_t y = 0; y < h; ++y) {
                    double* dst = row + y * w;
                    const std::ptrdiff_t sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<std::ptrdiff_t>(c) * h + sy) * w;
                    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
                    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(w, w - dx);
                    std::fill(dst, dst + x0, 0.0);
                    for (std::ptrdiff_t xx = x0; xx < x1; ++xx) {
                        dst[xx] = src[xx + dx];
                    }
                    std::fill(dst + std::max(x0, x1), dst + w, 0.0);
                }
            }
        }
    }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kernel, std::size_t pad, double* x) {
    const std::size_t hw = height * width;
    const auto h = static_cast<std::ptrdiff_t>(height);
    const auto w = static_cast<std::ptrdiff_t>(width);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
                const double* row = cols + ((c * kernel + ky) * kernel + kx) * hw;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
                for (std::ptrdiff_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        continue;
                    }
                    const double* src = row + y * w;
                    double* dst = x + (static_cast<std::ptrdiff_t>(c) * h + sy) * w;
                    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
                    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(w, w - dx);
                    for (std::ptrdiff_t xx = x0; xx < x1; ++xx) {
                        dst[xx + dx] += src[xx];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto x = a.values();
    const auto y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (double* g = parent_grad(self, p)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto x = a.values();
    const auto y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] - y[i];
    }
    return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (double* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (double* g = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto x = a.values();
    const auto y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const double* xv = parent_value(self, 0);
        const double* yv = parent_value(self, 1);
        if (double* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * yv[i];
            }
        }
        if (double* g = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * xv[i];
            }
        }
    });
}

Tensor affine(const Tensor& a, double scale, double shift) {
    return unary(
        a, [scale, shift](double x) { return scale * x + shift; },
        [scale](double, double) { return scale; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0.0) {
                return 1.0 / (1.0 + std::exp(-x));
            }
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    if (ActivationPattern* pattern = ActivationPattern::active()) {
        for (double x : a.values()) {
            pattern->mix(x > 0.0 ? 1 : 0);
        }
    }
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + x * pdf;
        });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) {
        total += v;
    }
    return make_op_result(Shape{1}, {total}, {a}, [](Node& self) {
        if (double* g = parent_grad(self, 0)) {
            const double seed = self.grad[0];
            const std::size_t n = self.parents[0]->value.size();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] += seed;
            }
        }
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.size());
    return affine(sum(a), 1.0 / n, 0.0);
}

Tensor mean_of(const std::vector<Tensor>& scalars) {
    if (scalars.empty()) {
        throw ValidationError("mean_of: empty list");
    }
    double total = 0.0;
    for (const auto& s : scalars) {
        total += s.item();
    }
    const double inv = 1.0 / static_cast<double>(scalars.size());
    return make_op_result_list(Shape{1}, {total * inv}, scalars, [inv](Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            if (double* g = parent_grad(self, p)) {
                g[0] += self.grad[0] * inv;
            }
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw ValidationError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return make_op_result(std::move(shape), std::move(out), {a}, [](Node& self) {
        if (double* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
    });
}

Tensor gather(const Tensor& a, IndexMap index, Shape out_shape) {
    if (!index || index->size() != numel(out_shape)) {
        throw ValidationError("gather: index map does not match output shape " + shape_str(out_shape));
    }
    const auto in = a.values();
    const auto& idx = *index;
    std::vector<double> out(idx.size());
    const auto limit = static_cast<std::int64_t>(in.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::int64_t j = idx[i];
        if (j >= limit) {
            throw ValidationError("gather: index out of range");
        }
        out[i] = j >= 0 ? in[static_cast<std::size_t>(j)] : 0.0;
    }
    return make_op_result(std::move(out_shape), std::move(out), {a}, [index](Node& self) {
        if (double* g = parent_grad(self, 0)) {
            const auto& map = *index;
            for (std::size_t i = 0; i < map.size(); ++i) {
                if (map[i] >= 0) {
                    g[map[i]] += self.grad[i];
                }
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "linear");
    const std::size_t in = weight.dim(1);
    const std::size_t out_features = weight.dim(0);
    if (x.rank() == 0 || x.shape().back() != in) {
        throw ValidationError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                              shape_str(weight.shape()));
    }
    if (bias.defined() && bias.size() != out_features) {
        throw ValidationError("linear: bias size mismatch");
    }
    const std::size_t rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_features;

    std::vector<double> out(rows * out_features);
    ConstMapMat X(x.values().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in));
    ConstMapMat W(weight.values().data(), static_cast<Eigen::Index>(out_features), static_cast<Eigen::Index>(in));
    MapMat Y(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_features));
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
        Eigen::Map<const Eigen::RowVectorXd> b(bias.values().data(), static_cast<Eigen::Index>(out_features));
        Y.rowwise() += b;
    }

    const auto r = static_cast<Eigen::Index>(rows);
    const auto ni = static_cast<Eigen::Index>(in);
    const auto no = static_cast<Eigen::Index>(out_features);
    return make_op_result(std::move(out_shape), std::move(out), {x, weight, bias}, [r, ni, no](Node& self) {
        ConstMapMat dY(self.grad.data(), r, no);
        if (double* gx = parent_grad(self, 0)) {
            ConstMapMat Wv(parent_value(self, 1), no, ni);
            MapMat(gx, r, ni).noalias() += dY * Wv;
        }
        if (double* gw = parent_grad(self, 1)) {
            ConstMapMat Xv(parent_value(self, 0), r, ni);
            MapMat(gw, no, ni).noalias() += dY.transpose() * Xv;
        }
        if (double* gb = parent_grad(self, 2)) {
            Eigen::Map<Eigen::RowVectorXd>(gb, no) += dY.colwise().sum();
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t channels = x.shape().back();
    if (gamma.size() != channels || beta.size() != channels) {
        throw ValidationError("layer_norm: gain/offset size mismatch for " + shape_str(x.shape()));
    }
    const std::size_t rows = x.size() / channels;
    const auto in = x.values();
    const auto g = gamma.values();
    const auto b = beta.values();
    auto normalized = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * channels;
        double mu = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            mu += row[c];
        }
        mu /= static_cast<double>(channels);
        double var = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            var += (row[c] - mu) * (row[c] - mu);
        }
        var /= static_cast<double>(channels);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t c = 0; c < channels; ++c) {
            const double xh = (row[c] - mu) * is;
            (*normalized)[r * channels + c] = xh;
            out[r * channels + c] = xh * g[c] + b[c];
        }
    }
    return make_op_result(x.shape(), std::move(out), {x, gamma, beta},
                          [normalized, inv_std, rows, channels](Node& self) {
                              const double* gv = parent_value(self, 1);
                              double* gx = parent_grad(self, 0);
                              double* gg = parent_grad(self, 1);
                              double* gb = parent_grad(self, 2);
                              const double n = static_cast<double>(channels);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const double* dy = self.grad.data() + r * channels;
                                  const double* xh = normalized->data() + r * channels;
                                  if (gg || gb) {
                                      for (std::size_t c = 0; c < channels; ++c) {
                                          if (gg) {
                                              gg[c] += dy[c] * xh[c];
                                          }
                                          if (gb) {
                                              gb[c] += dy[c];
                                          }
                                      }
                                  }
                                  if (gx) {
                                      double sum_d = 0.0;
                                      double sum_dx = 0.0;
                                      for (std::size_t c = 0; c < channels; ++c) {
                                          const double d = dy[c] * gv[c];
                                          sum_d += d;
                                          sum_dx += d * xh[c];
                                      }
                                      const double is = (*inv_std)[r];
                                      for (std::size_t c = 0; c < channels; ++c) {
                                          const double d = dy[c] * gv[c];
                                          gx[r * channels + c] += is * (d - sum_d / n - xh[c] * sum_dx / n);
                                      }
                                  }
                              }
                          });
}

Tensor map_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 3, "map_norm");
    const std::size_t channels = x.dim(0);
    const std::size_t plane = x.dim(1) * x.dim(2);
    if (gamma.size() != channels || beta.size() != channels) {
        throw ValidationError("map_norm: gain/offset size mismatch for " + shape_str(x.shape()));
    }
    const auto in = x.values();
    const double n = static_cast<double>(in.size());
    double mu = 0.0;
    for (double v : in) {
        mu += v;
    }
    mu /= n;
    double var = 0.0;
    for (double v : in) {
        var += (v - mu) * (v - mu);
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    auto normalized = std::make_shared<std::vector<double>>(in.size());
    std::vector<double> out(in.size());
    const auto g = gamma.values();
    const auto b = beta.values();
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
            const double xh = (in[i] - mu) * is;
            (*normalized)[i] = xh;
            out[i] = xh * g[c] + b[c];
        }
    }
    return make_op_result(x.shape(), std::move(out), {x, gamma, beta},
                          [normalized, is, channels, plane, n](Node& self) {
                              const double* gv = parent_value(self, 1);
                              const double* xh = normalized->data();
                              const double* dy = self.grad.data();
                              if (double* gg = parent_grad(self, 1)) {
                                  for (std::size_t c = 0; c < channels; ++c) {
                                      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
                                          gg[c] += dy[i] * xh[i];
                                      }
                                  }
                              }
                              if (double* gb = parent_grad(self, 2)) {
                                  for (std::size_t c = 0; c < channels; ++c) {
                                      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
                                          gb[c] += dy[i];
                                      }
                                  }
                              }
                              if (double* gx = parent_grad(self, 0)) {
                                  double sum_d = 0.0;
                                  double sum_dx = 0.0;
                                  for (std::size_t c = 0; c < channels; ++c) {
                                      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
                                          const double d = dy[i] * gv[c];
                                          sum_d += d;
                                          sum_dx += d * xh[i];
                                      }
                                  }
                                  for (std::size_t c = 0; c < channels; ++c) {
                                      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
                                          const double d = dy[i] * gv[c];
                                          gx[i] += is * (d - sum_d / n - xh[i] * sum_dx / n);
                                      }
                                  }
                              }
                          });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad) {
    require_rank(x, 3, "conv2d");
    require_rank(weight, 4, "conv2d");
    const std::size_t cin = x.dim(0);
    const std::size_t height = x.dim(1);
    const std::size_t width = x.dim(2);
    const std::size_t cout = weight.dim(0);
    const std::size_t kernel = weight.dim(2);
    if (weight.dim(1) != cin || weight.dim(3) != kernel) {
        throw ValidationError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                              shape_str(x.shape()));
    }
    if (2 * pad + 1 != kernel) {
        throw ValidationError("conv2d: only size-preserving padding is supported");
    }
    if (bias.defined() && bias.size() != cout) {
        throw ValidationError("conv2d: bias size mismatch");
    }
    const std::size_t hw = height * width;
    const std::size_t patch = cin * kernel * kernel;
    const auto p = static_cast<Eigen::Index>(patch);
    const auto n = static_cast<Eigen::Index>(hw);
    const auto co = static_cast<Eigen::Index>(cout);

    std::vector<double> out(cout * hw);
    ConstMapMat Wm(weight.values().data(), co, p);
    MapMat Y(out.data(), co, n);
    if (kernel == 1) {
        Y.noalias() = Wm * ConstMapMat(x.values().data(), p, n);
    } else {
        std::vector<double> cols(patch * hw);
        im2col(x.values().data(), cin, height, width, kernel, pad, cols.data());
        Y.noalias() = Wm * ConstMapMat(cols.data(), p, n);
    }
    if (bias.defined()) {
        Eigen::Map<const Eigen::VectorXd> b(bias.values().data(), co);
        Y.colwise() += b;
    }

    return make_op_result(Shape{cout, height, width}, std::move(out), {x, weight, bias},
                          [=](Node& self) {
                              ConstMapMat dY(self.grad.data(), co, n);
                              double* gx = parent_grad(self, 0);
                              double* gw = parent_grad(self, 1);
                              if (double* gb = parent_grad(self, 2)) {
                                  Eigen::Map<Eigen::VectorXd>(gb, co) += dY.rowwise().sum();
                              }
                              if (!gx && !gw) {
                                  return;
                              }
                              const double* xv = parent_value(self, 0);
                              if (kernel == 1) {
                                  if (gw) {
                                      MapMat(gw, co, p).noalias() += dY * ConstMapMat(xv, p, n).transpose();
                                  }
                                  if (gx) {
                                      ConstMapMat Wv(parent_value(self, 1), co, p);
                                      MapMat(gx, p, n).noalias() += Wv.transpose() * dY;
                                  }
                                  return;
                              }
                              std::vector<double> cols(patch * hw);
                              if (gw) {
                                  im2col(xv, cin, height, width, kernel, pad, cols.data());
                                  MapMat(gw, co, p).noalias() += dY * ConstMapMat(cols.data(), p, n).transpose();
                              }
                              if (gx) {
                                  ConstMapMat Wv(parent_value(self, 1), co, p);
                                  MapMat(cols.data(), p, n).noalias() = Wv.transpose() * dY;
                                  col2im_add(cols.data(), cin, height, width, kernel, pad, gx);
                              }
                          });
}

Tensor conv_transpose2x(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 3, "conv_transpose2x");
    require_rank(weight, 4, "conv_transpose2x");
    const std::size_t cin = x.dim(0);
    const std::size_t height = x.dim(1);
    const std::size_t width = x.dim(2);
    if (weight.dim(0) != cin || weight.dim(2) != 3 || weight.dim(3) != 3) {
        throw ValidationError("conv_transpose2x: weight " + shape_str(weight.shape()) +
                              " incompatible with input " + shape_str(x.shape()));
    }
    const std::size_t cout = weight.dim(1);
    if (bias.defined() && bias.size() != cout) {
        throw ValidationError("conv_transpose2x: bias size mismatch");
    }
    const std::size_t out_h = 2 * height;
    const std::size_t out_w = 2 * width;
    const std::size_t hw = height * width;
    const auto ci = static_cast<Eigen::Index>(cin);
    const auto taps = static_cast<Eigen::Index>(cout * 9);
    const auto n = static_cast<Eigen::Index>(hw);

    // cols[(co, ky, kx), (iy, ix)] is the contribution to out[co, 2iy - 1 + ky, 2ix - 1 + kx].
    std::vector<double> cols(cout * 9 * hw);
    MapMat(cols.data(), taps, n).noalias() =
        ConstMapMat(weight.values().data(), ci, taps).transpose() * ConstMapMat(x.values().data(), ci, n);

    std::vector<double> out(cout * out_h * out_w, 0.0);
    const auto for_each_tap = [=](auto&& visit) {
        for (std::size_t c = 0; c < cout; ++c) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const std::size_t row = (c * 3 + ky) * 3 + kx;
                    for (std::size_t iy = 0; iy < height; ++iy) {
                        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(2 * iy + ky) - 1;
                        if (oy < 0) {
                            continue;
                        }
                        for (std::size_t ix = 0; ix < width; ++ix) {
                            const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(2 * ix + kx) - 1;
                            if (ox < 0) {
                                continue;
                            }
                            visit(row * hw + iy * width + ix,
                                  (c * out_h + static_cast<std::size_t>(oy)) * out_w + static_cast<std::size_t>(ox));
                        }
                    }
                }
            }
        }
    };
    for_each_tap([&](std::size_t col_index, std::size_t out_index) { out[out_index] += cols[col_index]; });
    if (bias.defined()) {
        const auto b = bias.values();
        for (std::size_t c = 0; c < cout; ++c) {
            for (std::size_t i = 0; i < out_h * out_w; ++i) {
                out[c * out_h * out_w + i] += b[c];
            }
        }
    }

    return make_op_result(Shape{cout, out_h, out_w}, std::move(out), {x, weight, bias}, [=](Node& self) {
        if (double* gb = parent_grad(self, 2)) {
            for (std::size_t c = 0; c < cout; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < out_h * out_w; ++i) {
                    acc += self.grad[c * out_h * out_w + i];
                }
                gb[c] += acc;
            }
        }
        double* gx = parent_grad(self, 0);
        double* gw = parent_grad(self, 1);
        if (!gx && !gw) {
            return;
        }
        std::vector<double> dcols(cout * 9 * hw, 0.0);
        for_each_tap([&](std::size_t col_index, std::size_t out_index) { dcols[col_index] = self.grad[out_index]; });
        ConstMapMat dC(dcols.data(), taps, n);
        if (gx) {
            MapMat(gx, ci, n).noalias() += ConstMapMat(parent_value(self, 1), ci, taps) * dC;
        }
        if (gw) {
            MapMat(gw, ci, taps).noalias() += ConstMapMat(parent_value(self, 0), ci, n) * dC.transpose();
        }
    });
}

Tensor max_pool2(const Tensor& x) {
    require_rank(x, 3, "max_pool2");
    const std::size_t channels = x.dim(0);
    const std::size_t height = x.dim(1);
    const std::size_t width = x.dim(2);
    if (height % 2 != 0 || width % 2 != 0) {
        throw ValidationError("max_pool2: spatial size must be even, got " + shape_str(x.shape()));
    }
    const std::size_t oh = height / 2;
    const std::size_t ow = width / 2;
    const auto in = x.values();
    auto argmax = std::make_shared<std::vector<std::size_t>>(channels * oh * ow);
    std::vector<double> out(channels * oh * ow);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
                std::size_t best = (c * height + 2 * y) * width + 2 * xx;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t i = (c * height + 2 * y + dy) * width + 2 * xx + dx;
                        if (in[i] > in[best]) {
                            best = i;
                        }
                    }
                }
                const std::size_t o = (c * oh + y) * ow + xx;
                out[o] = in[best];
                (*argmax)[o] = best;
            }
        }
    }
    if (ActivationPattern* pattern = ActivationPattern::active()) {
        for (std::size_t i : *argmax) {
            pattern->mix(i);
        }
    }
    return make_op_result(Shape{channels, oh, ow}, std::move(out), {x}, [argmax](Node& self) {
        if (double* g = parent_grad(self, 0)) {
            for (std::size_t o = 0; o < self.grad.size(); ++o) {
                g[(*argmax)[o]] += self.grad[o];
            }
        }
    });
}

Tensor concat0(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ValidationError("concat0: nothing to concatenate");
    }
    Shape shape = parts.front().shape();
    std::size_t leading = 0;
    for (const auto& t : parts) {
        Shape tail_a(shape.begin() + 1, shape.end());
        Shape tail_b(t.shape().begin() + 1, t.shape().end());
        if (t.rank() != shape.size() || tail_a != tail_b) {
            throw ValidationError("concat0: trailing shape mismatch " + shape_str(shape) + " vs " +
                                  shape_str(t.shape()));
        }
        leading += t.dim(0);
    }
    shape[0] = leading;
    std::vector<double> out;
    out.reserve(numel(shape));
    std::vector<std::size_t> offsets;
    for (const auto& t : parts) {
        offsets.push_back(out.size());
        out.insert(out.end(), t.values().begin(), t.values().end());
    }
    return make_op_result_list(std::move(shape), std::move(out), parts, [offsets](Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            if (double* g = parent_grad(self, p)) {
                const std::size_t n = self.parents[p]->value.size();
                for (std::size_t i = 0; i < n; ++i) {
                    g[i] += self.grad[offsets[p] + i];
                }
            }
        }
    });
}

Tensor window_attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias,
                             std::shared_ptr<const std::vector<double>> mask, std::size_t heads, double scale,
                             std::vector<double>* probabilities) {
    require_rank(q, 3, "window_attention_core");
    require_same_shape(q, k, "window_attention_core");
    require_same_shape(q, v, "window_attention_core");
    const std::size_t batch = q.dim(0);
    const std::size_t tokens = q.dim(1);
    const std::size_t depth = q.dim(2);
    if (heads == 0 || batch % heads != 0) {
        throw ValidationError("window_attention_core: batch not divisible by head count");
    }
    const std::size_t windows = batch / heads;
    const std::size_t tt = tokens * tokens;
    if (bias.defined() && bias.size() != heads * tt) {
        throw ValidationError("window_attention_core: bias must be [heads, T, T]");
    }
    if (mask && mask->size() != windows * tt) {
        throw ValidationError("window_attention_core: mask must be [windows, T, T]");
    }
    const auto T = static_cast<Eigen::Index>(tokens);
    const auto D = static_cast<Eigen::Index>(depth);

    auto probs = std::make_shared<std::vector<double>>(batch * tt);
    std::vector<double> out(batch * tokens * depth);
    const double* qv = q.values().data();
    const double* kv = k.values().data();
    const double* vv = v.values().data();
    const double* bv = bias.defined() ? bias.values().data() : nullptr;
    RowMat logits(T, T);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t w = b / heads;
        const std::size_t h = b % heads;
        ConstMapMat Q(qv + b * tokens * depth, T, D);
        ConstMapMat K(kv + b * tokens * depth, T, D);
        ConstMapMat V(vv + b * tokens * depth, T, D);
        logits.noalias() = scale * (Q * K.transpose());
        if (bv) {
            logits += ConstMapMat(bv + h * tt, T, T);
        }
        if (mask) {
            logits += ConstMapMat(mask->data() + w * tt, T, T);
        }
        MapMat P(probs->data() + b * tt, T, T);
        for (Eigen::Index i = 0; i < T; ++i) {
            const double peak = logits.row(i).maxCoeff();
            double total = 0.0;
            for (Eigen::Index j = 0; j < T; ++j) {
                const double e = std::isinf(logits(i, j)) ? 0.0 : std::exp(logits(i, j) - peak);
                P(i, j) = e;
                total += e;
            }
            P.row(i) /= total;
        }
        MapMat(out.data() + b * tokens * depth, T, D).noalias() = P * V;
    }
    if (probabilities) {
        *probabilities = *probs;
    }

    return make_op_result(q.shape(), std::move(out), {q, k, v, bias}, [=](Node& self) {
        double* gq = parent_grad(self, 0);
        double* gk = parent_grad(self, 1);
        double* gv = parent_grad(self, 2);
        double* gbias = parent_grad(self, 3);
        const double* qv2 = parent_value(self, 0);
        const double* kv2 = parent_value(self, 1);
        const double* vv2 = parent_value(self, 2);
        RowMat dP(T, T);
        RowMat dS(T, T);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t h = b % heads;
            const std::size_t off = b * tokens * depth;
            ConstMapMat dO(self.grad.data() + off, T, D);
            ConstMapMat P(probs->data() + b * tt, T, T);
            if (gv) {
                MapMat(gv + off, T, D).noalias() += P.transpose() * dO;
            }
            if (!gq && !gk && !gbias) {
                continue;
            }
            dP.noalias() = dO * ConstMapMat(vv2 + off, T, D).transpose();
            for (Eigen::Index i = 0; i < T; ++i) {
                const double inner = dP.row(i).dot(P.row(i));
                dS.row(i) = P.row(i).cwiseProduct(dP.row(i).array().matrix() -
                                                  Eigen::RowVectorXd::Constant(T, inner));
            }
            if (gq) {
                MapMat(gq + off, T, D).noalias() += scale * (dS * ConstMapMat(kv2 + off, T, D));
            }
            if (gk) {
                MapMat(gk + off, T, D).noalias() += scale * (dS.transpose() * ConstMapMat(qv2 + off, T, D));
            }
            if (gbias) {
                MapMat(gbias + h * tt, T, T) += dS;
            }
        }
    });
}

Tensor bce_loss(const Tensor& pred, std::shared_ptr<const std::vector<double>> target, double eps) {
    if (!target || target->size() != pred.size()) {
        throw ValidationError("bce_loss: prediction/target shape mismatch");
    }
    const auto p = pred.values();
    const auto& y = *target;
    if (ActivationPattern* pattern = ActivationPattern::active()) {
        for (double v : p) {
            pattern->mix(v <= eps ? 1 : (v >= 1.0 - eps ? 2 : 0));
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = std::clamp(p[i], eps, 1.0 - eps);
        total -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
    }
    const double n = static_cast<double>(p.size());
    return make_op_result(Shape{1}, {total / n}, {pred}, [target, eps, n](Node& self) {
        if (double* g = parent_grad(self, 0)) {
            const double* pv = parent_value(self, 0);
            const auto& yv = *target;
            const double seed = self.grad[0] / n;
            for (std::size_t i = 0; i < yv.size(); ++i) {
                if (pv[i] <= eps || pv[i] >= 1.0 - eps) {
                    continue;  // clamped region is flat
                }
                g[i] += seed * (-yv[i] / pv[i] + (1.0 - yv[i]) / (1.0 - pv[i]));
            }
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, std::shared_ptr<const std::vector<double>> target) {
    if (!target || target->size() != logits.size()) {
        throw ValidationError("bce_with_logits: logit/target shape mismatch");
    }
    const auto x = logits.values();
    const auto& y = *target;
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        total += std::max(x[i], 0.0) - x[i] * y[i] + std::log1p(std::exp(-std::abs(x[i])));
    }
    const double n = static_cast<double>(x.size());
    return make_op_result(Shape{1}, {total / n}, {logits}, [target, n](Node& self) {
        if (double* g = parent_grad(self, 0)) {
            const double* xv = parent_value(self, 0);
            const auto& yv = *target;
            const double seed = self.grad[0] / n;
            for (std::size_t i = 0; i < yv.size(); ++i) {
                const double s = xv[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-xv[i]))
                                              : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
                g[i] += seed * (s - yv[i]);
            }
        }
    });
}

ActivationPattern::ActivationPattern() : previous_(g_active_pattern) { g_active_pattern = this; }

ActivationPattern::~ActivationPattern() { g_active_pattern = previous_; }

ActivationPattern* ActivationPattern::active() { return g_active_pattern; }

}  // namespace swintempo::ops
