#include "deal/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace deal::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Flat index into b for every flat index of a; empty when shapes are equal.
std::vector<std::size_t> broadcast_map(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return {};
    if (a.size() != b.size()) {
        throw DimensionError(std::string(op) + ": rank mismatch " + shape_to_string(a) + " vs " + shape_to_string(b));
    }
    const std::size_t rank = a.size();
    std::vector<std::size_t> b_strides(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = rank; i-- > 0;) {
        if (b[i] != a[i] && b[i] != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_to_string(b) + " to " +
                                 shape_to_string(a));
        }
        b_strides[i] = (b[i] == 1 && a[i] != 1) ? 0 : stride;
        stride *= b[i];
    }
    const std::size_t n = shape_numel(a);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t offset = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        map[flat] = offset;
        for (std::size_t axis = rank; axis-- > 0;) {
            ++idx[axis];
            offset += b_strides[axis];
            if (idx[axis] < a[axis]) break;
            offset -= b_strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
    return map;
}

// Generic broadcast binary op. `fwd(x, y)` computes the value and
// `bwd(x, y, out, g, gx, gy)` returns partials scaled by upstream `g`.
template <typename Fwd, typename Bwd>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd bwd) {
    auto map = broadcast_map(a.shape(), b.shape(), op);
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    auto ad = a.data();
    auto bd = b.data();
    if (map.empty()) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[map[i]]);
    }
    return Tensor::make_result(a.shape(), std::move(out), op, {a, b},
                               [map = std::move(map), bwd](detail::Node& self) {
                                   auto& xa = *self.inputs[0];
                                   auto& xb = *self.inputs[1];
                                   const std::size_t n = self.data.size();
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const std::size_t j = map.empty() ? i : map[i];
                                       double gx = 0.0, gy = 0.0;
                                       bwd(xa.data[i], xb.data[j], self.data[i], self.grad[i], gx, gy);
                                       if (xa.requires_grad) xa.grad[i] += gx;
                                       if (xb.requires_grad) xb.grad[j] += gy;
                                   }
                               });
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Bwd bwd) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i]);
    return Tensor::make_result(a.shape(), std::move(out), op, {a}, [bwd](detail::Node& self) {
        auto& x = *self.inputs[0];
        for (std::size_t i = 0; i < self.data.size(); ++i) x.grad[i] += self.grad[i] * bwd(x.data[i], self.data[i]);
    });
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_to_string(t.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double, double g, double& gx, double& gy) {
            gx = g;
            gy = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double, double g, double& gx, double& gy) {
            gx = g;
            gy = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double x, double y, double, double g, double& gx, double& gy) {
            gx = g * y;
            gy = g * x;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double out, double g, double& gx, double& gy) {
            gx = g / y;
            gy = -g * out / y;
        });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "minimum", [](double x, double y) { return std::min(x, y); },
        [](double x, double y, double, double g, double& gx, double& gy) {
            if (x <= y) gx = g; else gy = g;
        });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "maximum", [](double x, double y) { return std::max(x, y); },
        [](double x, double y, double, double g, double& gx, double& gy) {
            if (x >= y) gx = g; else gy = g;
        });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary(a, "mul_scalar", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

static double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& a) {
    return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
    return unary(
        a, "silu", [](double x) { return x * stable_sigmoid(x); },
        [](double x, double) {
            const double s = stable_sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Tensor relu(const Tensor& a) {
    return unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
    return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
    return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a, double floor) {
    return unary(
        a, "log", [floor](double x) { return std::log(std::max(x, floor)); },
        [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Tensor abs(const Tensor& a) {
    return unary(
        a, "abs", [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
    return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
    return unary(
        a, "sqrt", [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw ArgumentError("clamp: lo > hi");
    return unary(
        a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
    auto d = a.data();
    const double total = std::accumulate(d.begin(), d.end(), 0.0);
    return Tensor::make_result({1}, {total}, "sum", {a}, [](detail::Node& self) {
        auto& x = *self.inputs[0];
        const double g = self.grad[0];
        for (auto& v : x.grad) v += g;
    });
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor add_n(std::span<const Tensor> terms) {
    if (terms.empty()) throw ArgumentError("add_n: no terms");
    const Shape& shape = terms[0].shape();
    std::vector<double> out(terms[0].numel(), 0.0);
    for (const auto& t : terms) {
        if (t.shape() != shape) throw DimensionError("add_n: shape mismatch " + shape_to_string(t.shape()));
        auto d = t.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
    }
    return Tensor::make_result(shape, std::move(out), "add_n", {terms.begin(), terms.end()}, [](detail::Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) + " as " + shape_to_string(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return Tensor::make_result(std::move(shape), std::move(out), "reshape", {a}, [](detail::Node& self) {
        auto& x = *self.inputs[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    MapMat(out.data(), n, m) = ConstMapMat(a.data().data(), m, n).transpose();
    return Tensor::make_result({n, m}, std::move(out), "transpose", {a}, [m, n](detail::Node& self) {
        auto& x = *self.inputs[0];
        MapMat(x.grad.data(), m, n) += ConstMapMat(self.grad.data(), n, m).transpose();
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()));
    }
    std::vector<double> out(m * n);
    MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
    return Tensor::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
        ConstMapMat g(self.grad.data(), m, n);
        auto& xa = *self.inputs[0];
        auto& xb = *self.inputs[1];
        if (xa.requires_grad) MapMat(xa.grad.data(), m, k).noalias() += g * ConstMapMat(xb.data.data(), k, n).transpose();
        if (xb.requires_grad) MapMat(xb.grad.data(), k, n).noalias() += ConstMapMat(xa.data.data(), m, k).transpose() * g;
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw DimensionError("matmul_nt: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()) + "^T");
    }
    std::vector<double> out(m * n);
    MapMat(out.data(), m, n).noalias() =
        ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), n, k).transpose();
    return Tensor::make_result({m, n}, std::move(out), "matmul_nt", {a, b}, [m, k, n](detail::Node& self) {
        ConstMapMat g(self.grad.data(), m, n);
        auto& xa = *self.inputs[0];
        auto& xb = *self.inputs[1];
        if (xa.requires_grad) MapMat(xa.grad.data(), m, k).noalias() += g * ConstMapMat(xb.data.data(), n, k);
        if (xb.requires_grad) MapMat(xb.grad.data(), n, k).noalias() += g.transpose() * ConstMapMat(xa.data.data(), m, k);
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ArgumentError("concat: no parts");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw ArgumentError("concat: axis out of range");
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (i != axis && p.dim(i) != first[i]) {
                throw DimensionError("concat: shape mismatch " + shape_to_string(p.shape()) + " vs " +
                                     shape_to_string(first));
            }
        }
        shape[axis] += p.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
    const std::size_t row = shape[axis] * inner;
    std::vector<double> out(shape_numel(shape));
    std::size_t col = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto d = parts[p].data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(d.begin() + o * widths[p], widths[p], out.begin() + o * row + col);
        }
        col += widths[p];
    }
    return Tensor::make_result(std::move(shape), std::move(out), "concat", {parts.begin(), parts.end()},
                               [outer, row, widths](detail::Node& self) {
                                   std::size_t col = 0;
                                   for (std::size_t p = 0; p < widths.size(); ++p) {
                                       auto& in = *self.inputs[p];
                                       if (in.requires_grad) {
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               for (std::size_t j = 0; j < widths[p]; ++j) {
                                                   in.grad[o * widths[p] + j] += self.grad[o * row + col + j];
                                               }
                                           }
                                       }
                                       col += widths[p];
                                   }
                               });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= a.rank()) throw ArgumentError("slice: axis out of range");
    if (length == 0 || start + length > a.dim(axis)) {
        throw RangeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds extent " + std::to_string(a.dim(axis)));
    }
    Shape shape = a.shape();
    shape[axis] = length;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const std::size_t src_row = a.dim(axis) * inner;
    const std::size_t dst_row = length * inner;
    const std::size_t offset = start * inner;
    std::vector<double> out(outer * dst_row);
    auto d = a.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(d.begin() + o * src_row + offset, dst_row, out.begin() + o * dst_row);
    }
    return Tensor::make_result(std::move(shape), std::move(out), "slice", {a},
                               [outer, src_row, dst_row, offset](detail::Node& self) {
                                   auto& x = *self.inputs[0];
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       for (std::size_t j = 0; j < dst_row; ++j) {
                                           x.grad[o * src_row + offset + j] += self.grad[o * dst_row + j];
                                       }
                                   }
                               });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
    require_rank(a, 2, "gather_rows");
    if (rows.empty()) throw ArgumentError("gather_rows: empty row list");
    const std::size_t n = a.dim(1);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    std::vector<double> out(idx.size() * n);
    auto d = a.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= a.dim(0)) throw RangeError("gather_rows: row " + std::to_string(idx[r]) + " out of range");
        std::copy_n(d.begin() + idx[r] * n, n, out.begin() + r * n);
    }
    const std::size_t count = idx.size();
    return Tensor::make_result({count, n}, std::move(out), "gather_rows", {a},
                               [idx = std::move(idx), n](detail::Node& self) {
                                   auto& x = *self.inputs[0];
                                   for (std::size_t r = 0; r < idx.size(); ++r) {
                                       for (std::size_t j = 0; j < n; ++j) x.grad[idx[r] * n + j] += self.grad[r * n + j];
                                   }
                               });
}

Tensor max_reduce(std::span<const Tensor> terms) {
    if (terms.empty()) throw ArgumentError("max_reduce: no terms");
    const Shape& shape = terms[0].shape();
    const std::size_t n = terms[0].numel();
    std::vector<double> out(terms[0].data().begin(), terms[0].data().end());
    std::vector<std::uint32_t> winner(n, 0);
    for (std::size_t t = 1; t < terms.size(); ++t) {
        if (terms[t].shape() != shape) throw DimensionError("max_reduce: shape mismatch");
        auto d = terms[t].data();
        for (std::size_t i = 0; i < n; ++i) {
            if (d[i] > out[i]) {
                out[i] = d[i];
                winner[i] = static_cast<std::uint32_t>(t);
            }
        }
    }
    return Tensor::make_result(shape, std::move(out), "max_reduce", {terms.begin(), terms.end()},
                               [winner = std::move(winner)](detail::Node& self) {
                                   for (std::size_t i = 0; i < winner.size(); ++i) {
                                       auto& in = *self.inputs[winner[i]];
                                       if (in.requires_grad) in.grad[i] += self.grad[i];
                                   }
                               });
}

Tensor softmax_rows(const Tensor& a) {
    require_rank(a, 2, "softmax_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    auto d = a.data();
    for (std::size_t r = 0; r < m; ++r) {
        const double* x = d.data() + r * n;
        double* y = out.data() + r * n;
        const double hi = *std::max_element(x, x + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += (y[j] = std::exp(x[j] - hi));
        for (std::size_t j = 0; j < n; ++j) y[j] /= total;
    }
    return Tensor::make_result({m, n}, std::move(out), "softmax_rows", {a}, [m, n](detail::Node& self) {
        auto& x = *self.inputs[0];
        for (std::size_t r = 0; r < m; ++r) {
            const double* y = self.data.data() + r * n;
            const double* g = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < n; ++j) x.grad[r * n + j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor normalize_rows(const Tensor& a, double eps) {
    require_rank(a, 2, "normalize_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    std::vector<double> inv_std(m);
    auto d = a.data();
    for (std::size_t r = 0; r < m; ++r) {
        const double* x = d.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += x[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (x[j] - mu) * inv_std[r];
    }
    return Tensor::make_result({m, n}, std::move(out), "normalize_rows", {a},
                               [m, n, inv_std = std::move(inv_std)](detail::Node& self) {
                                   auto& x = *self.inputs[0];
                                   const double inv_n = 1.0 / static_cast<double>(n);
                                   for (std::size_t r = 0; r < m; ++r) {
                                       const double* y = self.data.data() + r * n;
                                       const double* g = self.grad.data() + r * n;
                                       double g_mean = 0.0, gy_mean = 0.0;
                                       for (std::size_t j = 0; j < n; ++j) {
                                           g_mean += g[j];
                                           gy_mean += g[j] * y[j];
                                       }
                                       g_mean *= inv_n;
                                       gy_mean *= inv_n;
                                       for (std::size_t j = 0; j < n; ++j) {
                                           x.grad[r * n + j] += inv_std[r] * (g[j] - g_mean - y[j] * gy_mean);
                                       }
                                   }
                               });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
    require_rank(input, 4, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    const std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != cin) {
        throw DimensionError("conv2d: input has " + std::to_string(cin) + " channels but kernel expects " +
                             std::to_string(kernel.dim(1)) + " (input " + shape_to_string(input.shape()) +
                             ", kernel " + shape_to_string(kernel.shape()) + ")");
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw DimensionError("conv2d: kernel " + shape_to_string(kernel.shape()) + " larger than padded input " +
                             shape_to_string(input.shape()));
    }
    const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
    const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
    const std::size_t patch = cin * kh * kw;
    const std::size_t pixels = ho * wo;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

    // im2col buffers are kept for the backward pass of the kernel gradient.
    auto columns = std::make_shared<std::vector<double>>();
    if (!pointwise) columns->assign(batch * patch * pixels, 0.0);
    auto in = input.data();
    std::vector<double> out(batch * cout * pixels);
    ConstMapMat kmat(kernel.data().data(), cout, patch);
    for (std::size_t n = 0; n < batch; ++n) {
        const double* col_ptr = in.data() + n * cin * h * w;
        if (!pointwise) {
            double* col = columns->data() + n * patch * pixels;
            for (std::size_t c = 0; c < cin; ++c) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        double* dst = col + ((c * kh + ky) * kw + kx) * pixels;
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                            if (iy < 0 || iy >= static_cast<long>(h)) continue;
                            const double* src = in.data() + ((n * cin + c) * h + static_cast<std::size_t>(iy)) * w;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                                if (ix >= 0 && ix < static_cast<long>(w)) dst[oy * wo + ox] = src[ix];
                            }
                        }
                    }
                }
            }
            col_ptr = col;
        }
        MapMat(out.data() + n * cout * pixels, cout, pixels).noalias() = kmat * ConstMapMat(col_ptr, patch, pixels);
    }
    return Tensor::make_result(
        {batch, cout, ho, wo}, std::move(out), "conv2d", {input, kernel},
        [=](detail::Node& self) {
            auto& x = *self.inputs[0];
            auto& k = *self.inputs[1];
            ConstMapMat kmat(k.data.data(), cout, patch);
            std::vector<double> dcol(x.requires_grad && !pointwise ? patch * pixels : 0);
            for (std::size_t n = 0; n < batch; ++n) {
                ConstMapMat g(self.grad.data() + n * cout * pixels, cout, pixels);
                const double* col = pointwise ? x.data.data() + n * cin * h * w : columns->data() + n * patch * pixels;
                if (k.requires_grad) MapMat(k.grad.data(), cout, patch).noalias() += g * ConstMapMat(col, patch, pixels).transpose();
                if (!x.requires_grad) continue;
                if (pointwise) {
                    MapMat(x.grad.data() + n * cin * h * w, patch, pixels).noalias() += kmat.transpose() * g;
                    continue;
                }
                MapMat(dcol.data(), patch, pixels).noalias() = kmat.transpose() * g;
                for (std::size_t c = 0; c < cin; ++c) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const double* src = dcol.data() + ((c * kh + ky) * kw + kx) * pixels;
                            for (std::size_t oy = 0; oy < ho; ++oy) {
                                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                double* dst = x.grad.data() + ((n * cin + c) * h + static_cast<std::size_t>(iy)) * w;
                                for (std::size_t ox = 0; ox < wo; ++ox) {
                                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                                    if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor upsample_nearest2x(const Tensor& input) {
    require_rank(input, 4, "upsample_nearest2x");
    const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
    std::vector<double> out(planes * 4 * h * w);
    auto d = input.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
            for (std::size_t x = 0; x < 2 * w; ++x) out[(p * 2 * h + y) * 2 * w + x] = d[(p * h + y / 2) * w + x / 2];
        }
    }
    return Tensor::make_result({input.dim(0), input.dim(1), 2 * h, 2 * w}, std::move(out), "upsample_nearest2x",
                               {input}, [planes, h, w](detail::Node& self) {
                                   auto& x = *self.inputs[0];
                                   for (std::size_t p = 0; p < planes; ++p) {
                                       for (std::size_t y = 0; y < 2 * h; ++y) {
                                           for (std::size_t xx = 0; xx < 2 * w; ++xx) {
                                               x.grad[(p * h + y / 2) * w + xx / 2] += self.grad[(p * 2 * h + y) * 2 * w + xx];
                                           }
                                       }
                                   }
                               });
}

namespace {

struct BilinearTap {
    std::size_t offsets[4];
    double weights[4];
};

BilinearTap bilinear_tap(std::size_t h, std::size_t w, double x, double y) {
    if (!(x >= 0.0 && x <= static_cast<double>(w - 1) && y >= 0.0 && y <= static_cast<double>(h - 1))) {
        throw RangeError("bilinear_sample: point (" + std::to_string(x) + ", " + std::to_string(y) +
                         ") outside grid " + std::to_string(w) + "x" + std::to_string(h));
    }
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    return BilinearTap{{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1},
                       {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy}};
}

}  // namespace

Tensor bilinear_sample_points(const Tensor& feature, std::span<const double> xs, std::span<const double> ys) {
    if (feature.rank() != 3 && !(feature.rank() == 4 && feature.dim(0) == 1)) {
        throw DimensionError("bilinear_sample: expected CxHxW feature, got " + shape_to_string(feature.shape()));
    }
    if (xs.size() != ys.size() || xs.empty()) throw ArgumentError("bilinear_sample: need matching non-empty x/y lists");
    const std::size_t off = feature.rank() - 3;
    const std::size_t c = feature.dim(off), h = feature.dim(off + 1), w = feature.dim(off + 2);
    const std::size_t k = xs.size();
    std::vector<BilinearTap> taps;
    taps.reserve(k);
    for (std::size_t i = 0; i < k; ++i) taps.push_back(bilinear_tap(h, w, xs[i], ys[i]));
    std::vector<double> out(k * c, 0.0);
    auto d = feature.data();
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* plane = d.data() + ch * h * w;
            double v = 0.0;
            for (int t = 0; t < 4; ++t) v += taps[i].weights[t] * plane[taps[i].offsets[t]];
            out[i * c + ch] = v;
        }
    }
    return Tensor::make_result({k, c}, std::move(out), "bilinear_sample", {feature},
                               [taps = std::move(taps), c, h, w](detail::Node& self) {
                                   auto& f = *self.inputs[0];
                                   for (std::size_t i = 0; i < taps.size(); ++i) {
                                       for (std::size_t ch = 0; ch < c; ++ch) {
                                           const double g = self.grad[i * c + ch];
                                           double* plane = f.grad.data() + ch * h * w;
                                           for (int t = 0; t < 4; ++t) plane[taps[i].offsets[t]] += taps[i].weights[t] * g;
                                       }
                                   }
                               });
}

Tensor bilinear_sample(const Tensor& feature, double x, double y) {
    const double xs[1] = {x};
    const double ys[1] = {y};
    auto row = bilinear_sample_points(feature, xs, ys);
    return reshape(row, {row.dim(1)});
}

}  // namespace deal::ops
