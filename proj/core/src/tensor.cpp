#include "bvar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>

#include "bvar/parallel.hpp"

namespace bvar {

namespace {

using index_t = std::ptrdiff_t;

double neg_half_log_2pi() { return -0.5 * std::log(2.0 * 3.14159265358979323846); }

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data) : shape_(std::move(shape)) {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
    std::size_t n = 1;
    for (std::size_t d : shape_) {
        if (d < 1) throw DimensionError("tensor dimensions must be >= 1");
        n *= d;
    }
    if (n != data.size()) {
        throw DimensionError("shape/data size mismatch: shape holds " + std::to_string(n) +
                             " elements, buffer holds " + std::to_string(data.size()));
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
    std::size_t n = 1;
    for (std::size_t d : shape_) {
        if (d < 1) throw DimensionError("tensor dimensions must be >= 1");
        n *= d;
    }
    data_ = std::make_shared<const std::vector<double>>(n, fill);
}

double Tensor::value() const {
    if (!is_scalar()) throw ContractError("expected a scalar tensor, got shape " + shape_str());
    return (*data_)[0];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d < 1) throw DimensionError("tensor dimensions must be >= 1");
        n *= d;
    }
    if (n != numel()) throw DimensionError("reshape changes element count");
    Tensor out = *this;
    out.shape_ = std::move(shape);
    out.node_ = kNoNode;
    return out;
}

Tensor Tensor::with_node(NodeId id) const {
    Tensor out = *this;
    out.node_ = id;
    return out;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

double softplus_value(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

double softplus_derivative(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

NodeId Graph::push(Node n) {
    const NodeId id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(std::move(n));
    return id;
}

NodeId Graph::require_node(const Tensor& t, const char* what) const {
    if (!t.has_node()) throw ContractError(std::string(what) + ": tensor is not bound to this graph");
    const NodeId id = t.node();
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ContractError(std::string(what) + ": node id out of range");
    return id;
}

Tensor Graph::leaf(const Tensor& value) {
    Node n;
    n.op = Op::kLeaf;
    n.value = value;
    const NodeId id = push(std::move(n));
    return value.with_node(id);
}

namespace {

// Shared elementwise kernel: applies fn to equal-shape operands, or
// broadcasts a one-element operand across the other.
template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& fn, const char* what) {
    const auto& av = a.data();
    const auto& bv = b.data();
    if (same_shape(a, b)) {
        std::vector<double> out(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i], bv[i]);
        return Tensor(a.shape(), std::move(out));
    }
    if (b.is_scalar()) {
        std::vector<double> out(av.size());
        const double s = bv[0];
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i], s);
        return Tensor(a.shape(), std::move(out));
    }
    if (a.is_scalar()) {
        std::vector<double> out(bv.size());
        const double s = av[0];
        for (std::size_t i = 0; i < bv.size(); ++i) out[i] = fn(s, bv[i]);
        return Tensor(b.shape(), std::move(out));
    }
    throw DimensionError(std::string(what) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                         " do not match (only scalar broadcast is supported)");
}

template <typename F>
Tensor unary_map(const Tensor& a, F&& fn) {
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i]);
    return Tensor(a.shape(), std::move(out));
}

}  // namespace

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    Node n;
    n.op = Op::kAdd;
    n.in0 = require_node(a, "add");
    n.in1 = require_node(b, "add");
    n.value = broadcast_binary(a, b, [](double x, double y) { return x + y; }, "add");
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
    Node n;
    n.op = Op::kSub;
    n.in0 = require_node(a, "sub");
    n.in1 = require_node(b, "sub");
    n.value = broadcast_binary(a, b, [](double x, double y) { return x - y; }, "sub");
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    Node n;
    n.op = Op::kMul;
    n.in0 = require_node(a, "mul");
    n.in1 = require_node(b, "mul");
    n.value = broadcast_binary(a, b, [](double x, double y) { return x * y; }, "mul");
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::div(const Tensor& a, const Tensor& b) {
    Node n;
    n.op = Op::kDiv;
    n.in0 = require_node(a, "div");
    n.in1 = require_node(b, "div");
    n.value = broadcast_binary(a, b, [](double x, double y) { return x / y; }, "div");
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::add_const(const Tensor& a, double c) {
    Node n;
    n.op = Op::kAddConst;
    n.in0 = require_node(a, "add_const");
    n.c0 = c;
    n.value = unary_map(a, [c](double x) { return x + c; });
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::mul_const(const Tensor& a, double c) {
    Node n;
    n.op = Op::kMulConst;
    n.in0 = require_node(a, "mul_const");
    n.c0 = c;
    n.value = unary_map(a, [c](double x) { return x * c; });
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::relu(const Tensor& a) {
    Node n;
    n.op = Op::kRelu;
    n.in0 = require_node(a, "relu");
    n.value = unary_map(a, [](double x) { return x > 0.0 ? x : 0.0; });
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::softplus(const Tensor& a) {
    Node n;
    n.op = Op::kSoftplus;
    n.in0 = require_node(a, "softplus");
    n.value = unary_map(a, [](double x) { return softplus_value(x); });
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::log(const Tensor& a) {
    Node n;
    n.op = Op::kLog;
    n.in0 = require_node(a, "log");
    n.value = unary_map(a, [](double x) {
        if (!(x > 0.0)) throw NumericError("log of non-positive value " + std::to_string(x));
        return std::log(x);
    });
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::clamp_min(const Tensor& a, double floor) {
    Node n;
    n.op = Op::kClampMin;
    n.in0 = require_node(a, "clamp_min");
    n.c0 = floor;
    n.value = unary_map(a, [floor](double x) { return x < floor ? floor : x; });
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::sum(const Tensor& a) {
    Node n;
    n.op = Op::kSum;
    n.in0 = require_node(a, "sum");
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    n.value = Tensor::scalar(acc);
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::mean(const Tensor& a) {
    Node n;
    n.op = Op::kMean;
    n.in0 = require_node(a, "mean");
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    n.value = Tensor::scalar(acc / static_cast<double>(a.numel()));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::reshape(const Tensor& a, std::vector<std::size_t> shape) {
    Node n;
    n.op = Op::kReshape;
    n.in0 = require_node(a, "reshape");
    n.value = a.reshaped(std::move(shape));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::tile(const Tensor& a, std::size_t repeats) {
    if (repeats < 1) throw ContractError("tile repeats must be >= 1");
    Node n;
    n.op = Op::kTile;
    n.in0 = require_node(a, "tile");
    n.i0 = repeats;
    const auto av = a.data();
    std::vector<double> out(av.size() * repeats);
    for (std::size_t r = 0; r < repeats; ++r)
        std::copy(av.begin(), av.end(), out.begin() + static_cast<index_t>(r * av.size()));
    std::vector<std::size_t> shape;
    shape.push_back(repeats);
    for (std::size_t d : a.shape()) shape.push_back(d);
    n.value = Tensor(std::move(shape), std::move(out));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul expects rank-2 tensors, got " + a.shape_str() + " x " + b.shape_str());
    const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), nn = b.dim(1);
    if (k != k2)
        throw DimensionError("matmul inner dimensions differ: " + a.shape_str() + " x " + b.shape_str());
    Node n;
    n.op = Op::kMatMul;
    n.in0 = require_node(a, "matmul");
    n.in1 = require_node(b, "matmul");
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    std::vector<double> out(m * nn, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * nn;
        for (std::size_t l = 0; l < k; ++l) {
            const double ail = ap[i * k + l];
            const double* brow = bp + l * nn;
            for (std::size_t j = 0; j < nn; ++j) orow[j] += ail * brow[j];
        }
    }
    n.value = Tensor({m, nn}, std::move(out));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

// ---------------------------------------------------------------------------
// conv2d / maxpool2d / crop2d
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    std::size_t batch, cin, h, w;
    std::size_t cout, kh, kw;
    std::size_t ho, wo;
    std::size_t stride, pad_top, pad_left;
    bool squeezed;  // rank-3 input, rank-3 output
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernels, std::size_t stride, Padding padding) {
    if (stride < 1) throw ContractError("conv2d stride must be positive");
    if (kernels.rank() != 4)
        throw DimensionError("conv2d kernels must be rank 4 [Cout,Cin,kH,kW], got " + kernels.shape_str());
    ConvDims d{};
    d.squeezed = input.rank() == 3;
    if (input.rank() == 4) {
        d.batch = input.dim(0);
        d.cin = input.dim(1);
        d.h = input.dim(2);
        d.w = input.dim(3);
    } else if (input.rank() == 3) {
        d.batch = 1;
        d.cin = input.dim(0);
        d.h = input.dim(1);
        d.w = input.dim(2);
    } else {
        throw DimensionError("conv2d input must be rank 3 or 4, got " + input.shape_str());
    }
    d.cout = kernels.dim(0);
    d.kh = kernels.dim(2);
    d.kw = kernels.dim(3);
    if (kernels.dim(1) != d.cin)
        throw DimensionError("conv2d channel mismatch: input has " + std::to_string(d.cin) +
                             " channels, kernels expect " + std::to_string(kernels.dim(1)));
    d.stride = stride;
    if (padding == Padding::kValid) {
        if (d.kh > d.h || d.kw > d.w)
            throw DimensionError("conv2d kernel exceeds input extent in valid mode");
        d.ho = (d.h - d.kh) / stride + 1;
        d.wo = (d.w - d.kw) / stride + 1;
        d.pad_top = d.pad_left = 0;
    } else {
        d.ho = (d.h + stride - 1) / stride;
        d.wo = (d.w + stride - 1) / stride;
        const std::size_t need_h = (d.ho - 1) * stride + d.kh;
        const std::size_t need_w = (d.wo - 1) * stride + d.kw;
        d.pad_top = need_h > d.h ? (need_h - d.h) / 2 : 0;
        d.pad_left = need_w > d.w ? (need_w - d.w) / 2 : 0;
    }
    return d;
}

// Valid output-column range for a given kernel column: 0 <= ox*s + kx - pl < W.
inline void ox_range(index_t kx, index_t pl, index_t s, index_t w, index_t wo, index_t& lo,
                     index_t& hi) {
    const index_t off = kx - pl;
    lo = off >= 0 ? 0 : (-off + s - 1) / s;
    hi = std::min<index_t>(wo, off < w ? (w - 1 - off) / s + 1 : 0);
    if (lo > hi) lo = hi;
}

}  // namespace

Tensor Graph::conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, Padding padding) {
    const ConvDims d = conv_dims(input, kernels, stride, padding);
    Node n;
    n.op = Op::kConv2d;
    n.in0 = require_node(input, "conv2d");
    n.in1 = require_node(kernels, "conv2d");
    n.i0 = d.stride;
    n.i1 = d.pad_top;
    n.i2 = d.pad_left;

    const double* in = input.data().data();
    const double* kp = kernels.data().data();
    std::vector<double> out(d.batch * d.cout * d.ho * d.wo, 0.0);
    const index_t s = static_cast<index_t>(d.stride);
    const index_t pt = static_cast<index_t>(d.pad_top), pl = static_cast<index_t>(d.pad_left);
    const index_t H = static_cast<index_t>(d.h), W = static_cast<index_t>(d.w);
    const index_t Ho = static_cast<index_t>(d.ho), Wo = static_cast<index_t>(d.wo);

    parallel_for(d.batch * d.cout, [&](std::size_t bc) {
        const std::size_t b = bc / d.cout, co = bc % d.cout;
        double* obase = out.data() + (b * d.cout + co) * d.ho * d.wo;
        for (std::size_t ci = 0; ci < d.cin; ++ci) {
            const double* iplane = in + (b * d.cin + ci) * d.h * d.w;
            const double* kplane = kp + (co * d.cin + ci) * d.kh * d.kw;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
                for (std::size_t kx = 0; kx < d.kw; ++kx) {
                    const double wgt = kplane[ky * d.kw + kx];
                    index_t lo, hi;
                    ox_range(static_cast<index_t>(kx), pl, s, W, Wo, lo, hi);
                    const index_t off = static_cast<index_t>(kx) - pl;
                    for (index_t oy = 0; oy < Ho; ++oy) {
                        const index_t iy = oy * s + static_cast<index_t>(ky) - pt;
                        if (iy < 0 || iy >= H) continue;
                        const double* irow = iplane + iy * W;
                        double* orow = obase + oy * Wo;
                        if (s == 1) {
                            const double* ip = irow + lo + off;
                            for (index_t ox = lo; ox < hi; ++ox) orow[ox] += wgt * ip[ox - lo];
                        } else {
                            for (index_t ox = lo; ox < hi; ++ox) orow[ox] += wgt * irow[ox * s + off];
                        }
                    }
                }
            }
        }
    });

    std::vector<std::size_t> oshape = d.squeezed
                                          ? std::vector<std::size_t>{d.cout, d.ho, d.wo}
                                          : std::vector<std::size_t>{d.batch, d.cout, d.ho, d.wo};
    n.value = Tensor(std::move(oshape), std::move(out));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::maxpool2d(const Tensor& input) {
    std::size_t b = 1, c, h, w;
    bool squeezed = input.rank() == 3;
    if (input.rank() == 4) {
        b = input.dim(0);
        c = input.dim(1);
        h = input.dim(2);
        w = input.dim(3);
    } else if (input.rank() == 3) {
        c = input.dim(0);
        h = input.dim(1);
        w = input.dim(2);
    } else {
        throw DimensionError("maxpool2d input must be rank 3 or 4, got " + input.shape_str());
    }
    if (h % 2 != 0 || w % 2 != 0)
        throw DimensionError("maxpool2d requires even spatial extents, got " + input.shape_str());

    Node n;
    n.op = Op::kMaxPool2d;
    n.in0 = require_node(input, "maxpool2d");
    const std::size_t ho = h / 2, wo = w / 2;
    const double* in = input.data().data();
    std::vector<double> out(b * c * ho * wo);
    for (std::size_t bc = 0; bc < b * c; ++bc) {
        const double* iplane = in + bc * h * w;
        double* oplane = out.data() + bc * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const double* p = iplane + 2 * oy * w + 2 * ox;
                double m = p[0];
                if (p[1] > m) m = p[1];
                if (p[w] > m) m = p[w];
                if (p[w + 1] > m) m = p[w + 1];
                oplane[oy * wo + ox] = m;
            }
        }
    }
    std::vector<std::size_t> oshape = squeezed ? std::vector<std::size_t>{c, ho, wo}
                                               : std::vector<std::size_t>{b, c, ho, wo};
    n.value = Tensor(std::move(oshape), std::move(out));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::crop2d(const Tensor& input, std::size_t h, std::size_t w) {
    if (input.rank() < 2) throw DimensionError("crop2d input must have spatial dims");
    const std::size_t rank = input.rank();
    const std::size_t H = input.dim(rank - 2), W = input.dim(rank - 1);
    if (h > H || w > W) throw DimensionError("crop2d extent exceeds input");
    std::size_t planes = 1;
    for (std::size_t i = 0; i + 2 < rank; ++i) planes *= input.dim(i);

    Node n;
    n.op = Op::kCrop2d;
    n.in0 = require_node(input, "crop2d");
    n.dims = {h, w};
    const double* in = input.data().data();
    std::vector<double> out(planes * h * w);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(in + (p * H + y) * W, w, out.data() + (p * h + y) * w);
    std::vector<std::size_t> oshape(input.shape());
    oshape[rank - 2] = h;
    oshape[rank - 1] = w;
    n.value = Tensor(std::move(oshape), std::move(out));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::bias_add_channel(const Tensor& x, const Tensor& bias) {
    std::size_t b = 1, c, hw;
    if (x.rank() == 4) {
        b = x.dim(0);
        c = x.dim(1);
        hw = x.dim(2) * x.dim(3);
    } else if (x.rank() == 3) {
        c = x.dim(0);
        hw = x.dim(1) * x.dim(2);
    } else {
        throw DimensionError("bias_add_channel expects rank 3 or 4 input");
    }
    if (bias.rank() != 1 || bias.dim(0) != c)
        throw DimensionError("bias_add_channel: bias shape " + bias.shape_str() +
                             " does not match channel count " + std::to_string(c));
    Node n;
    n.op = Op::kBiasAddChannel;
    n.in0 = require_node(x, "bias_add_channel");
    n.in1 = require_node(bias, "bias_add_channel");
    const double* in = x.data().data();
    const double* bp = bias.data().data();
    std::vector<double> out(x.numel());
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci) {
            const double add = bp[ci];
            const std::size_t base = (bi * c + ci) * hw;
            for (std::size_t i = 0; i < hw; ++i) out[base + i] = in[base + i] + add;
        }
    n.value = Tensor(x.shape(), std::move(out));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::bias_add_row(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
        throw DimensionError("bias_add_row expects [B,F] + [F], got " + x.shape_str() + " + " +
                             bias.shape_str());
    Node n;
    n.op = Op::kBiasAddRow;
    n.in0 = require_node(x, "bias_add_row");
    n.in1 = require_node(bias, "bias_add_row");
    const std::size_t rows = x.dim(0), f = x.dim(1);
    const double* in = x.data().data();
    const double* bp = bias.data().data();
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < f; ++j) out[r * f + j] = in[r * f + j] + bp[j];
    n.value = Tensor(x.shape(), std::move(out));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::softmax(const Tensor& logits) {
    const std::size_t k = logits.dim(logits.rank() - 1);
    const std::size_t rows = logits.numel() / k;
    const double* in = logits.data().data();
    for (std::size_t i = 0; i < logits.numel(); ++i)
        if (std::isnan(in[i])) throw NumericError("softmax input contains NaN");

    Node n;
    n.op = Op::kSoftmax;
    n.in0 = require_node(logits, "softmax");
    n.i0 = k;
    std::vector<double> out(logits.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in + r * k;
        double* orow = out.data() + r * k;
        double m = row[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - m);
            denom += orow[j];
        }
        for (std::size_t j = 0; j < k; ++j) orow[j] /= denom;
    }
    n.value = Tensor(logits.shape(), std::move(out));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

Tensor Graph::pick_class(const Tensor& probs, const std::vector<std::size_t>& labels) {
    if (probs.rank() != 2) throw DimensionError("pick_class expects [B,K] input");
    const std::size_t rows = probs.dim(0), k = probs.dim(1);
    if (labels.size() != rows) throw DimensionError("pick_class: one label per row required");
    for (std::size_t l : labels)
        if (l >= k) throw InputError("class label " + std::to_string(l) + " out of range");
    Node n;
    n.op = Op::kPickClass;
    n.in0 = require_node(probs, "pick_class");
    n.dims = labels;
    const double* in = probs.data().data();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = in[r * k + labels[r]];
    n.value = Tensor({rows}, std::move(out));
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

namespace {

// log( pi N(x;0,s1^2) + (1-pi) N(x;0,s2^2) ) and d/dx, shared by forward and
// backward passes. Evaluated through log-sum-exp for small densities.
inline double log_mix_gauss_value(double x, double pi, double s1, double s2, double* dx) {
    const double c = neg_half_log_2pi();
    const double la = std::log(pi) + c - std::log(s1) - 0.5 * (x / s1) * (x / s1);
    const double lb = std::log1p(-pi) + c - std::log(s2) - 0.5 * (x / s2) * (x / s2);
    const double m = std::max(la, lb);
    const double val = m + std::log(std::exp(la - m) + std::exp(lb - m));
    if (dx) {
        const double ra = std::exp(la - val);  // responsibility of component 1
        const double rb = 1.0 - ra;
        *dx = -x * (ra / (s1 * s1) + rb / (s2 * s2));
    }
    return val;
}

}  // namespace

Tensor Graph::log_mix_gauss(const Tensor& x, double pi, double sigma1, double sigma2) {
    if (!(pi > 0.0 && pi < 1.0)) throw ContractError("mixture weight must lie in (0,1)");
    if (!(sigma1 > 0.0 && sigma2 > 0.0)) throw ContractError("mixture sigmas must be positive");
    Node n;
    n.op = Op::kLogMixGauss;
    n.in0 = require_node(x, "log_mix_gauss");
    n.c0 = pi;
    n.c1 = sigma1;
    n.c2 = sigma2;
    n.value = unary_map(
        x, [&](double v) { return log_mix_gauss_value(v, pi, sigma1, sigma2, nullptr); });
    const NodeId id = push(std::move(n));
    return nodes_.back().value.with_node(id);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

std::vector<Tensor> Graph::backward(const Tensor& output) const {
    const NodeId out_id = require_node(output, "backward");
    if (!value_of(out_id).is_scalar())
        throw ContractError("backward requires a scalar output node, got shape " +
                            value_of(out_id).shape_str());

    std::vector<std::vector<double>> grads(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) grads[i].assign(nodes_[i].value.numel(), 0.0);
    grads[static_cast<std::size_t>(out_id)][0] = 1.0;

    for (NodeId id = out_id; id >= 0; --id) {
        const Node& nd = nodes_[static_cast<std::size_t>(id)];
        const std::vector<double>& g = grads[static_cast<std::size_t>(id)];
        if (nd.op == Op::kLeaf) continue;
        const Tensor& v0 = value_of(nd.in0);
        auto& g0 = grads[static_cast<std::size_t>(nd.in0)];

        switch (nd.op) {
            case Op::kAdd:
            case Op::kSub: {
                const Tensor& v1 = value_of(nd.in1);
                auto& g1 = grads[static_cast<std::size_t>(nd.in1)];
                const double sign = nd.op == Op::kSub ? -1.0 : 1.0;
                if (v0.is_scalar() && !v1.is_scalar()) {
                    for (std::size_t i = 0; i < g.size(); ++i) g0[0] += g[i];
                    for (std::size_t i = 0; i < g.size(); ++i) g1[i] += sign * g[i];
                } else if (v1.is_scalar() && !v0.is_scalar()) {
                    for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i];
                    for (std::size_t i = 0; i < g.size(); ++i) g1[0] += sign * g[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i];
                    for (std::size_t i = 0; i < g.size(); ++i) g1[i] += sign * g[i];
                }
                break;
            }
            case Op::kMul: {
                const Tensor& v1 = value_of(nd.in1);
                auto& g1 = grads[static_cast<std::size_t>(nd.in1)];
                const auto a = v0.data();
                const auto b = v1.data();
                if (v0.is_scalar() && !v1.is_scalar()) {
                    for (std::size_t i = 0; i < g.size(); ++i) g0[0] += g[i] * b[i];
                    for (std::size_t i = 0; i < g.size(); ++i) g1[i] += g[i] * a[0];
                } else if (v1.is_scalar() && !v0.is_scalar()) {
                    for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i] * b[0];
                    for (std::size_t i = 0; i < g.size(); ++i) g1[0] += g[i] * a[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i] * b[i];
                    for (std::size_t i = 0; i < g.size(); ++i) g1[i] += g[i] * a[i];
                }
                break;
            }
            case Op::kDiv: {
                const Tensor& v1 = value_of(nd.in1);
                auto& g1 = grads[static_cast<std::size_t>(nd.in1)];
                const auto a = v0.data();
                const auto b = v1.data();
                if (v0.is_scalar() && !v1.is_scalar()) {
                    for (std::size_t i = 0; i < g.size(); ++i) g0[0] += g[i] / b[i];
                    for (std::size_t i = 0; i < g.size(); ++i) g1[i] -= g[i] * a[0] / (b[i] * b[i]);
                } else if (v1.is_scalar() && !v0.is_scalar()) {
                    for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i] / b[0];
                    for (std::size_t i = 0; i < g.size(); ++i) g1[0] -= g[i] * a[i] / (b[0] * b[0]);
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i] / b[i];
                    for (std::size_t i = 0; i < g.size(); ++i) g1[i] -= g[i] * a[i] / (b[i] * b[i]);
                }
                break;
            }
            case Op::kAddConst:
                for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i];
                break;
            case Op::kMulConst:
                for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i] * nd.c0;
                break;
            case Op::kRelu: {
                const auto a = v0.data();
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (a[i] > 0.0) g0[i] += g[i];
                break;
            }
            case Op::kSoftplus: {
                const auto a = v0.data();
                for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i] * softplus_derivative(a[i]);
                break;
            }
            case Op::kLog: {
                const auto a = v0.data();
                for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i] / a[i];
                break;
            }
            case Op::kClampMin: {
                const auto a = v0.data();
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (a[i] > nd.c0) g0[i] += g[i];
                break;
            }
            case Op::kSum:
                for (std::size_t i = 0; i < g0.size(); ++i) g0[i] += g[0];
                break;
            case Op::kMean: {
                const double s = g[0] / static_cast<double>(g0.size());
                for (std::size_t i = 0; i < g0.size(); ++i) g0[i] += s;
                break;
            }
            case Op::kReshape:
                for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i];
                break;
            case Op::kTile: {
                const std::size_t n = g0.size();
                for (std::size_t r = 0; r < nd.i0; ++r)
                    for (std::size_t i = 0; i < n; ++i) g0[i] += g[r * n + i];
                break;
            }
            case Op::kMatMul: {
                const Tensor& v1 = value_of(nd.in1);
                auto& g1 = grads[static_cast<std::size_t>(nd.in1)];
                const std::size_t m = v0.dim(0), k = v0.dim(1), nn = v1.dim(1);
                const double* ap = v0.data().data();
                const double* bp = v1.data().data();
                // dA = g B^T ; dB = A^T g
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = g.data() + i * nn;
                    for (std::size_t l = 0; l < k; ++l) {
                        const double* brow = bp + l * nn;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
                        g0[i * k + l] += acc;
                    }
                }
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = g.data() + i * nn;
                    for (std::size_t l = 0; l < k; ++l) {
                        const double ail = ap[i * k + l];
                        double* drow = g1.data() + l * nn;
                        for (std::size_t j = 0; j < nn; ++j) drow[j] += ail * grow[j];
                    }
                }
                break;
            }
            case Op::kConv2d: {
                const Tensor& kern = value_of(nd.in1);
                auto& gk = grads[static_cast<std::size_t>(nd.in1)];
                const std::size_t rank = v0.rank();
                const std::size_t B = rank == 4 ? v0.dim(0) : 1;
                const std::size_t Cin = v0.dim(rank - 3), H = v0.dim(rank - 2), W = v0.dim(rank - 1);
                const std::size_t Cout = kern.dim(0), KH = kern.dim(2), KW = kern.dim(3);
                const std::size_t orank = nd.value.rank();
                const std::size_t Ho = nd.value.dim(orank - 2), Wo = nd.value.dim(orank - 1);
                const index_t s = static_cast<index_t>(nd.i0);
                const index_t pt = static_cast<index_t>(nd.i1), pl = static_cast<index_t>(nd.i2);
                const double* in = v0.data().data();
                const double* kp = kern.data().data();
                const double* gp = g.data();

                parallel_for(B, [&](std::size_t b) {
                    double* din = g0.data() + b * Cin * H * W;
                    for (std::size_t co = 0; co < Cout; ++co) {
                        const double* gplane = gp + (b * Cout + co) * Ho * Wo;
                        for (std::size_t ci = 0; ci < Cin; ++ci) {
                            double* dplane = din + ci * H * W;
                            const double* kplane = kp + (co * Cin + ci) * KH * KW;
                            for (std::size_t ky = 0; ky < KH; ++ky)
                                for (std::size_t kx = 0; kx < KW; ++kx) {
                                    const double wgt = kplane[ky * KW + kx];
                                    index_t lo, hi;
                                    ox_range(static_cast<index_t>(kx), pl, s,
                                             static_cast<index_t>(W), static_cast<index_t>(Wo), lo,
                                             hi);
                                    const index_t off = static_cast<index_t>(kx) - pl;
                                    for (index_t oy = 0; oy < static_cast<index_t>(Ho); ++oy) {
                                        const index_t iy = oy * s + static_cast<index_t>(ky) - pt;
                                        if (iy < 0 || iy >= static_cast<index_t>(H)) continue;
                                        const double* grow = gplane + oy * static_cast<index_t>(Wo);
                                        double* drow = dplane + iy * static_cast<index_t>(W);
                                        for (index_t ox = lo; ox < hi; ++ox)
                                            drow[ox * s + off] += wgt * grow[ox];
                                    }
                                }
                        }
                    }
                });

                parallel_for(Cout, [&](std::size_t co) {
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (std::size_t ky = 0; ky < KH; ++ky)
                            for (std::size_t kx = 0; kx < KW; ++kx) {
                                index_t lo, hi;
                                ox_range(static_cast<index_t>(kx), pl, s, static_cast<index_t>(W),
                                         static_cast<index_t>(Wo), lo, hi);
                                const index_t off = static_cast<index_t>(kx) - pl;
                                double acc = 0.0;
                                for (std::size_t b = 0; b < B; ++b) {
                                    const double* gplane = gp + (b * Cout + co) * Ho * Wo;
                                    const double* iplane = in + (b * Cin + ci) * H * W;
                                    for (index_t oy = 0; oy < static_cast<index_t>(Ho); ++oy) {
                                        const index_t iy = oy * s + static_cast<index_t>(ky) - pt;
                                        if (iy < 0 || iy >= static_cast<index_t>(H)) continue;
                                        const double* grow = gplane + oy * static_cast<index_t>(Wo);
                                        const double* irow = iplane + iy * static_cast<index_t>(W);
                                        for (index_t ox = lo; ox < hi; ++ox)
                                            acc += grow[ox] * irow[ox * s + off];
                                    }
                                }
                                gk[((co * Cin + ci) * KH + ky) * KW + kx] += acc;
                            }
                });
                break;
            }
            case Op::kMaxPool2d: {
                const std::size_t rank = v0.rank();
                const std::size_t planes = v0.numel() / (v0.dim(rank - 2) * v0.dim(rank - 1));
                const std::size_t H = v0.dim(rank - 2), W = v0.dim(rank - 1);
                const std::size_t Ho = H / 2, Wo = W / 2;
                const double* in = v0.data().data();
                for (std::size_t p = 0; p < planes; ++p) {
                    const double* iplane = in + p * H * W;
                    double* dplane = g0.data() + p * H * W;
                    const double* gplane = g.data() + p * Ho * Wo;
                    for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const std::size_t base = 2 * oy * W + 2 * ox;
                            // First maximum in scan order receives the gradient.
                            std::size_t arg = base;
                            if (iplane[base + 1] > iplane[arg]) arg = base + 1;
                            if (iplane[base + W] > iplane[arg]) arg = base + W;
                            if (iplane[base + W + 1] > iplane[arg]) arg = base + W + 1;
                            dplane[arg] += gplane[oy * Wo + ox];
                        }
                }
                break;
            }
            case Op::kCrop2d: {
                const std::size_t rank = v0.rank();
                const std::size_t H = v0.dim(rank - 2), W = v0.dim(rank - 1);
                const std::size_t h = nd.dims[0], w = nd.dims[1];
                const std::size_t planes = v0.numel() / (H * W);
                for (std::size_t p = 0; p < planes; ++p)
                    for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t x = 0; x < w; ++x)
                            g0[(p * H + y) * W + x] += g[(p * h + y) * w + x];
                break;
            }
            case Op::kBiasAddChannel: {
                auto& g1 = grads[static_cast<std::size_t>(nd.in1)];
                const std::size_t c = g1.size();
                const std::size_t rank = v0.rank();
                const std::size_t hw = v0.dim(rank - 2) * v0.dim(rank - 1);
                const std::size_t B = v0.numel() / (c * hw);
                for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i];
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t ci = 0; ci < c; ++ci) {
                        const std::size_t base = (b * c + ci) * hw;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < hw; ++i) acc += g[base + i];
                        g1[ci] += acc;
                    }
                break;
            }
            case Op::kBiasAddRow: {
                auto& g1 = grads[static_cast<std::size_t>(nd.in1)];
                const std::size_t f = g1.size();
                const std::size_t rows = v0.dim(0);
                for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i];
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < f; ++j) g1[j] += g[r * f + j];
                break;
            }
            case Op::kSoftmax: {
                const std::size_t k = nd.i0;
                const std::size_t rows = nd.value.numel() / k;
                const double* y = nd.value.data().data();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* yrow = y + r * k;
                    const double* grow = g.data() + r * k;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < k; ++j) dot += grow[j] * yrow[j];
                    for (std::size_t j = 0; j < k; ++j) g0[r * k + j] += yrow[j] * (grow[j] - dot);
                }
                break;
            }
            case Op::kPickClass: {
                const std::size_t k = v0.dim(1);
                for (std::size_t r = 0; r < g.size(); ++r) g0[r * k + nd.dims[r]] += g[r];
                break;
            }
            case Op::kLogMixGauss: {
                const auto a = v0.data();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double dx;
                    log_mix_gauss_value(a[i], nd.c0, nd.c1, nd.c2, &dx);
                    g0[i] += g[i] * dx;
                }
                break;
            }
            case Op::kLeaf:
                break;
        }
    }

    std::vector<Tensor> out;
    out.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        out.emplace_back(nodes_[i].value.shape(), std::move(grads[i]));
    return out;
}

}  // namespace bvar
