#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bvar/errors.hpp"

namespace bvar {

using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

// Dense row-major double tensor. The value buffer is immutable after
// construction and shared between copies; node() optionally ties the tensor
// to a position in an autodiff Graph.
class Tensor {
public:
    Tensor() : Tensor({1}, 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data);
    Tensor(std::vector<std::size_t> shape, double fill);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor full(std::vector<std::size_t> shape, double v) {
        return Tensor(std::move(shape), v);
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t numel() const { return data_->size(); }
    bool is_scalar() const { return numel() == 1; }

    std::span<const double> data() const { return {data_->data(), data_->size()}; }
    double operator[](std::size_t i) const { return (*data_)[i]; }
    double value() const;  // numel()==1 accessor

    // Same buffer, new shape (element count must match).
    Tensor reshaped(std::vector<std::size_t> shape) const;

    NodeId node() const { return node_; }
    bool has_node() const { return node_ != kNoNode; }
    Tensor with_node(NodeId id) const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::shared_ptr<const std::vector<double>> data_;
    NodeId node_ = kNoNode;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
bool same_shape(const Tensor& a, const Tensor& b);

// Numerically safe scalar helpers used across the toolkit.
double softplus_value(double x);       // log(1+exp(x)); returns x for x > 30
double softplus_derivative(double x);  // logistic sigmoid

enum class Padding { kValid, kSame };

enum class Op : std::uint8_t {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kAddConst,
    kMulConst,
    kRelu,
    kSoftplus,
    kLog,
    kClampMin,
    kSum,
    kMean,
    kReshape,
    kTile,
    kMatMul,
    kConv2d,
    kMaxPool2d,
    kCrop2d,
    kBiasAddChannel,
    kBiasAddRow,
    kSoftmax,
    kPickClass,
    kLogMixGauss,
};

// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
// record list is already topologically sorted; backward() walks it in
// reverse. Forward values are computed eagerly as nodes are created.
class Graph {
public:
    struct Node {
        Op op;
        NodeId in0 = kNoNode;
        NodeId in1 = kNoNode;
        Tensor value;
        // Small op-specific payload.
        double c0 = 0.0, c1 = 0.0, c2 = 0.0;
        std::size_t i0 = 0, i1 = 0, i2 = 0, i3 = 0;
        std::vector<std::size_t> dims;  // reshape target / crop extents / labels
    };

    Tensor leaf(const Tensor& value);

    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor div(const Tensor& a, const Tensor& b);
    Tensor add_const(const Tensor& a, double c);
    Tensor mul_const(const Tensor& a, double c);

    Tensor relu(const Tensor& a);
    Tensor softplus(const Tensor& a);
    Tensor log(const Tensor& a);
    Tensor clamp_min(const Tensor& a, double floor);

    Tensor sum(const Tensor& a);
    Tensor mean(const Tensor& a);
    Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
    Tensor tile(const Tensor& a, std::size_t repeats);

    // a: [m,k], b: [k,n] -> [m,n]
    Tensor matmul(const Tensor& a, const Tensor& b);

    // input: [C,H,W] or [B,C,H,W]; kernels: [Cout,Cin,kH,kW]. Valid padding
    // follows the plain sliding-window contract; same padding pads so that
    // H' = ceil(H/stride) (stride 1 keeps the spatial size).
    Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
                  Padding padding = Padding::kValid);

    // 2x2/2 max pooling; H and W must be even.
    Tensor maxpool2d(const Tensor& input);

    // Keeps the top-left h x w window of each channel.
    Tensor crop2d(const Tensor& input, std::size_t h, std::size_t w);

    // x: [B,C,H,W] + bias [C], and x: [B,F] + bias [F].
    Tensor bias_add_channel(const Tensor& x, const Tensor& bias);
    Tensor bias_add_row(const Tensor& x, const Tensor& bias);

    // Softmax over the last dimension, max-subtracted for stability.
    Tensor softmax(const Tensor& logits);

    // probs: [B,K], labels: one class index per row -> [B] picked entries.
    Tensor pick_class(const Tensor& probs, const std::vector<std::size_t>& labels);

    // Elementwise log(pi N(x;0,s1^2) + (1-pi) N(x;0,s2^2)) via log-sum-exp.
    Tensor log_mix_gauss(const Tensor& x, double pi, double sigma1, double sigma2);

    // Gradients of a scalar output with respect to every node, indexed by
    // NodeId. Nodes that do not influence the output get zero tensors.
    std::vector<Tensor> backward(const Tensor& output) const;

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }

private:
    NodeId push(Node n);
    const Tensor& value_of(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    NodeId require_node(const Tensor& t, const char* what) const;

    std::vector<Node> nodes_;
};

}  // namespace bvar
