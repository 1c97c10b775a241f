#pragma once

// Dense double-precision tensors with a tape-based reverse-mode graph.
//
// A Graph records every op in creation order, which is also a topological
// order, so backward() is a single reverse sweep. Parameters live outside the
// graph as Tensor objects and are bound into a graph with Graph::param(); their
// gradients are accumulated into Tensor::grad when backward() runs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fgraph::nc {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateMaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> values, bool trainable = false);

    static Tensor zeros(Shape s, bool trainable = false);
    static Tensor filled(Shape s, double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    // Rank-1 tensors behave as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    void zero_grad();
};

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

// Row mask for attention style ops: 1 = valid, 0 = masked.
using RowMask = std::vector<std::uint8_t>;

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaves.
    Var constant(Tensor value);
    Var input(Tensor value);  // differentiable leaf, gradient readable via grad()
    Var param(Tensor& p);     // one leaf per parameter per graph; grads flow into p.grad

    const Tensor& value(Var v) const;
    const std::vector<double>& grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    // Linear algebra.
    Var matmul(Var a, Var b);
    Var transpose(Var a);

    // Elementwise, equal shapes.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    // a[m,n] + bias[n] broadcast over rows.
    Var add_bias(Var a, Var bias);

    // Shape ops on matrices.
    Var concat_cols(std::span<const Var> parts);
    Var concat_rows(std::span<const Var> parts);
    Var slice_rows(Var a, std::size_t begin, std::size_t end);
    Var slice_cols(Var a, std::size_t begin, std::size_t end);
    Var gather_rows(Var a, std::vector<std::size_t> index);

    // Pointwise nonlinearities.
    Var tanh(Var a);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var abs(Var a);

    Var softmax_rows(Var a, const std::optional<RowMask>& mask = std::nullopt);
    Var layer_norm(Var x, Var gain, Var bias, double eps);

    // Reductions.
    Var sum(Var a);                                 // -> [1,1]
    Var mean(Var a);                                // -> [1,1]
    Var row_sum(Var a);                             // [m,n] -> [m,1]
    Var mean_row_groups(Var a, std::size_t group);  // [g*k,n] -> [k,n]
    Var l2_normalize_rows(Var a, double eps = 1e-12);

    // Convolution support: patches of an NHWC batch stored as [B*H*W, C].
    // Output rows are (b, oy, ox), columns (ky, kx, c), zero padding.
    Var im2col(Var a, std::size_t batch, std::size_t height, std::size_t width,
               std::size_t channels, std::size_t kernel, std::size_t stride, std::size_t pad);

    // Forward sign with sign(0) = +1; backward copies the gradient unchanged.
    Var sign_st(Var a);

    void backward(Var out, const Tensor& seed);
    void backward(Var scalar_out);  // seed = 1 for a [1,1] output

private:
    using BackwardFn = std::function<void(Graph&, std::size_t)>;

    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Tensor* param = nullptr;
        bool requires_grad = false;
    };

    Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
    std::vector<double>& grad_buf(std::size_t id);
    bool needs(std::size_t id) const { return nodes_[id].requires_grad; }
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor*, std::size_t> param_leaf_;
};

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// `f` builds a scalar ([1,1]) output from the input leaf.
using ScalarFn = std::function<Var(Graph&, Var)>;
double grad_check(const ScalarFn& f, const Tensor& point, double eps = 1e-5);

// Named parameter checkpoints ("FGPT" format).
struct NamedTensor {
    std::string name;
    Tensor tensor;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace fgraph::nc
