#pragma once

// Dense rank-4 tensors, named parameters and a tape that records the
// operations of one forward pass for reverse-mode differentiation.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flowsel::nn {

struct Shape {
    std::size_t n = 1, c = 1, h = 1, w = 1;

    std::size_t size() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Row-major (N, C, H, W) array of doubles.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
    Tensor4(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* raw() { return data_.data(); }
    const double* raw() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }

    /// Pointer to the (n, c) plane.
    double* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
    const double* plane(std::size_t n, std::size_t c) const {
        return data_.data() + (n * shape_.c + c) * shape_.plane();
    }

    void fill(double v);
    bool all_finite() const;

    bool operator==(const Tensor4&) const = default;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

/// A named value with its gradient accumulator and optimizer state. Buffers
/// hold non-learned state (normalization statistics): they are never touched
/// by the optimizer and are excluded from parameter counts.
struct Param {
    std::string name;
    Tensor4 value;
    Tensor4 grad;
    Tensor4 velocity;
    bool trainable = true;
    bool buffer = false;
};

/// Owns parameters in registration order; addresses are stable.
class ParamStore {
public:
    Param& add(std::string name, Shape shape, bool trainable = true);
    Param& add_buffer(std::string name, Shape shape, double fill);

    std::size_t size() const { return params_.size(); }
    Param& operator[](std::size_t i) { return *params_[i]; }
    const Param& operator[](std::size_t i) const { return *params_[i]; }

    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;

    /// Sets `trainable` on every entry whose name starts with prefix.
    void set_trainable(const std::string& prefix, bool trainable);

    void zero_grad();

    /// Scalar weights (buffers excluded).
    std::size_t count_weights() const;
    std::size_t count_trainable() const;

    /// FNV-1a over names and bit patterns of every non-trainable entry.
    std::uint64_t frozen_checksum() const;

private:
    std::vector<std::unique_ptr<Param>> params_;
};

/// Handle to a value recorded on a Graph.
struct Var {
    std::uint32_t id = UINT32_MAX;
    bool valid() const { return id != UINT32_MAX; }
};

/// One forward pass. Values are recorded in topological order; backward()
/// visits them in exact reverse order. Not thread-safe; use one graph per
/// thread.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

    /// With track_frozen, frozen parameters also receive gradients (used by
    /// the gradient checker).
    explicit Graph(bool track_frozen = false) : track_frozen_(track_frozen) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor4 value);
    /// Leaf bound to p; repeated calls with the same param return one leaf.
    Var param(Param& p);

    const Tensor4& value(Var v) const { return nodes_[v.id].value; }
    const Shape& shape(Var v) const { return nodes_[v.id].value.shape(); }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Gradient of v after backward(); empty if none reached it.
    const Tensor4& grad(Var v) const { return nodes_[v.id].grad; }

    /// Records an op. The node requires a gradient iff some input does.
    Var record(Tensor4 value, std::vector<Var> inputs, BackwardFn backward);

    /// Inputs of node `self`, for use inside a BackwardFn.
    const std::vector<Var>& inputs(std::uint32_t self) const { return nodes_[self].inputs; }
    const Tensor4& out_grad(std::uint32_t self) const { return nodes_[self].grad; }
    /// Zero-initialized gradient slot of v, or nullptr if v needs no gradient.
    Tensor4* grad_slot(Var v);

    /// Seeds d(loss)/d(loss) = 1 and propagates; parameter leaves add their
    /// gradient into Param::grad. loss must hold one element.
    void backward(Var loss);

    /// Records the sign pattern of a non-smooth op's input so finite
    /// difference checks can detect kink crossings.
    void note_kinks(std::span<const double> pre_activation);
    const std::vector<std::uint8_t>& kink_signature() const { return kinks_; }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor4 value;
        Tensor4 grad;
        std::vector<Var> inputs;
        BackwardFn backward;
        Param* param = nullptr;
        bool requires_grad = false;
    };

    std::deque<Node> nodes_;  // stable addresses: value() references survive later records
    std::vector<std::pair<const Param*, std::uint32_t>> leaves_;
    std::vector<std::uint8_t> kinks_;
    bool track_frozen_;
};

}  // namespace flowsel::nn
