#include "flowsel/tensor.hpp"

#include "flowsel/error.hpp"

#include <cmath>
#include <cstring>

namespace flowsel::nn {

std::string Shape::str() const {
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
           std::to_string(w) + ")";
}

Tensor4::Tensor4(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size())
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match " + shape_.str());
}

void Tensor4::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor4::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Param& ParamStore::add(std::string name, Shape shape, bool trainable) {
    if (find(name) != nullptr) throw Error("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Param>();
    p->name = std::move(name);
    p->value = Tensor4(shape);
    p->grad = Tensor4(shape);
    p->velocity = Tensor4(shape);
    p->trainable = trainable;
    params_.push_back(std::move(p));
    return *params_.back();
}

Param& ParamStore::add_buffer(std::string name, Shape shape, double fill) {
    Param& p = add(std::move(name), shape, true);
    p.buffer = true;
    p.value.fill(fill);
    return p;
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& p : params_)
        if (p->name.compare(0, prefix.size(), prefix) == 0) p->trainable = trainable;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
}

std::size_t ParamStore::count_weights() const {
    std::size_t total = 0;
    for (const auto& p : params_)
        if (!p->buffer) total += p->value.size();
    return total;
}

std::size_t ParamStore::count_trainable() const {
    std::size_t total = 0;
    for (const auto& p : params_)
        if (!p->buffer && p->trainable) total += p->value.size();
    return total;
}

std::uint64_t ParamStore::frozen_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* bytes, std::size_t len) {
        const auto* b = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : params_) {
        if (p->trainable) continue;
        mix(p->name.data(), p->name.size());
        mix(p->value.raw(), p->value.size() * sizeof(double));
    }
    return h;
}

Var Graph::constant(Tensor4 value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::param(Param& p) {
    for (const auto& [ptr, id] : leaves_)
        if (ptr == &p) return Var{id};
    const bool needs = !p.buffer && (p.trainable || track_frozen_);
    nodes_.push_back(Node{p.value, {}, {}, {}, &p, needs});
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    leaves_.emplace_back(&p, id);
    return Var{id};
}

Var Graph::record(Tensor4 value, std::vector<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_[v.id].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), needs ? std::move(backward) : BackwardFn{},
                          nullptr, needs});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor4* Graph::grad_slot(Var v) {
    Node& node = nodes_[v.id];
    if (!node.requires_grad) return nullptr;
    if (node.grad.empty()) node.grad = Tensor4(node.value.shape());
    return &node.grad;
}

void Graph::backward(Var loss) {
    if (nodes_[loss.id].value.size() != 1) throw ShapeError("backward() needs a scalar loss");
    Tensor4* seed = grad_slot(loss);
    if (seed == nullptr) return;
    (*seed)[0] = 1.0;
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!node.requires_grad || node.grad.empty()) continue;
        if (node.param != nullptr) {
            double* dst = node.param->grad.raw();
            const double* src = node.grad.raw();
            for (std::size_t i = 0; i < node.grad.size(); ++i) dst[i] += src[i];
        } else if (node.backward) {
            node.backward(*this, id);
        }
    }
}

void Graph::note_kinks(std::span<const double> pre_activation) {
    for (double v : pre_activation) kinks_.push_back(v > 0.0 ? 1 : 0);
}

}  // namespace flowsel::nn
