#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s2s/tensor.hpp"

namespace s2s {

template <class T>
using GradientMap = std::map<std::string, Tensor<T>>;

/// Reverse-mode computation record.
///
/// Ops append one node per tracked output, in execution order, so the node
/// list is topologically sorted by construction. backward() walks it in
/// reverse, pushing adjoints through each node's saved closure.
///
/// A record is confined to one thread for its lifetime.
template <class T>
class Tape {
public:
    using BackFn = std::function<void(const Tensor<T>& out_grad, Tape& tape)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Register a parameter leaf. The returned tensor is tracked; after
    /// backward() its gradient is available under `name`.
    Tensor<T> watch(const Tensor<T>& value, const std::string& name) {
        for (const auto& [n, _] : params_)
            if (n == name) throw ValueError("watch: duplicate parameter name '" + name + "'");
        Tensor<T> out = value.detached();
        int id = record(out.shape(), {}, BackFn{});
        out.set_link(this, id);
        params_.emplace_back(name, id);
        return out;
    }

    /// Register a tracked non-parameter leaf.
    Tensor<T> leaf(const Tensor<T>& value) {
        Tensor<T> out = value.detached();
        out.set_link(this, record(out.shape(), {}, BackFn{}));
        return out;
    }

    /// Append a node; parents must already live on this tape.
    int record(Shape out_shape, std::vector<int> parents, BackFn back) {
        int id = static_cast<int>(nodes_.size());
        for (int p : parents)
            if (p < 0 || p >= id)
                throw Error("record: parent node does not precede its consumer");
        nodes_.push_back(Node{std::move(out_shape), std::move(parents), std::move(back)});
        return id;
    }

    /// Add `g` into the adjoint buffer of `node` (used by op closures).
    void accumulate(int node, const Tensor<T>& g) {
        auto& slot = grads_[static_cast<std::size_t>(node)];
        if (!slot) {
            slot = g.detached();
            return;
        }
        auto dst = slot->values();
        auto src = g.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    /// Gradients of a scalar loss w.r.t. every watched parameter, by reverse
    /// traversal. Parameters off the path get zero gradients of their shape.
    GradientMap<T> backward(const Tensor<T>& loss) {
        if (!loss.tracked() || loss.tape() != this)
            throw ValueError("backward: loss is not tracked on this record");
        if (loss.numel() != 1)
            throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));

        grads_.assign(nodes_.size(), std::nullopt);
        grads_[static_cast<std::size_t>(loss.node())] =
            Tensor<T>::full(loss.shape(), T(1));

        for (int id = loss.node(); id >= 0; --id) {
            const auto& g = grads_[static_cast<std::size_t>(id)];
            if (!g || !nodes_[static_cast<std::size_t>(id)].back) continue;
            nodes_[static_cast<std::size_t>(id)].back(*g, *this);
        }

        GradientMap<T> out;
        for (const auto& [name, id] : params_) {
            const auto& g = grads_[static_cast<std::size_t>(id)];
            out.emplace(name, g ? *g : Tensor<T>::zeros(nodes_[static_cast<std::size_t>(id)].shape));
        }
        grads_.clear();
        return out;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<int> parents;
        BackFn back;
    };

    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor<T>>> grads_;
    std::vector<std::pair<std::string, int>> params_;
};

/// The tape shared by a set of op inputs; nullptr when all are untracked.
/// Mixing two different tapes in one op is a usage error.
template <class T>
Tape<T>* tape_of(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* t : inputs) {
        if (!t->tracked()) continue;
        if (tape && tape != t->tape())
            throw ValueError("op: inputs belong to different computation records");
        tape = t->tape();
    }
    return tape;
}

template <class T>
int node_on(const Tensor<T>& t, Tape<T>* tape) {
    return (t.tracked() && t.tape() == tape) ? t.node() : -1;
}

/// Drop the -1 placeholders of untracked inputs.
inline std::vector<int> parent_ids(std::initializer_list<int> ids) {
    std::vector<int> out;
    for (int i : ids)
        if (i >= 0) out.push_back(i);
    return out;
}

}  // namespace s2s
