#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "s2s/error.hpp"
#include "s2s/rng.hpp"

namespace s2s {

template <class T>
class Tape;

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

/// Dense row-major tensor of real scalars. Value-semantic: copies are deep.
///
/// A tensor may carry a link into the computation record (Tape) that produced
/// it; the link is what backward() follows. Links are non-owning and become
/// stale once the record is destroyed; only the gradient machinery reads
/// them, plain values stay usable forever.
template <class T = float>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(numel_of(shape_), T(0)) {}

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel_of(shape_))
            throw ShapeError("tensor: " + std::to_string(data_.size()) +
                             " values do not fill shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        for (T& x : t.data_) x = value;
        return t;
    }

    static Tensor scalar(T value) { return full({}, value); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
        return t;
    }

    /// Uniform in [-limit, limit] drawn from the given stream.
    static Tensor uniform(Shape shape, T limit, Rng& rng) {
        Tensor t(std::move(shape));
        for (T& x : t.data_) x = static_cast<T>(rng.uniform(-double(limit), double(limit)));
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    /// Scalar value of a one-element tensor.
    T item() const {
        if (numel() != 1)
            throw ShapeError("item: tensor has shape " + shape_str(shape_));
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // --- gradient link ---------------------------------------------------
    bool tracked() const { return tape_ != nullptr; }
    Tape<T>* tape() const { return tape_; }
    int node() const { return node_; }
    void set_link(Tape<T>* tape, int node) { tape_ = tape; node_ = node; }

    /// Value copy with no gradient link.
    Tensor detached() const {
        Tensor t(shape_, data_);
        return t;
    }

private:
    Shape shape_{};
    std::vector<T> data_{};
    Tape<T>* tape_ = nullptr;
    int node_ = -1;
};

}  // namespace s2s
