#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s2s/error.hpp"
#include "s2s/tape.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

/// Pointwise nonlinearity selector. Linear is the identity when applied bare;
/// affine weights live in DenseLayer.
enum class ActivationKind { Linear, Tanh, Sigmoid, Softmax };

inline const char* activation_name(ActivationKind k) {
    switch (k) {
        case ActivationKind::Linear: return "linear";
        case ActivationKind::Tanh: return "tanh";
        case ActivationKind::Sigmoid: return "sigmoid";
        case ActivationKind::Softmax: return "softmax";
    }
    return "?";
}

inline ActivationKind parse_activation(std::string_view name) {
    if (name == "linear") return ActivationKind::Linear;
    if (name == "tanh") return ActivationKind::Tanh;
    if (name == "sigmoid") return ActivationKind::Sigmoid;
    if (name == "softmax") return ActivationKind::Softmax;
    throw ValueError("unknown activation '" + std::string(name) + "'");
}

namespace detail {

// out += a(m,k) * b(k,n), row-major
template <class T>
void matmul_acc(const T* a, const T* b, T* out, std::size_t m, std::size_t k,
                std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* orow = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out += a(m,k) * b(n,k)^T
template <class T>
void matmul_bt_acc(const T* a, const T* b, T* out, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* orow = out + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] += acc;
        }
    }
}

// out += a(k,m)^T * b(k,n)
template <class T>
void matmul_at_acc(const T* a, const T* b, T* out, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            T av = arow[i];
            T* orow = out + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

template <class T>
T stable_tanh(T x) {
    // (exp(2x)-1)/(exp(2x)+1) via expm1 on the non-growing side
    if (x >= T(0)) {
        T t = std::expm1(T(-2) * x);
        return -t / (t + T(2));
    }
    T t = std::expm1(T(2) * x);
    return t / (t + T(2));
}

template <class T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

/// Standard matrix product (m,k)x(k,n) -> (m,n).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<T> out({m, n});
    detail::matmul_acc(a.values().data(), b.values().data(), out.values().data(), m, k, n);

    if (Tape<T>* tp = tape_of<T>({&a, &b})) {
        int pa = node_on(a, tp), pb = node_on(b, tp);
        Tensor<T> av = a.detached(), bv = b.detached();
        int id = tp->record(out.shape(), parent_ids({pa, pb}),
            [pa, pb, av, bv, m, k, n](const Tensor<T>& g, Tape<T>& t) {
                if (pa >= 0) {
                    Tensor<T> da({m, k});
                    detail::matmul_bt_acc(g.values().data(), bv.values().data(),
                                          da.values().data(), m, n, k);
                    t.accumulate(pa, da);
                }
                if (pb >= 0) {
                    Tensor<T> db({k, n});
                    detail::matmul_at_acc(av.values().data(), g.values().data(),
                                          db.values().data(), k, m, n);
                    t.accumulate(pb, db);
                }
            });
        out.set_link(tp, id);
    }
    return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError("add: shapes differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
    if (Tape<T>* tp = tape_of<T>({&a, &b})) {
        int pa = node_on(a, tp), pb = node_on(b, tp);
        int id = tp->record(out.shape(), parent_ids({pa, pb}),
            [pa, pb](const Tensor<T>& g, Tape<T>& t) {
                if (pa >= 0) t.accumulate(pa, g);
                if (pb >= 0) t.accumulate(pb, g);
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Elementwise product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError("mul: shapes differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
    if (Tape<T>* tp = tape_of<T>({&a, &b})) {
        int pa = node_on(a, tp), pb = node_on(b, tp);
        Tensor<T> av = a.detached(), bv = b.detached();
        int id = tp->record(out.shape(), parent_ids({pa, pb}),
            [pa, pb, av, bv](const Tensor<T>& g, Tape<T>& t) {
                if (pa >= 0) {
                    Tensor<T> da(av.shape());
                    for (std::size_t i = 0; i < da.numel(); ++i) da[i] = g[i] * bv[i];
                    t.accumulate(pa, da);
                }
                if (pb >= 0) {
                    Tensor<T> db(bv.shape());
                    for (std::size_t i = 0; i < db.numel(); ++i) db[i] = g[i] * av[i];
                    t.accumulate(pb, db);
                }
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Bias add broadcast over the last axis: (..., n) + (n).
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.rank() < 1 || b.rank() != 1 || x.shape().back() != b.extent(0))
        throw ShapeError("add_bias: " + shape_str(x.shape()) + " + " +
                         shape_str(b.shape()));
    const std::size_t n = b.extent(0), rows = x.numel() / n;
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] + b[j];
    if (Tape<T>* tp = tape_of<T>({&x, &b})) {
        int px = node_on(x, tp), pb = node_on(b, tp);
        int id = tp->record(out.shape(), parent_ids({px, pb}),
            [px, pb, rows, n](const Tensor<T>& g, Tape<T>& t) {
                if (px >= 0) t.accumulate(px, g);
                if (pb >= 0) {
                    Tensor<T> db({n});
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < n; ++j) db[j] += g[r * n + j];
                    t.accumulate(pb, db);
                }
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Elementwise alpha*x + beta.
template <class T>
Tensor<T> affine(const Tensor<T>& x, T alpha, T beta) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = alpha * x[i] + beta;
    if (Tape<T>* tp = tape_of<T>({&x})) {
        int px = node_on(x, tp);
        int id = tp->record(out.shape(), parent_ids({px}),
            [px, alpha](const Tensor<T>& g, Tape<T>& t) {
                Tensor<T> dx(g.shape());
                for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = alpha * g[i];
                t.accumulate(px, dx);
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Column concatenation of (m, k_i) blocks into (m, sum k_i).
template <class T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw ValueError("concat_cols: no inputs");
    const std::size_t m = parts[0].extent(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.extent(0) != m)
            throw ShapeError("concat_cols: block " + shape_str(p.shape()) +
                             " does not match " + std::to_string(m) + " rows");
        total += p.extent(1);
    }
    Tensor<T> out({m, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t k = p.extent(1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) out.at(i, off + j) = p.at(i, j);
        off += k;
    }

    Tape<T>* tp = nullptr;
    for (const auto& p : parts) {
        Tape<T>* q = tape_of<T>({&p});
        if (q && tp && q != tp)
            throw ValueError("concat_cols: inputs on different records");
        if (q) tp = q;
    }
    if (tp) {
        std::vector<int> nodes(parts.size());
        std::vector<std::size_t> widths(parts.size());
        std::vector<int> parents;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            nodes[i] = node_on(parts[i], tp);
            widths[i] = parts[i].extent(1);
            if (nodes[i] >= 0) parents.push_back(nodes[i]);
        }
        int id = tp->record(out.shape(), parents,
            [nodes, widths, m, total](const Tensor<T>& g, Tape<T>& t) {
                std::size_t off2 = 0;
                for (std::size_t b = 0; b < nodes.size(); ++b) {
                    const std::size_t k = widths[b];
                    if (nodes[b] >= 0) {
                        Tensor<T> dp({m, k});
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < k; ++j)
                                dp.at(i, j) = g[i * total + off2 + j];
                        t.accumulate(nodes[b], dp);
                    }
                    off2 += k;
                }
            });
        out.set_link(tp, id);
    }
    return out;
}

template <class T>
Tensor<T> concat_cols(std::initializer_list<Tensor<T>> parts) {
    std::vector<Tensor<T>> v(parts);
    return concat_cols(std::span<const Tensor<T>>(v));
}

/// Column j of a (m,n) tensor, as (m,1).
template <class T>
Tensor<T> slice_col(const Tensor<T>& x, std::size_t j) {
    if (x.rank() != 2 || j >= x.extent(1))
        throw ShapeError("slice_col: column " + std::to_string(j) + " of " +
                         shape_str(x.shape()));
    const std::size_t m = x.extent(0), n = x.extent(1);
    Tensor<T> out({m, 1});
    for (std::size_t i = 0; i < m; ++i) out[i] = x.at(i, j);
    if (Tape<T>* tp = tape_of<T>({&x})) {
        int px = node_on(x, tp);
        int id = tp->record(out.shape(), parent_ids({px}),
            [px, j, m, n](const Tensor<T>& g, Tape<T>& t) {
                Tensor<T> dx({m, n});
                for (std::size_t i = 0; i < m; ++i) dx.at(i, j) = g[i];
                t.accumulate(px, dx);
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Row-wise scaling: out[i,j] = x[i,j] * s[i], with s of shape (m) or (m,1).
template <class T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
    const std::size_t m = x.rank() == 2 ? x.extent(0) : 0;
    if (x.rank() != 2 || s.numel() != m)
        throw ShapeError("scale_rows: " + shape_str(x.shape()) + " by " +
                         shape_str(s.shape()));
    const std::size_t n = x.extent(1);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) * s[i];
    if (Tape<T>* tp = tape_of<T>({&x, &s})) {
        int px = node_on(x, tp), ps = node_on(s, tp);
        Tensor<T> xv = x.detached(), sv = s.detached();
        int id = tp->record(out.shape(), parent_ids({px, ps}),
            [px, ps, xv, sv, m, n](const Tensor<T>& g, Tape<T>& t) {
                if (px >= 0) {
                    Tensor<T> dx({m, n});
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            dx.at(i, j) = g[i * n + j] * sv[i];
                    t.accumulate(px, dx);
                }
                if (ps >= 0) {
                    Tensor<T> ds(sv.shape());
                    for (std::size_t i = 0; i < m; ++i) {
                        T acc = T(0);
                        for (std::size_t j = 0; j < n; ++j)
                            acc += g[i * n + j] * xv[i * n + j];
                        ds[i] = acc;
                    }
                    t.accumulate(ps, ds);
                }
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Embedding-style row lookup: output row i is table row ids[i].
/// Backward scatters gradients into the selected rows.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids) {
    if (table.rank() != 2)
        throw ShapeError("gather_rows: table must be rank 2, got " +
                         shape_str(table.shape()));
    const std::size_t v = table.extent(0), d = table.extent(1);
    for (std::int32_t id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ValueError("gather_rows: id " + std::to_string(id) +
                             " out of range [0," + std::to_string(v) + ")");
    Tensor<T> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
            out.at(i, j) = table.at(static_cast<std::size_t>(ids[i]), j);
    if (Tape<T>* tp = tape_of<T>({&table})) {
        int pt = node_on(table, tp);
        std::vector<std::int32_t> idv(ids.begin(), ids.end());
        int id = tp->record(out.shape(), parent_ids({pt}),
            [pt, idv, v, d](const Tensor<T>& g, Tape<T>& t) {
                Tensor<T> dt({v, d});
                for (std::size_t i = 0; i < idv.size(); ++i) {
                    T* row = dt.values().data() + static_cast<std::size_t>(idv[i]) * d;
                    const T* grow = g.values().data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) row[j] += grow[j];
                }
                t.accumulate(pt, dt);
            });
        out.set_link(tp, id);
    }
    return out;
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = detail::stable_tanh(x[i]);
    if (Tape<T>* tp = tape_of<T>({&x})) {
        int px = node_on(x, tp);
        Tensor<T> y = out.detached();
        int id = tp->record(out.shape(), parent_ids({px}),
            [px, y](const Tensor<T>& g, Tape<T>& t) {
                Tensor<T> dx(y.shape());
                for (std::size_t i = 0; i < dx.numel(); ++i)
                    dx[i] = g[i] * (T(1) - y[i] * y[i]);
                t.accumulate(px, dx);
            });
        out.set_link(tp, id);
    }
    return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = detail::stable_sigmoid(x[i]);
    if (Tape<T>* tp = tape_of<T>({&x})) {
        int px = node_on(x, tp);
        Tensor<T> y = out.detached();
        int id = tp->record(out.shape(), parent_ids({px}),
            [px, y](const Tensor<T>& g, Tape<T>& t) {
                Tensor<T> dx(y.shape());
                for (std::size_t i = 0; i < dx.numel(); ++i)
                    dx[i] = g[i] * y[i] * (T(1) - y[i]);
                t.accumulate(px, dx);
            });
        out.set_link(tp, id);
    }
    return out;
}

namespace detail {

// softmax over the last axis, restricted to positions where keep() is true;
// excluded positions come out exactly 0. Rows with nothing kept stay all-zero.
template <class T, class Keep>
void softmax_rows(const Tensor<T>& x, Tensor<T>& out, std::size_t rows,
                  std::size_t k, Keep keep) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xin = x.values().data() + r * k;
        T* y = out.values().data() + r * k;
        T mx = T(0);
        bool any = false;
        for (std::size_t j = 0; j < k; ++j)
            if (keep(r, j) && (!any || xin[j] > mx)) { mx = xin[j]; any = true; }
        if (!any) continue;
        T sum = T(0);
        for (std::size_t j = 0; j < k; ++j) {
            y[j] = keep(r, j) ? std::exp(xin[j] - mx) : T(0);
            sum += y[j];
        }
        for (std::size_t j = 0; j < k; ++j) y[j] /= sum;
    }
}

// dx_j = y_j * (g_j - sum_i g_i y_i), rowwise
template <class T>
void softmax_backward_rows(const Tensor<T>& y, const Tensor<T>& g, Tensor<T>& dx,
                           std::size_t rows, std::size_t k) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* yr = y.values().data() + r * k;
        const T* gr = g.values().data() + r * k;
        T* dr = dx.values().data() + r * k;
        T dot = T(0);
        for (std::size_t j = 0; j < k; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < k; ++j) dr[j] = yr[j] * (gr[j] - dot);
    }
}

}  // namespace detail

/// Softmax along the last axis, computed with max-subtraction. Each row sums
/// to 1 and every entry is strictly positive.
template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
    if (x.rank() < 1 || x.shape().back() < 1)
        throw ShapeError("softmax: needs a last axis, got " + shape_str(x.shape()));
    const std::size_t k = x.shape().back(), rows = x.numel() / k;
    Tensor<T> out(x.shape());
    detail::softmax_rows(x, out, rows, k, [](std::size_t, std::size_t) { return true; });
    if (Tape<T>* tp = tape_of<T>({&x})) {
        int px = node_on(x, tp);
        Tensor<T> y = out.detached();
        int id = tp->record(out.shape(), parent_ids({px}),
            [px, y, rows, k](const Tensor<T>& g, Tape<T>& t) {
                Tensor<T> dx(y.shape());
                detail::softmax_backward_rows(y, g, dx, rows, k);
                t.accumulate(px, dx);
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Softmax along the last axis over positions with mask > 0; masked positions
/// are exactly 0 in the output and receive no gradient. The mask is a plain
/// constant, never differentiated.
template <class T>
Tensor<T> masked_softmax(const Tensor<T>& x, const Tensor<T>& mask) {
    if (!x.same_shape(mask))
        throw ShapeError("masked_softmax: mask " + shape_str(mask.shape()) +
                         " does not match " + shape_str(x.shape()));
    const std::size_t k = x.shape().back(), rows = x.numel() / k;
    Tensor<T> out(x.shape());
    const T* mk = mask.values().data();
    detail::softmax_rows(x, out, rows, k,
                         [mk, k](std::size_t r, std::size_t j) { return mk[r * k + j] > T(0); });
    if (Tape<T>* tp = tape_of<T>({&x})) {
        int px = node_on(x, tp);
        Tensor<T> y = out.detached();
        int id = tp->record(out.shape(), parent_ids({px}),
            [px, y, rows, k](const Tensor<T>& g, Tape<T>& t) {
                // masked entries have y = 0, so the generic rule zeroes them
                Tensor<T> dx(y.shape());
                detail::softmax_backward_rows(y, g, dx, rows, k);
                t.accumulate(px, dx);
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Pointwise activation dispatch; Linear passes the tensor through untouched.
template <class T>
Tensor<T> apply_activation(ActivationKind kind, const Tensor<T>& x) {
    switch (kind) {
        case ActivationKind::Linear: return x;
        case ActivationKind::Tanh: return tanh(x);
        case ActivationKind::Sigmoid: return sigmoid(x);
        case ActivationKind::Softmax: return softmax(x);
    }
    throw ValueError("apply_activation: unknown kind");
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    Tensor<T> out(shape, std::vector<T>(x.values().begin(), x.values().end()));
    if (Tape<T>* tp = tape_of<T>({&x})) {
        int px = node_on(x, tp);
        Shape orig = x.shape();
        int id = tp->record(out.shape(), parent_ids({px}),
            [px, orig](const Tensor<T>& g, Tape<T>& t) {
                Tensor<T> dx(orig, std::vector<T>(g.values().begin(), g.values().end()));
                t.accumulate(px, dx);
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Sum of all elements, as a scalar tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (Tape<T>* tp = tape_of<T>({&x})) {
        int px = node_on(x, tp);
        Shape orig = x.shape();
        int id = tp->record(out.shape(), parent_ids({px}),
            [px, orig](const Tensor<T>& g, Tape<T>& t) {
                t.accumulate(px, Tensor<T>::full(orig, g[0]));
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Stack L step tensors of shape (m,n) into (m,L,n).
template <class T>
Tensor<T> stack_steps(std::span<const Tensor<T>> steps) {
    if (steps.empty()) throw ValueError("stack_steps: no inputs");
    const std::size_t m = steps[0].extent(0), n = steps[0].extent(1),
                      L = steps.size();
    for (const auto& s : steps)
        if (s.rank() != 2 || s.extent(0) != m || s.extent(1) != n)
            throw ShapeError("stack_steps: step shape " + shape_str(s.shape()));
    Tensor<T> out({m, L, n});
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out[(i * L + t) * n + j] = steps[t].at(i, j);

    Tape<T>* tp = nullptr;
    for (const auto& s : steps) {
        Tape<T>* q = tape_of<T>({&s});
        if (q && tp && q != tp) throw ValueError("stack_steps: mixed records");
        if (q) tp = q;
    }
    if (tp) {
        std::vector<int> nodes(L);
        std::vector<int> parents;
        for (std::size_t t = 0; t < L; ++t) {
            nodes[t] = node_on(steps[t], tp);
            if (nodes[t] >= 0) parents.push_back(nodes[t]);
        }
        int id = tp->record(out.shape(), parents,
            [nodes, m, n, L](const Tensor<T>& g, Tape<T>& t) {
                for (std::size_t s = 0; s < L; ++s) {
                    if (nodes[s] < 0) continue;
                    Tensor<T> ds({m, n});
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            ds.at(i, j) = g[(i * L + s) * n + j];
                    t.accumulate(nodes[s], ds);
                }
            });
        out.set_link(tp, id);
    }
    return out;
}

/// Sum over rows r with row_mask[r] > 0 of -log softmax(logits[r])[ids[r]],
/// computed fused with log-sum-exp stabilization. Masked rows contribute
/// exactly 0 and their target ids are never read.
template <class T>
Tensor<T> masked_nll_sum(const Tensor<T>& logits, const std::vector<std::int32_t>& ids,
                         const std::vector<T>& row_mask) {
    if (logits.rank() != 2)
        throw ShapeError("masked_nll_sum: logits must be rank 2, got " +
                         shape_str(logits.shape()));
    const std::size_t rows = logits.extent(0), v = logits.extent(1);
    if (ids.size() != rows || row_mask.size() != rows)
        throw ShapeError("masked_nll_sum: " + std::to_string(rows) + " rows but " +
                         std::to_string(ids.size()) + " targets");

    Tensor<T> probs({rows, v});
    T total = T(0);
    for (std::size_t r = 0; r < rows; ++r) {
        if (row_mask[r] <= T(0)) continue;
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v)
            throw ValueError("masked_nll_sum: target id " + std::to_string(ids[r]) +
                             " out of range [0," + std::to_string(v) + ")");
        const T* row = logits.values().data() + r * v;
        T* prow = probs.values().data() + r * v;
        T mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < v; ++j) {
            prow[j] = std::exp(row[j] - mx);
            sum += prow[j];
        }
        for (std::size_t j = 0; j < v; ++j) prow[j] /= sum;
        total += std::log(sum) + mx - row[static_cast<std::size_t>(ids[r])];
    }
    Tensor<T> out = Tensor<T>::scalar(total);
    if (Tape<T>* tp = tape_of<T>({&logits})) {
        int pl = node_on(logits, tp);
        std::vector<std::int32_t> idv = ids;
        std::vector<T> mv = row_mask;
        int id = tp->record(out.shape(), parent_ids({pl}),
            [pl, probs, idv, mv, rows, v](const Tensor<T>& g, Tape<T>& t) {
                Tensor<T> dl({rows, v});
                const T gs = g[0];
                for (std::size_t r = 0; r < rows; ++r) {
                    if (mv[r] <= T(0)) continue;
                    const T* prow = probs.values().data() + r * v;
                    T* drow = dl.values().data() + r * v;
                    for (std::size_t j = 0; j < v; ++j) drow[j] = gs * prow[j];
                    drow[static_cast<std::size_t>(idv[r])] -= gs;
                }
                t.accumulate(pl, dl);
            });
        out.set_link(tp, id);
    }
    return out;
}

}  // namespace s2s
