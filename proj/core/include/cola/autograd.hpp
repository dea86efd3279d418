#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cola/tensor.hpp"

namespace cola {

// Long-lived trainable value. Gradients accumulate here across backward calls
// until zero_grad().
template <class T>
struct Parameter {
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(Tensor<T>::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on demand during backward
    bool needs = false;
    Parameter<T>* param = nullptr;
    std::vector<Node*> parents;
    std::function<void(Node&)> backprop;

    Tensor<T>& grad_buf() {
        if (grad.data.empty()) grad = Tensor<T>::zeros(value.shape);
        return grad;
    }
};

template <class T>
class Tape;

template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    Node<T>* node = nullptr;

    const Tensor<T>& value() const { return node->value; }
    const std::vector<int>& shape() const { return node->value.shape; }
    int rows() const { return node->value.rows(); }
    int cols() const { return node->value.cols(); }
};

// Records operations in creation order; creation order is a topological order
// because operands exist before their result. One tape per forward/backward
// cycle, single-threaded.
template <class T>
class Tape {
   public:
    bool grad_enabled = true;

    Var<T> constant(Tensor<T> v) { return wrap(alloc(std::move(v))); }

    Var<T> leaf(Tensor<T> v, bool requires_grad) {
        Node<T>* n = alloc(std::move(v));
        n->needs = requires_grad && grad_enabled;
        return wrap(n);
    }

    // One node per parameter per tape; repeated uses share it.
    Var<T> param(Parameter<T>& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return wrap(it->second);
        Node<T>* n = alloc(p.value);
        n->needs = grad_enabled;
        n->param = &p;
        param_nodes_.emplace(&p, n);
        return wrap(n);
    }

    Node<T>* alloc(Tensor<T> v) {
        nodes_.push_back(std::make_unique<Node<T>>());
        Node<T>* n = nodes_.back().get();
        n->value = std::move(v);
        return n;
    }

    Var<T> wrap(Node<T>* n) { return Var<T>{this, n}; }

    template <class F>
    Var<T> op(Tensor<T> value, std::vector<Node<T>*> parents, F&& back) {
        Node<T>* n = alloc(std::move(value));
        if (grad_enabled) {
            bool needs = false;
            for (Node<T>* p : parents) needs = needs || p->needs;
            if (needs) {
                n->needs = true;
                n->parents = std::move(parents);
                n->backprop = std::forward<F>(back);
            }
        }
        return wrap(n);
    }

    // Seeds d(loss)=1 and walks the tape in reverse creation order, visiting
    // each node at most once. Parameter gradients accumulate additively.
    void backward(Var<T> loss) {
        if (!loss.node->value.is_scalar())
            throw contract_error("backward requires a scalar loss, got shape " +
                                 shape_str(loss.node->value.shape));
        std::unordered_set<const Node<T>*> reach;
        std::vector<Node<T>*> stack{loss.node};
        while (!stack.empty()) {
            Node<T>* n = stack.back();
            stack.pop_back();
            if (!reach.insert(n).second) continue;
            for (Node<T>* p : n->parents) stack.push_back(p);
        }
        loss.node->grad_buf().data[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<T>* n = it->get();
            if (!reach.count(n) || !n->backprop || n->grad.data.empty()) continue;
            n->backprop(*n);
        }
        for (auto& [p, n] : param_nodes_) {
            if (n->grad.data.empty()) continue;
            for (size_t i = 0; i < p->grad.data.size(); ++i) p->grad.data[i] += n->grad.data[i];
            n->grad.data.clear();  // flushed; a second backward re-accumulates from zero
        }
    }

    size_t size() const { return nodes_.size(); }

   private:
    std::vector<std::unique_ptr<Node<T>>> nodes_;
    std::unordered_map<Parameter<T>*, Node<T>*> param_nodes_;
};

namespace detail {
template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw shape_error(std::string(what) + ": shapes " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
}
}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::check_same_shape(a.value(), b.value(), "add");
    Tensor<T> out = a.value();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.value().data[i];
    Node<T>*pa = a.node, *pb = b.node;
    return a.tape->op(std::move(out), {pa, pb}, [pa, pb](Node<T>& n) {
        if (pa->needs) {
            auto& g = pa->grad_buf();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
        }
        if (pb->needs) {
            auto& g = pb->grad_buf();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
        }
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    detail::check_same_shape(a.value(), b.value(), "sub");
    Tensor<T> out = a.value();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
    Node<T>*pa = a.node, *pb = b.node;
    return a.tape->op(std::move(out), {pa, pb}, [pa, pb](Node<T>& n) {
        if (pa->needs) {
            auto& g = pa->grad_buf();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
        }
        if (pb->needs) {
            auto& g = pb->grad_buf();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] -= n.grad.data[i];
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::check_same_shape(a.value(), b.value(), "mul");
    Tensor<T> out = a.value();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
    Node<T>*pa = a.node, *pb = b.node;
    return a.tape->op(std::move(out), {pa, pb}, [pa, pb](Node<T>& n) {
        if (pa->needs) {
            auto& g = pa->grad_buf();
            for (size_t i = 0; i < g.data.size(); ++i)
                g.data[i] += n.grad.data[i] * pb->value.data[i];
        }
        if (pb->needs) {
            auto& g = pb->grad_buf();
            for (size_t i = 0; i < g.data.size(); ++i)
                g.data[i] += n.grad.data[i] * pa->value.data[i];
        }
    });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
    Tensor<T> out = a.value();
    for (T& v : out.data) v *= c;
    Node<T>* pa = a.node;
    return a.tape->op(std::move(out), {pa}, [pa, c](Node<T>& n) {
        auto& g = pa->grad_buf();
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += c * n.grad.data[i];
    });
}

template <class T>
Var<T> add_const(Var<T> a, T c) {
    Tensor<T> out = a.value();
    for (T& v : out.data) v += c;
    Node<T>* pa = a.node;
    return a.tape->op(std::move(out), {pa}, [pa](Node<T>& n) {
        auto& g = pa->grad_buf();
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    });
}

template <class T>
Var<T> exp(Var<T> a) {
    Tensor<T> out = a.value();
    for (T& v : out.data) v = std::exp(v);
    Node<T>* pa = a.node;
    return a.tape->op(std::move(out), {pa}, [pa](Node<T>& n) {
        auto& g = pa->grad_buf();
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * n.value.data[i];
    });
}

template <class T>
Var<T> log(Var<T> a) {
    Tensor<T> out = a.value();
    for (T& v : out.data) v = std::log(v);
    Node<T>* pa = a.node;
    return a.tape->op(std::move(out), {pa}, [pa](Node<T>& n) {
        auto& g = pa->grad_buf();
        for (size_t i = 0; i < g.data.size(); ++i)
            g.data[i] += n.grad.data[i] / pa->value.data[i];
    });
}

template <class T>
Var<T> pow_const(Var<T> a, T e) {
    Tensor<T> out = a.value();
    for (T& v : out.data) v = std::pow(v, e);
    Node<T>* pa = a.node;
    return a.tape->op(std::move(out), {pa}, [pa, e](Node<T>& n) {
        if (e == T(0)) return;  // constant output, zero gradient
        auto& g = pa->grad_buf();
        for (size_t i = 0; i < g.data.size(); ++i)
            g.data[i] += n.grad.data[i] * e * std::pow(pa->value.data[i], e - T(1));
    });
}

template <class T>
Var<T> gelu(Var<T> a) {
    const T inv_sqrt2 = T(0.70710678118654752440);
    Tensor<T> out = a.value();
    for (T& v : out.data) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    Node<T>* pa = a.node;
    return a.tape->op(std::move(out), {pa}, [pa, inv_sqrt2](Node<T>& n) {
        const T inv_sqrt2pi = T(0.39894228040143267794);
        auto& g = pa->grad_buf();
        for (size_t i = 0; i < g.data.size(); ++i) {
            const T x = pa->value.data[i];
            const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
            g.data[i] += n.grad.data[i] * (cdf + x * pdf);
        }
    });
}

// Forward identity, no gradient flow.
template <class T>
Var<T> detach(Var<T> a) {
    return a.tape->constant(a.value());
}

// ---- broadcasts over rows ---------------------------------------------------

template <class T>
Var<T> add_row(Var<T> m, Var<T> v) {
    const int r = m.rows(), c = m.cols();
    if (static_cast<size_t>(c) != v.value().numel())
        throw shape_error("add_row: " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
    Tensor<T> out = m.value();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.data[static_cast<size_t>(i) * c + j] += v.value().data[j];
    Node<T>*pm = m.node, *pv = v.node;
    return m.tape->op(std::move(out), {pm, pv}, [pm, pv, r, c](Node<T>& n) {
        if (pm->needs) {
            auto& g = pm->grad_buf();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
        }
        if (pv->needs) {
            auto& g = pv->grad_buf();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    g.data[j] += n.grad.data[static_cast<size_t>(i) * c + j];
        }
    });
}

template <class T>
Var<T> mul_row(Var<T> m, Var<T> v) {
    const int r = m.rows(), c = m.cols();
    if (static_cast<size_t>(c) != v.value().numel())
        throw shape_error("mul_row: " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
    Tensor<T> out = m.value();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.data[static_cast<size_t>(i) * c + j] *= v.value().data[j];
    Node<T>*pm = m.node, *pv = v.node;
    return m.tape->op(std::move(out), {pm, pv}, [pm, pv, r, c](Node<T>& n) {
        if (pm->needs) {
            auto& g = pm->grad_buf();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) {
                    const size_t k = static_cast<size_t>(i) * c + j;
                    g.data[k] += n.grad.data[k] * pv->value.data[j];
                }
        }
        if (pv->needs) {
            auto& g = pv->grad_buf();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) {
                    const size_t k = static_cast<size_t>(i) * c + j;
                    g.data[j] += n.grad.data[k] * pm->value.data[k];
                }
        }
    });
}

// Multiplies row i of m by scalar s[i].
template <class T>
Var<T> scale_rows(Var<T> m, Var<T> s) {
    const int r = m.rows(), c = m.cols();
    if (static_cast<size_t>(r) != s.value().numel())
        throw shape_error("scale_rows: " + shape_str(m.shape()) + " vs " + shape_str(s.shape()));
    Tensor<T> out = m.value();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.data[static_cast<size_t>(i) * c + j] *= s.value().data[i];
    Node<T>*pm = m.node, *ps = s.node;
    return m.tape->op(std::move(out), {pm, ps}, [pm, ps, r, c](Node<T>& n) {
        if (pm->needs) {
            auto& g = pm->grad_buf();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) {
                    const size_t k = static_cast<size_t>(i) * c + j;
                    g.data[k] += n.grad.data[k] * ps->value.data[i];
                }
        }
        if (ps->needs) {
            auto& g = ps->grad_buf();
            for (int i = 0; i < r; ++i) {
                T acc = 0;
                for (int j = 0; j < c; ++j) {
                    const size_t k = static_cast<size_t>(i) * c + j;
                    acc += n.grad.data[k] * pm->value.data[k];
                }
                g.data[i] += acc;
            }
        }
    });
}

// ---- matmul & structure ------------------------------------------------------

template <class T>
Var<T> transpose(Var<T> x) {
    const int r = x.rows(), c = x.cols();
    Tensor<T> out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out.data[static_cast<size_t>(j) * r + i] = x.value().data[static_cast<size_t>(i) * c + j];
    Node<T>* px = x.node;
    return x.tape->op(std::move(out), {px}, [px, r, c](Node<T>& n) {
        auto& g = px->grad_buf();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                g.data[static_cast<size_t>(i) * c + j] += n.grad.data[static_cast<size_t>(j) * r + i];
    });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tensor<T> out({a.rows(), b.cols()});
    matmul_acc(a.value(), b.value(), out);
    Node<T>*pa = a.node, *pb = b.node;
    return a.tape->op(std::move(out), {pa, pb}, [pa, pb](Node<T>& n) {
        if (pa->needs) matmul_nt_acc(n.grad, pb->value, pa->grad_buf());
        if (pb->needs) matmul_tn_acc(pa->value, n.grad, pb->grad_buf());
    });
}

template <class T>
Var<T> slice_rows(Var<T> x, int start, int len) {
    const int r = x.rows(), c = x.cols();
    if (start < 0 || len < 0 || start + len > r)
        throw shape_error("slice_rows [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") out of " + std::to_string(r));
    Tensor<T> out({len, c});
    std::copy_n(x.value().data.data() + static_cast<size_t>(start) * c,
                static_cast<size_t>(len) * c, out.data.data());
    Node<T>* px = x.node;
    return x.tape->op(std::move(out), {px}, [px, start, c, len](Node<T>& n) {
        auto& g = px->grad_buf();
        for (size_t i = 0; i < static_cast<size_t>(len) * c; ++i)
            g.data[static_cast<size_t>(start) * c + i] += n.grad.data[i];
    });
}

template <class T>
Var<T> concat_rows(Tape<T>& tp, const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw contract_error("concat_rows: empty list");
    const int c = parts[0].cols();
    int r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c)
            throw shape_error("concat_rows: column mismatch " + shape_str(p.shape()));
        r += p.rows();
    }
    Tensor<T> out({r, c});
    std::vector<Node<T>*> parents;
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + off);
        off += p.value().numel();
        parents.push_back(p.node);
    }
    auto ps = parents;
    return tp.op(std::move(out), std::move(parents), [ps](Node<T>& n) {
        size_t off = 0;
        for (Node<T>* p : ps) {
            const size_t m = p->value.numel();
            if (p->needs) {
                auto& g = p->grad_buf();
                for (size_t i = 0; i < m; ++i) g.data[i] += n.grad.data[off + i];
            }
            off += m;
        }
    });
}

template <class T>
Var<T> slice_cols(Var<T> x, int start, int len) {
    const int r = x.rows(), c = x.cols();
    if (start < 0 || len < 0 || start + len > c)
        throw shape_error("slice_cols [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") out of " + std::to_string(c));
    Tensor<T> out({r, len});
    for (int i = 0; i < r; ++i)
        std::copy_n(x.value().data.data() + static_cast<size_t>(i) * c + start, len,
                    out.data.data() + static_cast<size_t>(i) * len);
    Node<T>* px = x.node;
    return x.tape->op(std::move(out), {px}, [px, start, r, c, len](Node<T>& n) {
        auto& g = px->grad_buf();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < len; ++j)
                g.data[static_cast<size_t>(i) * c + start + j] +=
                    n.grad.data[static_cast<size_t>(i) * len + j];
    });
}

template <class T>
Var<T> concat_cols(Tape<T>& tp, const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: empty list");
    const int r = parts[0].rows();
    int c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw shape_error("concat_cols: row mismatch " + shape_str(p.shape()));
        c += p.cols();
    }
    Tensor<T> out({r, c});
    std::vector<Node<T>*> parents;
    int off = 0;
    for (const auto& p : parts) {
        const int pc = p.cols();
        for (int i = 0; i < r; ++i)
            std::copy_n(p.value().data.data() + static_cast<size_t>(i) * pc, pc,
                        out.data.data() + static_cast<size_t>(i) * c + off);
        off += pc;
        parents.push_back(p.node);
    }
    auto ps = parents;
    return tp.op(std::move(out), std::move(parents), [ps, r, c](Node<T>& n) {
        int off = 0;
        for (Node<T>* p : ps) {
            const int pc = p->value.cols();
            if (p->needs) {
                auto& g = p->grad_buf();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < pc; ++j)
                        g.data[static_cast<size_t>(i) * pc + j] +=
                            n.grad.data[static_cast<size_t>(i) * c + off + j];
            }
            off += pc;
        }
    });
}

// Row gather; backward scatter-adds, so duplicate indices are fine.
template <class T>
Var<T> gather_rows(Var<T> x, const std::vector<int>& idx) {
    const int r = x.rows(), c = x.cols();
    Tensor<T> out({static_cast<int>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= r)
            throw contract_error("gather_rows: index " + std::to_string(idx[i]) + " out of " +
                                 std::to_string(r));
        std::copy_n(x.value().data.data() + static_cast<size_t>(idx[i]) * c, c,
                    out.data.data() + i * c);
    }
    Node<T>* px = x.node;
    auto indices = idx;
    return x.tape->op(std::move(out), {px}, [px, indices, c](Node<T>& n) {
        auto& g = px->grad_buf();
        for (size_t i = 0; i < indices.size(); ++i)
            for (int j = 0; j < c; ++j)
                g.data[static_cast<size_t>(indices[i]) * c + j] += n.grad.data[i * c + j];
    });
}

// ---- reductions --------------------------------------------------------------

template <class T>
Var<T> sum(Var<T> x) {
    T acc = 0;
    for (T v : x.value().data) acc += v;
    Node<T>* px = x.node;
    return x.tape->op(Tensor<T>::scalar(acc), {px}, [px](Node<T>& n) {
        auto& g = px->grad_buf();
        for (T& v : g.data) v += n.grad.data[0];
    });
}

template <class T>
Var<T> mean(Var<T> x) {
    return scale(sum(x), T(1) / T(x.value().numel()));
}

// column means -> [1 x c]
template <class T>
Var<T> mean_rows(Var<T> x) {
    const int r = x.rows(), c = x.cols();
    Tensor<T> out({1, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.data[j] += x.value().data[static_cast<size_t>(i) * c + j];
    for (T& v : out.data) v /= T(r);
    Node<T>* px = x.node;
    return x.tape->op(std::move(out), {px}, [px, r, c](Node<T>& n) {
        auto& g = px->grad_buf();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                g.data[static_cast<size_t>(i) * c + j] += n.grad.data[j] / T(r);
    });
}

template <class T>
Var<T> pick(Var<T> x, int flat_index) {
    if (flat_index < 0 || static_cast<size_t>(flat_index) >= x.value().numel())
        throw contract_error("pick: index out of range");
    Node<T>* px = x.node;
    return x.tape->op(Tensor<T>::scalar(x.value().data[flat_index]), {px},
                      [px, flat_index](Node<T>& n) {
                          px->grad_buf().data[flat_index] += n.grad.data[0];
                      });
}

// ---- softmax family ------------------------------------------------------------

namespace detail {
template <class T>
void softmax_row(const T* in, T* out, int n) {
    T mx = in[0];
    bool any = std::isfinite(static_cast<double>(in[0]));
    for (int j = 1; j < n; ++j) {
        if (in[j] > mx) mx = in[j];
        any = any || std::isfinite(static_cast<double>(in[j]));
    }
    if (!any || !(mx > -std::numeric_limits<T>::infinity()))
        throw contract_error("fully masked row");
    T z = 0;
    for (int j = 0; j < n; ++j) {
        out[j] = std::isinf(static_cast<double>(in[j])) && in[j] < 0 ? T(0)
                                                                     : std::exp(in[j] - mx);
        z += out[j];
    }
    for (int j = 0; j < n; ++j) out[j] /= z;
}
}  // namespace detail

template <class T>
Var<T> softmax_rows(Var<T> x) {
    const int r = x.rows(), c = x.cols();
    if (c < 1) throw contract_error("softmax over empty axis");
    Tensor<T> out = x.value();
    for (int i = 0; i < r; ++i)
        detail::softmax_row(x.value().data.data() + static_cast<size_t>(i) * c,
                            out.data.data() + static_cast<size_t>(i) * c, c);
    Node<T>* px = x.node;
    return x.tape->op(std::move(out), {px}, [px, r, c](Node<T>& n) {
        auto& g = px->grad_buf();
        for (int i = 0; i < r; ++i) {
            const T* y = n.value.data.data() + static_cast<size_t>(i) * c;
            const T* gy = n.grad.data.data() + static_cast<size_t>(i) * c;
            T dot = 0;
            for (int j = 0; j < c; ++j) dot += y[j] * gy[j];
            for (int j = 0; j < c; ++j)
                g.data[static_cast<size_t>(i) * c + j] += y[j] * (gy[j] - dot);
        }
    });
}

template <class T>
Var<T> log_softmax_rows(Var<T> x) {
    const int r = x.rows(), c = x.cols();
    if (c < 1) throw contract_error("softmax over empty axis");
    Tensor<T> out = x.value();
    Tensor<T> soft({r, c});
    for (int i = 0; i < r; ++i) {
        const T* in = x.value().data.data() + static_cast<size_t>(i) * c;
        T* sm = soft.data.data() + static_cast<size_t>(i) * c;
        detail::softmax_row(in, sm, c);
        T mx = in[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
        T z = 0;
        for (int j = 0; j < c; ++j) z += std::exp(in[j] - mx);
        const T lz = mx + std::log(z);
        for (int j = 0; j < c; ++j) out.data[static_cast<size_t>(i) * c + j] = in[j] - lz;
    }
    Node<T>* px = x.node;
    return x.tape->op(std::move(out), {px}, [px, soft, r, c](Node<T>& n) {
        auto& g = px->grad_buf();
        for (int i = 0; i < r; ++i) {
            const T* sm = soft.data.data() + static_cast<size_t>(i) * c;
            const T* gy = n.grad.data.data() + static_cast<size_t>(i) * c;
            T gsum = 0;
            for (int j = 0; j < c; ++j) gsum += gy[j];
            for (int j = 0; j < c; ++j)
                g.data[static_cast<size_t>(i) * c + j] += gy[j] - sm[j] * gsum;
        }
    });
}

// ---- layer norm -----------------------------------------------------------------

template <class T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
    const int r = x.rows(), c = x.cols();
    if (gain.value().numel() != static_cast<size_t>(c) ||
        bias.value().numel() != static_cast<size_t>(c))
        throw shape_error("layer_norm: gain/bias vs " + shape_str(x.shape()));
    Tensor<T> out({r, c});
    Tensor<T> xhat({r, c});
    Tensor<T> inv_std({r});
    for (int i = 0; i < r; ++i) {
        const T* in = x.value().data.data() + static_cast<size_t>(i) * c;
        T mu = 0;
        for (int j = 0; j < c; ++j) mu += in[j];
        mu /= T(c);
        T var = 0;
        for (int j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= T(c);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std.data[i] = is;
        for (int j = 0; j < c; ++j) {
            const size_t k = static_cast<size_t>(i) * c + j;
            xhat.data[k] = (in[j] - mu) * is;
            out.data[k] = xhat.data[k] * gain.value().data[j] + bias.value().data[j];
        }
    }
    Node<T>*px = x.node, *pg = gain.node, *pb = bias.node;
    return x.tape->op(std::move(out), {px, pg, pb}, [px, pg, pb, xhat, inv_std, r, c](Node<T>& n) {
        for (int i = 0; i < r; ++i) {
            const T* xh = xhat.data.data() + static_cast<size_t>(i) * c;
            const T* gy = n.grad.data.data() + static_cast<size_t>(i) * c;
            if (pg->needs) {
                auto& gg = pg->grad_buf();
                for (int j = 0; j < c; ++j) gg.data[j] += gy[j] * xh[j];
            }
            if (pb->needs) {
                auto& gb = pb->grad_buf();
                for (int j = 0; j < c; ++j) gb.data[j] += gy[j];
            }
            if (px->needs) {
                auto& gx = px->grad_buf();
                T s1 = 0, s2 = 0;
                for (int j = 0; j < c; ++j) {
                    const T gh = gy[j] * pg->value.data[j];
                    s1 += gh;
                    s2 += gh * xh[j];
                }
                for (int j = 0; j < c; ++j) {
                    const T gh = gy[j] * pg->value.data[j];
                    gx.data[static_cast<size_t>(i) * c + j] +=
                        inv_std.data[i] * (gh - s1 / T(c) - xh[j] * s2 / T(c));
                }
            }
        }
    });
}

// ---- fused masked attention -------------------------------------------------------
//
// Softmax and the weighted sum run over the allowed key set only, so outputs at a
// query position are bit-identical whether or not masked-out keys are present.

template <class T>
Var<T> masked_attention(Var<T> q, Var<T> k, Var<T> v, const std::vector<uint8_t>& allowed,
                        T logit_scale) {
    const int nq = q.rows(), nk = k.rows(), d = q.cols();
    if (k.cols() != d || v.rows() != nk)
        throw shape_error("masked_attention: q " + shape_str(q.shape()) + " k " +
                          shape_str(k.shape()) + " v " + shape_str(v.shape()));
    if (allowed.size() != static_cast<size_t>(nq) * nk)
        throw shape_error("masked_attention: mask size mismatch");
    const int dv = v.cols();
    Tensor<T> out({nq, dv});
    Tensor<T> w({nq, nk});  // zero where masked; saved for backward
    for (int i = 0; i < nq; ++i) {
        const T* qi = q.value().data.data() + static_cast<size_t>(i) * d;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < nk; ++j) {
            if (!allowed[static_cast<size_t>(i) * nk + j]) continue;
            const T* kj = k.value().data.data() + static_cast<size_t>(j) * d;
            T s = 0;
            for (int p = 0; p < d; ++p) s += qi[p] * kj[p];
            s *= logit_scale;
            w.data[static_cast<size_t>(i) * nk + j] = s;
            mx = std::max(mx, s);
        }
        if (!(mx > -std::numeric_limits<T>::infinity()))
            throw contract_error("fully masked row");
        T z = 0;
        for (int j = 0; j < nk; ++j) {
            if (!allowed[static_cast<size_t>(i) * nk + j]) continue;
            T& wij = w.data[static_cast<size_t>(i) * nk + j];
            wij = std::exp(wij - mx);
            z += wij;
        }
        T* oi = out.data.data() + static_cast<size_t>(i) * dv;
        for (int j = 0; j < nk; ++j) {
            if (!allowed[static_cast<size_t>(i) * nk + j]) continue;
            T& wij = w.data[static_cast<size_t>(i) * nk + j];
            wij /= z;
            const T* vj = v.value().data.data() + static_cast<size_t>(j) * dv;
            for (int p = 0; p < dv; ++p) oi[p] += wij * vj[p];
        }
    }
    Node<T>*pq = q.node, *pk = k.node, *pv = v.node;
    std::vector<uint8_t> mask_copy = allowed;
    return q.tape->op(
        std::move(out), {pq, pk, pv},
        [pq, pk, pv, w, mask_copy, nq, nk, d, dv, logit_scale](Node<T>& n) {
            Tensor<T> ds({nq, nk});
            for (int i = 0; i < nq; ++i) {
                const T* gi = n.grad.data.data() + static_cast<size_t>(i) * dv;
                T dot = 0;
                for (int j = 0; j < nk; ++j) {
                    if (!mask_copy[static_cast<size_t>(i) * nk + j]) continue;
                    const T* vj = pv->value.data.data() + static_cast<size_t>(j) * dv;
                    T dw = 0;
                    for (int p = 0; p < dv; ++p) dw += gi[p] * vj[p];
                    ds.data[static_cast<size_t>(i) * nk + j] = dw;
                    dot += w.data[static_cast<size_t>(i) * nk + j] * dw;
                }
                for (int j = 0; j < nk; ++j) {
                    if (!mask_copy[static_cast<size_t>(i) * nk + j]) continue;
                    const size_t idx = static_cast<size_t>(i) * nk + j;
                    ds.data[idx] = w.data[idx] * (ds.data[idx] - dot);
                }
            }
            if (pv->needs) {
                auto& gv = pv->grad_buf();
                for (int i = 0; i < nq; ++i) {
                    const T* gi = n.grad.data.data() + static_cast<size_t>(i) * dv;
                    for (int j = 0; j < nk; ++j) {
                        if (!mask_copy[static_cast<size_t>(i) * nk + j]) continue;
                        const T wij = w.data[static_cast<size_t>(i) * nk + j];
                        for (int p = 0; p < dv; ++p)
                            gv.data[static_cast<size_t>(j) * dv + p] += wij * gi[p];
                    }
                }
            }
            if (pq->needs) {
                auto& gq = pq->grad_buf();
                for (int i = 0; i < nq; ++i)
                    for (int j = 0; j < nk; ++j) {
                        if (!mask_copy[static_cast<size_t>(i) * nk + j]) continue;
                        const T c = logit_scale * ds.data[static_cast<size_t>(i) * nk + j];
                        const T* kj = pk->value.data.data() + static_cast<size_t>(j) * d;
                        for (int p = 0; p < d; ++p)
                            gq.data[static_cast<size_t>(i) * d + p] += c * kj[p];
                    }
            }
            if (pk->needs) {
                auto& gk = pk->grad_buf();
                for (int i = 0; i < nq; ++i) {
                    const T* qi = pq->value.data.data() + static_cast<size_t>(i) * d;
                    for (int j = 0; j < nk; ++j) {
                        if (!mask_copy[static_cast<size_t>(i) * nk + j]) continue;
                        const T c = logit_scale * ds.data[static_cast<size_t>(i) * nk + j];
                        for (int p = 0; p < d; ++p)
                            gk.data[static_cast<size_t>(j) * d + p] += c * qi[p];
                    }
                }
            }
        });
}

// Huber (delta-smooth L1) averaged over all elements; target carries no gradient.
template <class T>
Var<T> smooth_l1_mean(Var<T> pred, const Tensor<T>& target, T delta = T(1)) {
    detail::check_same_shape(pred.value(), target, "smooth_l1");
    const size_t n = pred.value().numel();
    T acc = 0;
    for (size_t i = 0; i < n; ++i) {
        const T e = pred.value().data[i] - target.data[i];
        const T a = std::abs(e);
        acc += a <= delta ? T(0.5) * e * e / delta : a - T(0.5) * delta;
    }
    acc /= T(n);
    Node<T>* pp = pred.node;
    Tensor<T> tgt = target;
    return pred.tape->op(Tensor<T>::scalar(acc), {pp}, [pp, tgt, delta, n](Node<T>& nd) {
        auto& g = pp->grad_buf();
        const T go = nd.grad.data[0] / T(n);
        for (size_t i = 0; i < n; ++i) {
            const T e = pp->value.data[i] - tgt.data[i];
            g.data[i] += go * (std::abs(e) <= delta ? e / delta : (e > 0 ? T(1) : T(-1)));
        }
    });
}

}  // namespace cola
