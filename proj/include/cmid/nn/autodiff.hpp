// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tape-free reverse-mode autodiff over dense matrices. Every operation returns
// a Var that keeps its parents alive; backward() walks the graph reachable
// from a scalar loss in reverse topological order and accumulates gradients
// into every node that requires them. Parameters are leaf Vars whose gradient
// buffers persist across graphs until an optimizer zeroes them.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cmid/nn/tensor.hpp"

namespace cmid::nn {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

class Var {
   public:
    Var() = default;
    explicit Var(Tensor t, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = std::move(t);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var parameter(Tensor t) { return Var(std::move(t), true); }
    static Var constant(Tensor t) { return Var(std::move(t), false); }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    std::size_t size() const { return node_->value.size(); }
    double item() const { return node_->value.item(); }
    bool requires_grad() const { return node_->requires_grad; }

    /// Gradient buffer; all zeros when nothing has been accumulated yet.
    const std::vector<double>& grad() const { return node_->grad_buffer(); }
    std::vector<double>& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

   private:
    std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    for (const auto& p : parents) {
        if (p.requires_grad()) {
            node->requires_grad = true;
            break;
        }
    }
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward_fn = std::move(fn);
    }
    return Var(std::move(node));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
    }
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
    Tensor out(a.shape());
    const auto& x = a.value().values;
    for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = f(x[i]);
    return make_result(std::move(out), {a}, [dfdx](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        auto& g = pa.grad_buffer();
        const auto& x = pa.value.values;
        const auto& y = self.value.values;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(x[i], y[i]);
    });
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// [r×k]·[k×c] → [r×c]
inline Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) {
        throw ConfigError("matmul: inner dimensions differ " + shape_string(a.shape()) + " · " +
                          shape_string(b.shape()));
    }
    Tensor out = Tensor::matrix(a.rows(), b.cols());
    MapR(out.values.data(), a.rows(), b.cols()).noalias() =
        CMapR(a.value().values.data(), a.rows(), a.cols()) * CMapR(b.value().values.data(), b.rows(), b.cols());
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const std::size_t r = pa.value.rows(), k = pa.value.cols(), c = pb.value.cols();
        CMapR g(self.grad.data(), r, c);
        if (pa.requires_grad) {
            MapR(pa.grad_buffer().data(), r, k).noalias() += g * CMapR(pb.value.values.data(), k, c).transpose();
        }
        if (pb.requires_grad) {
            MapR(pb.grad_buffer().data(), k, c).noalias() += CMapR(pa.value.values.data(), r, k).transpose() * g;
        }
    });
}

/// Adds a [1×c] row to every row of a [r×c] matrix.
inline Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ConfigError("add_row: row shape " + shape_string(row.shape()) + " incompatible with " +
                          shape_string(a.shape()));
    }
    Tensor out = a.value();
    const std::size_t r = a.rows(), c = a.cols();
    MapR(out.values.data(), r, c).rowwise() += CMapR(row.value().values.data(), 1, c).row(0);
    return detail::make_result(std::move(out), {a, row}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pr = *self.parents[1];
        const std::size_t r = self.value.rows(), c = self.value.cols();
        CMapR g(self.grad.data(), r, c);
        if (pa.requires_grad) MapR(pa.grad_buffer().data(), r, c) += g;
        if (pr.requires_grad) MapR(pr.grad_buffer().data(), 1, c) += g.colwise().sum();
    });
}

/// Multiplies every row of a [r×c] matrix elementwise by a [1×c] row.
inline Var mul_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ConfigError("mul_row: row shape " + shape_string(row.shape()) + " incompatible with " +
                          shape_string(a.shape()));
    }
    Tensor out = a.value();
    const std::size_t r = a.rows(), c = a.cols();
    MapR(out.values.data(), r, c).array().rowwise() *= CMapR(row.value().values.data(), 1, c).array().row(0);
    return detail::make_result(std::move(out), {a, row}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pr = *self.parents[1];
        const std::size_t r = self.value.rows(), c = self.value.cols();
        CMapR g(self.grad.data(), r, c);
        if (pa.requires_grad) {
            MapR(pa.grad_buffer().data(), r, c).array() +=
                g.array().rowwise() * CMapR(pr.value.values.data(), 1, c).array().row(0);
        }
        if (pr.requires_grad) {
            MapR(pr.grad_buffer().data(), 1, c).array() +=
                (g.array() * CMapR(pa.value.values.data(), r, c).array()).colwise().sum();
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise binary

inline Var add(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += b.value().values[i];
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            auto& g = p.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= b.value().values[i];
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= b.value().values[i];
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value.values[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value.values[i];
        }
    });
}

/// Elementwise minimum; ties send the gradient to the first argument.
inline Var minimum(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "minimum");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = std::min(out.values[i], b.value().values[i]);
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const bool first = pa.value.values[i] <= pb.value.values[i];
            Node& p = first ? pa : pb;
            if (p.requires_grad) p.grad_buffer()[i] += self.grad[i];
        }
    });
}

/// Multiplies every entry of `a` by the single entry of the [1×1] Var `s`.
inline Var mul_scalar(const Var& a, const Var& s) {
    if (s.size() != 1) throw ConfigError("mul_scalar: scale must hold one value");
    const double k = s.item();
    Tensor out = a.value();
    for (double& v : out.values) v *= k;
    return detail::make_result(std::move(out), {a, s}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& ps = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            const double k = ps.value.values[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * k;
        }
        if (ps.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.value.values[i];
            ps.grad_buffer()[0] += acc;
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary

inline Var scale(const Var& a, double k) {
    return detail::unary(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}
inline Var add_scalar(const Var& a, double k) {
    return detail::unary(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}
inline Var neg(const Var& a) { return scale(a, -1.0); }
inline Var relu(const Var& a) {
    return detail::unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Var tanh(const Var& a) {
    return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
inline Var sigmoid(const Var& a) {
    return detail::unary(a, detail::sigmoid, [](double, double y) { return y * (1.0 - y); });
}
inline Var exp(const Var& a) {
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log(const Var& a) {
    return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var square(const Var& a) {
    return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var softplus(const Var& a) {
    return detail::unary(a, detail::softplus, [](double x, double) { return detail::sigmoid(x); });
}
/// log σ(x), stable for large |x|.
inline Var log_sigmoid(const Var& a) {
    return detail::unary(a, [](double x) { return -detail::softplus(-x); },
                         [](double x, double) { return detail::sigmoid(-x); });
}
/// Clips into [lo, hi]; the gradient is zero wherever the clip is active.
inline Var clamp(const Var& a, double lo, double hi) {
    return detail::unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                         [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

/// Same values, cut from the graph.
inline Var detach(const Var& a) { return Var::constant(a.value()); }

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values) s += v;
    return detail::make_result(Tensor::scalar(s), {a}, [](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        for (double& g : pa.grad_buffer()) g += self.grad[0];
    });
}

inline Var mean(const Var& a) {
    if (a.size() == 0) throw ConfigError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Row sums: [r×c] → [r×1].
inline Var sum_cols(const Var& a) {
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out = Tensor::matrix(r, 1);
    MapR(out.values.data(), r, 1) = CMapR(a.value().values.data(), r, c).rowwise().sum();
    return detail::make_result(std::move(out), {a}, [](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        const std::size_t r = pa.value.rows(), c = pa.value.cols();
        MapR(pa.grad_buffer().data(), r, c).colwise() += CMapR(self.grad.data(), r, 1).col(0);
    });
}

inline Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.size()) {
        throw ConfigError("reshape: cannot view " + shape_string(a.shape()) + " as [" + std::to_string(rows) +
                          "," + std::to_string(cols) + "]");
    }
    Tensor out({rows, cols}, a.value().values);
    return detail::make_result(std::move(out), {a}, [](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        auto& g = pa.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ConfigError("concat_cols: nothing to concatenate");
    const std::size_t r = parts[0].rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw ConfigError("concat_cols: row count mismatch");
        c += p.cols();
    }
    Tensor out = Tensor::matrix(r, c);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        MapR(out.values.data(), r, c).middleCols(offset, p.cols()) = CMapR(p.value().values.data(), r, p.cols());
        offset += p.cols();
    }
    return detail::make_result(std::move(out), parts, [](Node& self) {
        const std::size_t r = self.value.rows(), c = self.value.cols();
        std::size_t offset = 0;
        for (auto& pp : self.parents) {
            const std::size_t pc = pp->value.cols();
            if (pp->requires_grad) {
                MapR(pp->grad_buffer().data(), r, pc) += CMapR(self.grad.data(), r, c).middleCols(offset, pc);
            }
            offset += pc;
        }
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ConfigError("concat_rows: nothing to concatenate");
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ConfigError("concat_rows: column count mismatch");
        r += p.rows();
    }
    Tensor out = Tensor::matrix(r, c);
    auto dst = out.values.begin();
    for (const auto& p : parts) dst = std::copy(p.value().values.begin(), p.value().values.end(), dst);
    return detail::make_result(std::move(out), parts, [](Node& self) {
        std::size_t offset = 0;
        for (auto& pp : self.parents) {
            const std::size_t n = pp->value.size();
            if (pp->requires_grad) {
                auto& g = pp->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            }
            offset += n;
        }
    });
}

inline Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.cols()) throw ConfigError("slice_cols: range outside " + shape_string(a.shape()));
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out = Tensor::matrix(r, count);
    MapR(out.values.data(), r, count) = CMapR(a.value().values.data(), r, c).middleCols(begin, count);
    return detail::make_result(std::move(out), {a}, [begin, count](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        const std::size_t r = pa.value.rows(), c = pa.value.cols();
        MapR(pa.grad_buffer().data(), r, c).middleCols(begin, count) += CMapR(self.grad.data(), r, count);
    });
}

/// Per-row standardisation without affine terms.
inline Var layer_norm(const Var& a, double eps = 1e-5) {
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out = Tensor::matrix(r, c);
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = a.value().values.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) out.values[i * c + j] = (x[j] - mu) * inv_std[i];
    }
    return detail::make_result(std::move(out), {a}, [inv_std = std::move(inv_std)](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        const std::size_t r = self.value.rows(), c = self.value.cols();
        auto& g = pa.grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.value.values.data() + i * c;
            const double* gy = self.grad.data() + i * c;
            double mean_g = 0.0, mean_gy = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                mean_g += gy[j];
                mean_gy += gy[j] * y[j];
            }
            mean_g /= static_cast<double>(c);
            mean_gy /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += inv_std[i] * (gy[j] - mean_g - y[j] * mean_gy);
        }
    });
}

// ---------------------------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double k) { return scale(a, k); }
inline Var operator*(double k, const Var& a) { return scale(a, k); }
inline Var operator+(const Var& a, double k) { return add_scalar(a, k); }
inline Var operator-(const Var& a, double k) { return add_scalar(a, -k); }
inline Var operator-(const Var& a) { return neg(a); }

/// Throws NumericError when any entry of `v` is NaN or infinite.
inline void check_finite(const Var& v, const std::string& what) {
    if (!v.value().all_finite()) throw NumericError("non-finite value in " + what);
}

/// Populates gradients of every reachable node that requires them.
inline void backward(const Var& loss) {
    if (loss.size() != 1) {
        throw UsageError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Intermediate grads start from zero on every pass; leaves accumulate.
    for (Node* n : order) {
        if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
    }
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace cmid::nn
