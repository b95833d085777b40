#pragma once

// Tape-free reverse-mode autodiff over Eigen double matrices. Each operation
// returns a Node holding its value, its inputs, and a closure that pushes the
// node's gradient into the inputs. backward() walks the DAG in reverse
// topological order. Gradients only flow toward leaves created with
// requires_grad=true, so a frozen backbone costs nothing extra.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "promptcl/errors.hpp"
#include "promptcl/util.hpp"

namespace promptcl::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Mat value;
    Mat grad; // lazily allocated on first accumulate
    bool requires_grad = false;
    bool needs_grad = false; // true if any leaf below requires a gradient
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backprop;

    void accumulate(const Mat& g) {
        if (grad.size() == 0)
            grad = Mat::Zero(value.rows(), value.cols());
        grad += g;
    }

    void zero_grad() { grad = Mat(); }

    int rows() const { return static_cast<int>(value.rows()); }
    int cols() const { return static_cast<int>(value.cols()); }
};

inline NodePtr leaf(Mat v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return n;
}

inline NodePtr make_node(Mat v, std::vector<NodePtr> inputs, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs)
        if (in->needs_grad) {
            n->needs_grad = true;
            break;
        }
    if (n->needs_grad)
        n->backprop = std::move(backprop);
    return n;
}

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw InvariantError("add: shape mismatch");
    return make_node(a->value + b->value, {a, b}, [](Node& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad);
        if (n.inputs[1]->needs_grad) n.inputs[1]->accumulate(n.grad);
    });
}

/// Broadcast a 1 x C bias over every row of a.
inline NodePtr add_rowvec(const NodePtr& a, const NodePtr& b) {
    if (b->rows() != 1 || a->cols() != b->cols())
        throw InvariantError("add_rowvec: shape mismatch");
    Mat v = a->value;
    v.rowwise() += b->value.row(0);
    return make_node(std::move(v), {a, b}, [](Node& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad);
        if (n.inputs[1]->needs_grad) n.inputs[1]->accumulate(n.grad.colwise().sum());
    });
}

inline NodePtr scale(const NodePtr& a, double s) {
    return make_node(a->value * s, {a}, [s](Node& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad * s);
    });
}

inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    if (a->cols() != b->rows())
        throw InvariantError("matmul: inner dimension mismatch");
    return make_node(a->value * b->value, {a, b}, [](Node& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad * n.inputs[1]->value.transpose());
        if (n.inputs[1]->needs_grad) n.inputs[1]->accumulate(n.inputs[0]->value.transpose() * n.grad);
    });
}

/// a * b^T without materializing the transpose as a node.
inline NodePtr matmul_nt(const NodePtr& a, const NodePtr& b) {
    if (a->cols() != b->cols())
        throw InvariantError("matmul_nt: inner dimension mismatch");
    return make_node(a->value * b->value.transpose(), {a, b}, [](Node& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad * n.inputs[1]->value);
        if (n.inputs[1]->needs_grad) n.inputs[1]->accumulate(n.grad.transpose() * n.inputs[0]->value);
    });
}

inline NodePtr transpose(const NodePtr& a) {
    return make_node(a->value.transpose(), {a}, [](Node& n) {
        if (n.inputs[0]->needs_grad) n.inputs[0]->accumulate(n.grad.transpose());
    });
}

inline NodePtr concat_rows(const std::vector<NodePtr>& parts) {
    if (parts.empty())
        throw InvariantError("concat_rows: empty");
    int cols = parts[0]->cols();
    int rows = 0;
    for (const auto& p : parts) {
        if (p->cols() != cols)
            throw InvariantError("concat_rows: column mismatch");
        rows += p->rows();
    }
    Mat v(rows, cols);
    int at = 0;
    for (const auto& p : parts) {
        v.middleRows(at, p->rows()) = p->value;
        at += p->rows();
    }
    return make_node(std::move(v), parts, [](Node& n) {
        int at = 0;
        for (auto& in : n.inputs) {
            if (in->needs_grad)
                in->accumulate(n.grad.middleRows(at, in->rows()));
            at += in->rows();
        }
    });
}

inline NodePtr slice_rows(const NodePtr& a, int start, int count) {
    if (start < 0 || count < 0 || start + count > a->rows())
        throw InvariantError("slice_rows: out of range");
    return make_node(a->value.middleRows(start, count), {a}, [start, count](Node& n) {
        if (!n.inputs[0]->needs_grad) return;
        Mat g = Mat::Zero(n.inputs[0]->rows(), n.inputs[0]->cols());
        g.middleRows(start, count) = n.grad;
        n.inputs[0]->accumulate(g);
    });
}

inline NodePtr concat_cols(const std::vector<NodePtr>& parts) {
    if (parts.empty())
        throw InvariantError("concat_cols: empty");
    int rows = parts[0]->rows();
    int cols = 0;
    for (const auto& p : parts) {
        if (p->rows() != rows)
            throw InvariantError("concat_cols: row mismatch");
        cols += p->cols();
    }
    Mat v(rows, cols);
    int at = 0;
    for (const auto& p : parts) {
        v.middleCols(at, p->cols()) = p->value;
        at += p->cols();
    }
    return make_node(std::move(v), parts, [](Node& n) {
        int at = 0;
        for (auto& in : n.inputs) {
            if (in->needs_grad)
                in->accumulate(n.grad.middleCols(at, in->cols()));
            at += in->cols();
        }
    });
}

inline NodePtr slice_cols(const NodePtr& a, int start, int count) {
    if (start < 0 || count < 0 || start + count > a->cols())
        throw InvariantError("slice_cols: out of range");
    return make_node(a->value.middleCols(start, count), {a}, [start, count](Node& n) {
        if (!n.inputs[0]->needs_grad) return;
        Mat g = Mat::Zero(n.inputs[0]->rows(), n.inputs[0]->cols());
        g.middleCols(start, count) = n.grad;
        n.inputs[0]->accumulate(g);
    });
}

/// Embedding lookup: picks table rows by index (duplicates allowed).
inline NodePtr gather_rows(const NodePtr& table, const std::vector<int>& ids) {
    Mat v(static_cast<Eigen::Index>(ids.size()), table->cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table->rows())
            throw InvariantError("gather_rows: index out of range");
        v.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
    }
    return make_node(std::move(v), {table}, [ids](Node& n) {
        if (!n.inputs[0]->needs_grad) return;
        Mat g = Mat::Zero(n.inputs[0]->rows(), n.inputs[0]->cols());
        for (size_t i = 0; i < ids.size(); ++i)
            g.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        n.inputs[0]->accumulate(g);
    });
}

/// Row-wise layer norm with learned gain/bias (both 1 x C).
inline NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias,
                          double eps = 1e-5) {
    const int R = x->rows(), C = x->cols();
    if (gain->rows() != 1 || gain->cols() != C || bias->rows() != 1 || bias->cols() != C)
        throw InvariantError("layer_norm: gain/bias must be 1 x C");
    Mat xhat(R, C);
    Vec inv_std(R);
    for (int r = 0; r < R; ++r) {
        double mu = x->value.row(r).mean();
        double var = (x->value.row(r).array() - mu).square().mean();
        double istd = 1.0 / std::sqrt(var + eps);
        inv_std(r) = istd;
        xhat.row(r) = (x->value.row(r).array() - mu) * istd;
    }
    Mat y = xhat;
    y.array().rowwise() *= gain->value.row(0).array();
    y.rowwise() += bias->value.row(0);
    return make_node(std::move(y), {x, gain, bias},
                     [xhat, inv_std](Node& n) {
                         const int R = n.rows(), C = n.cols();
                         auto& xin = n.inputs[0];
                         auto& g = n.inputs[1];
                         auto& b = n.inputs[2];
                         if (b->needs_grad) b->accumulate(n.grad.colwise().sum());
                         if (g->needs_grad) g->accumulate((n.grad.array() * xhat.array()).colwise().sum().matrix());
                         if (!xin->needs_grad) return;
                         Mat dx(R, C);
                         for (int r = 0; r < R; ++r) {
                             Eigen::RowVectorXd dxn = n.grad.row(r).array() * g->value.row(0).array();
                             double m1 = dxn.mean();
                             double m2 = (dxn.array() * xhat.row(r).array()).mean();
                             dx.row(r) = ((dxn.array() - m1) - xhat.row(r).array() * m2) * inv_std(r);
                         }
                         xin->accumulate(dx);
                     });
}

/// Exact GELU: x * Phi(x).
inline NodePtr gelu(const NodePtr& x) {
    const double inv_sqrt2 = 0.7071067811865475244;
    const double inv_sqrt2pi = 0.3989422804014326779;
    Mat y = x->value.unaryExpr([&](double v) { return v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)); });
    return make_node(std::move(y), {x}, [inv_sqrt2, inv_sqrt2pi](Node& n) {
        if (!n.inputs[0]->needs_grad) return;
        const Mat& xv = n.inputs[0]->value;
        Mat d = xv.unaryExpr([&](double v) {
            double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            double dens = inv_sqrt2pi * std::exp(-0.5 * v * v);
            return phi + v * dens;
        });
        n.inputs[0]->accumulate((n.grad.array() * d.array()).matrix());
    });
}

inline NodePtr softmax_rows(const NodePtr& x) {
    Mat y(x->rows(), x->cols());
    for (int r = 0; r < x->rows(); ++r) {
        double mx = x->value.row(r).maxCoeff();
        Eigen::RowVectorXd e = (x->value.row(r).array() - mx).exp();
        y.row(r) = e / e.sum();
    }
    Mat yv = y;
    return make_node(std::move(y), {x}, [yv](Node& n) {
        if (!n.inputs[0]->needs_grad) return;
        Mat dx(n.rows(), n.cols());
        for (int r = 0; r < n.rows(); ++r) {
            double dot = n.grad.row(r).dot(yv.row(r));
            dx.row(r) = (n.grad.row(r).array() - dot) * yv.row(r).array();
        }
        n.inputs[0]->accumulate(dx);
    });
}

inline NodePtr l2_normalize_rows(const NodePtr& x) {
    Vec norms(x->rows());
    Mat y(x->rows(), x->cols());
    for (int r = 0; r < x->rows(); ++r) {
        double nrm = x->value.row(r).norm();
        if (nrm < 1e-12)
            throw NumericError("l2_normalize_rows: zero-norm row");
        norms(r) = nrm;
        y.row(r) = x->value.row(r) / nrm;
    }
    Mat yv = y;
    return make_node(std::move(y), {x}, [yv, norms](Node& n) {
        if (!n.inputs[0]->needs_grad) return;
        Mat dx(n.rows(), n.cols());
        for (int r = 0; r < n.rows(); ++r) {
            double dot = n.grad.row(r).dot(yv.row(r));
            dx.row(r) = (n.grad.row(r) - dot * yv.row(r)) / norms(r);
        }
        n.inputs[0]->accumulate(dx);
    });
}

/// Mean cross-entropy of row-wise softmax against integer labels; returns 1x1.
inline NodePtr cross_entropy_mean(const NodePtr& logits, const std::vector<int>& labels) {
    const int R = logits->rows(), C = logits->cols();
    if (static_cast<int>(labels.size()) != R)
        throw InvariantError("cross_entropy_mean: label count mismatch");
    Mat probs(R, C);
    double loss = 0.0;
    for (int r = 0; r < R; ++r) {
        if (labels[r] < 0 || labels[r] >= C)
            throw InvariantError("cross_entropy_mean: label out of range");
        double mx = logits->value.row(r).maxCoeff();
        Eigen::RowVectorXd e = (logits->value.row(r).array() - mx).exp();
        double z = e.sum();
        probs.row(r) = e / z;
        loss += std::log(z) + mx - logits->value(r, labels[r]);
    }
    loss /= R;
    Mat v(1, 1);
    v(0, 0) = loss;
    return make_node(std::move(v), {logits}, [probs, labels](Node& n) {
        if (!n.inputs[0]->needs_grad) return;
        Mat d = probs;
        for (int r = 0; r < d.rows(); ++r)
            d(r, labels[r]) -= 1.0;
        n.inputs[0]->accumulate(d * (n.grad(0, 0) / d.rows()));
    });
}

inline void backward(const NodePtr& root) {
    if (root->rows() != 1 || root->cols() != 1)
        throw InvariantError("backward: root must be scalar");
    // Iterative post-order DFS; reverse gives a valid backward order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node* next = node->inputs[idx++].get();
            if (next->needs_grad && seen.insert(next).second)
                stack.push_back({next, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad = Mat::Ones(1, 1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.size() != 0)
            n->backprop(*n);
    }
}

} // namespace promptcl::ag
