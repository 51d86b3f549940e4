#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ordex/common.hpp"
#include "ordex/rope.hpp"
#include "ordex/tensor.hpp"

namespace ordex::nn {

// ---------------------------------------------------------------------------
// Raw kernels
// ---------------------------------------------------------------------------

// c[m,n] = a[m,k] * b[k,n]  (+= when accumulate)
inline void matmul_raw(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                       bool accumulate) {
    if (!accumulate)
        for (size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (size_t t = 0; t < k; ++t) {
            const double av = ai[t];
            const double* bt = b + t * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
        }
    }
}

// c[m,n] = a[m,k] * b[n,k]^T
inline void matmul_nt_raw(const double* a, const double* b, double* c, size_t m, size_t k,
                          size_t n, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (size_t t = 0; t < k; ++t) acc += ai[t] * bj[t];
            ci[j] = accumulate ? ci[j] + acc : acc;
        }
    }
}

// c[m,n] = a[k,m]^T * b[k,n]
inline void matmul_tn_raw(const double* a, const double* b, double* c, size_t m, size_t k,
                          size_t n, bool accumulate) {
    if (!accumulate)
        for (size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    for (size_t t = 0; t < k; ++t) {
        const double* at = a + t * m;
        const double* bt = b + t * n;
        for (size_t i = 0; i < m; ++i) {
            const double av = at[i];
            double* ci = c + i * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
        }
    }
}

// log(1 + sum_k exp(x_k)), overflow-safe. Empty input gives exactly 0.
// Also fills weights[k] = exp(x_k) / (1 + sum exp) for the backward pass.
inline double log1p_sum_exp(const std::vector<double>& xs, std::vector<double>* weights) {
    double m = 0.0; // the implicit exp(0) term
    for (double x : xs) m = std::max(m, x);
    double z = std::exp(0.0 - m);
    for (double x : xs) z += std::exp(x - m);
    if (weights) {
        weights->resize(xs.size());
        for (size_t k = 0; k < xs.size(); ++k) (*weights)[k] = std::exp(xs[k] - m) / z;
    }
    return m + std::log(z);
}

// ---------------------------------------------------------------------------
// Define-by-run reverse-mode graph
// ---------------------------------------------------------------------------

class Graph {
public:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<double> grad;
        std::vector<Node*> inputs;
        std::function<void(Node&)> backward;
        Tensor* param = nullptr;

        size_t numel() const { return value.numel(); }
        const std::vector<size_t>& shape() const { return value.shape(); }
    };

    // Leaf bound to a trainable tensor. One node per tensor per graph, so
    // repeated use accumulates gradient naturally.
    Node* param(Tensor& t, const std::string& name) {
        auto it = param_nodes_.find(&t);
        if (it != param_nodes_.end()) return it->second;
        Node* n = make("param:" + name, t, {}, nullptr);
        n->param = &t;
        param_nodes_.emplace(&t, n);
        return n;
    }

    Node* constant(Tensor t, const std::string& name = "const") {
        return make(name, std::move(t), {}, nullptr);
    }

    Node* add(Node* a, Node* b) {
        require_same_shape("add", a, b);
        Tensor out = a->value;
        for (size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
        return make("add", std::move(out), {a, b}, [](Node& n) {
            for (size_t i = 0; i < n.numel(); ++i) {
                n.inputs[0]->grad[i] += n.grad[i];
                n.inputs[1]->grad[i] += n.grad[i];
            }
        });
    }

    Node* add_n(std::vector<Node*> xs) {
        if (xs.empty()) throw ContractViolation("add_n needs at least one input");
        for (Node* x : xs) require_same_shape("add_n", xs[0], x);
        Tensor out(xs[0]->shape());
        for (Node* x : xs)
            for (size_t i = 0; i < out.numel(); ++i) out[i] += x->value[i];
        return make("add_n", std::move(out), std::move(xs), [](Node& n) {
            for (Node* in : n.inputs)
                for (size_t i = 0; i < n.numel(); ++i) in->grad[i] += n.grad[i];
        });
    }

    Node* sub(Node* a, Node* b) {
        require_same_shape("sub", a, b);
        Tensor out = a->value;
        for (size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
        return make("sub", std::move(out), {a, b}, [](Node& n) {
            for (size_t i = 0; i < n.numel(); ++i) {
                n.inputs[0]->grad[i] += n.grad[i];
                n.inputs[1]->grad[i] -= n.grad[i];
            }
        });
    }

    Node* hadamard(Node* a, Node* b) {
        require_same_shape("hadamard", a, b);
        Tensor out = a->value;
        for (size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
        return make("hadamard", std::move(out), {a, b}, [](Node& n) {
            for (size_t i = 0; i < n.numel(); ++i) {
                n.inputs[0]->grad[i] += n.grad[i] * n.inputs[1]->value[i];
                n.inputs[1]->grad[i] += n.grad[i] * n.inputs[0]->value[i];
            }
        });
    }

    Node* scale(Node* a, double c) {
        Tensor out = a->value;
        for (size_t i = 0; i < out.numel(); ++i) out[i] *= c;
        return make("scale", std::move(out), {a}, [c](Node& n) {
            for (size_t i = 0; i < n.numel(); ++i) n.inputs[0]->grad[i] += c * n.grad[i];
        });
    }

    // mat[m,n] + row vector [n] broadcast over rows
    Node* add_row(Node* mat, Node* vec) {
        if (mat->value.rank() != 2 || vec->value.rank() != 1 ||
            mat->value.dim(1) != vec->value.dim(0))
            throw ContractViolation("add_row shape mismatch");
        Tensor out = mat->value;
        const size_t m = out.dim(0), n = out.dim(1);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) out.at(i, j) += vec->value[j];
        return make("add_row", std::move(out), {mat, vec}, [m, n](Node& node) {
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) {
                    node.inputs[0]->grad[i * n + j] += node.grad[i * n + j];
                    node.inputs[1]->grad[j] += node.grad[i * n + j];
                }
        });
    }

    Node* matmul(Node* a, Node* b) {
        if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
            throw ContractViolation("matmul shape mismatch");
        const size_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
        Tensor out({m, n});
        matmul_raw(a->value.values().data(), b->value.values().data(), out.values().data(), m, k,
                   n, false);
        return make("matmul", std::move(out), {a, b}, [m, k, n](Node& node) {
            // dA += dC * B^T ; dB += A^T * dC
            matmul_nt_raw(node.grad.data(), node.inputs[1]->value.values().data(),
                          node.inputs[0]->grad.data(), m, n, k, true);
            matmul_tn_raw(node.inputs[0]->value.values().data(), node.grad.data(),
                          node.inputs[1]->grad.data(), k, m, n, true);
        });
    }

    Node* transpose(Node* a) {
        if (a->value.rank() != 2) throw ContractViolation("transpose expects a matrix");
        const size_t m = a->value.dim(0), n = a->value.dim(1);
        Tensor out({n, m});
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) out.at(j, i) = a->value.at(i, j);
        return make("transpose", std::move(out), {a}, [m, n](Node& node) {
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j)
                    node.inputs[0]->grad[i * n + j] += node.grad[j * m + i];
        });
    }

    Node* tanh(Node* a) {
        Tensor out = a->value;
        for (size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
        return make("tanh", std::move(out), {a}, [](Node& n) {
            for (size_t i = 0; i < n.numel(); ++i) {
                const double y = n.value[i];
                n.inputs[0]->grad[i] += n.grad[i] * (1.0 - y * y);
            }
        });
    }

    Node* softmax_rows(Node* a) {
        if (a->value.rank() != 2) throw ContractViolation("softmax_rows expects a matrix");
        const size_t m = a->value.dim(0), n = a->value.dim(1);
        Tensor out = a->value;
        for (size_t i = 0; i < m; ++i) {
            double mx = out.at(i, 0);
            for (size_t j = 1; j < n; ++j) mx = std::max(mx, out.at(i, j));
            double z = 0.0;
            for (size_t j = 0; j < n; ++j) {
                out.at(i, j) = std::exp(out.at(i, j) - mx);
                z += out.at(i, j);
            }
            for (size_t j = 0; j < n; ++j) out.at(i, j) /= z;
        }
        return make("softmax_rows", std::move(out), {a}, [m, n](Node& node) {
            for (size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (size_t j = 0; j < n; ++j)
                    dot += node.grad[i * n + j] * node.value[i * n + j];
                for (size_t j = 0; j < n; ++j)
                    node.inputs[0]->grad[i * n + j] +=
                        node.value[i * n + j] * (node.grad[i * n + j] - dot);
            }
        });
    }

    // Gather rows of an embedding table: out[i] = table[ids[i]].
    Node* embedding(Node* table, std::vector<int> ids) {
        if (table->value.rank() != 2) throw ContractViolation("embedding expects a 2-d table");
        const size_t d = table->value.dim(1);
        const long rows = static_cast<long>(table->value.dim(0));
        Tensor out({ids.size(), d});
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= rows)
                throw ContractViolation("embedding id out of range");
            for (size_t j = 0; j < d; ++j)
                out.at(i, j) = table->value.at(static_cast<size_t>(ids[i]), j);
        }
        return make("embedding", std::move(out), {table},
                    [ids = std::move(ids), d](Node& node) {
                        for (size_t i = 0; i < ids.size(); ++i)
                            for (size_t j = 0; j < d; ++j)
                                node.inputs[0]->grad[static_cast<size_t>(ids[i]) * d + j] +=
                                    node.grad[i * d + j];
                    });
    }

    Node* row_select(Node* a, std::vector<size_t> rows) {
        if (a->value.rank() != 2) throw ContractViolation("row_select expects a matrix");
        const size_t d = a->value.dim(1);
        Tensor out({rows.size(), d});
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] >= a->value.dim(0)) throw ContractViolation("row_select out of range");
            for (size_t j = 0; j < d; ++j) out.at(i, j) = a->value.at(rows[i], j);
        }
        return make("row_select", std::move(out), {a}, [rows = std::move(rows), d](Node& node) {
            for (size_t i = 0; i < rows.size(); ++i)
                for (size_t j = 0; j < d; ++j)
                    node.inputs[0]->grad[rows[i] * d + j] += node.grad[i * d + j];
        });
    }

    // Rotate each row by its position: out[i] = R_{pos[i]} a[i]. The rotation
    // is orthogonal, so the backward pass rotates the gradient by -pos.
    Node* rope_rows(Node* a, std::vector<long> positions, double base) {
        if (a->value.rank() != 2) throw ContractViolation("rope_rows expects a matrix");
        if (positions.size() != a->value.dim(0))
            throw ContractViolation("rope_rows positions/rows mismatch");
        const size_t d = a->value.dim(1);
        RopeAngles angles(d, base);
        Tensor out = a->value;
        for (size_t i = 0; i < positions.size(); ++i)
            rope_apply(out.values().data() + i * d, angles, static_cast<double>(positions[i]));
        return make("rope_rows", std::move(out), {a},
                    [positions = std::move(positions), angles, d](Node& node) {
                        std::vector<double> tmp(d);
                        for (size_t i = 0; i < positions.size(); ++i) {
                            for (size_t j = 0; j < d; ++j) tmp[j] = node.grad[i * d + j];
                            rope_apply(tmp.data(), angles, -static_cast<double>(positions[i]));
                            for (size_t j = 0; j < d; ++j)
                                node.inputs[0]->grad[i * d + j] += tmp[j];
                        }
                    });
    }

    Node* dot(Node* a, Node* b) {
        if (a->value.rank() != 1 || b->value.rank() != 1 || a->numel() != b->numel())
            throw ContractViolation("dot expects two equal-length vectors");
        double acc = 0.0;
        for (size_t i = 0; i < a->numel(); ++i) acc += a->value[i] * b->value[i];
        return make("dot", Tensor::scalar(acc), {a, b}, [](Node& n) {
            for (size_t i = 0; i < n.inputs[0]->numel(); ++i) {
                n.inputs[0]->grad[i] += n.grad[0] * n.inputs[1]->value[i];
                n.inputs[1]->grad[i] += n.grad[0] * n.inputs[0]->value[i];
            }
        });
    }

    Node* sum_all(Node* a) {
        double acc = 0.0;
        for (size_t i = 0; i < a->numel(); ++i) acc += a->value[i];
        return make("sum_all", Tensor::scalar(acc), {a}, [](Node& n) {
            for (size_t i = 0; i < n.inputs[0]->numel(); ++i)
                n.inputs[0]->grad[i] += n.grad[0];
        });
    }

    Node* reshape(Node* a, std::vector<size_t> shape) {
        if (Tensor::count(shape) != a->numel())
            throw ContractViolation("reshape numel mismatch");
        Tensor out(std::move(shape), a->value.values());
        return make("reshape", std::move(out), {a}, [](Node& n) {
            for (size_t i = 0; i < n.numel(); ++i) n.inputs[0]->grad[i] += n.grad[i];
        });
    }

    // GlobalPointer span loss over an L x L score matrix. P holds the positive
    // (start, end) pairs; the negative set is every other valid span (i <= j).
    //   loss = log(1 + sum_P exp(-s)) + log(1 + sum_Q exp(s))
    Node* gp_span_loss(Node* scores, const std::set<std::pair<size_t, size_t>>& positives) {
        if (scores->value.rank() != 2 || scores->value.dim(0) != scores->value.dim(1))
            throw ContractViolation("gp_span_loss expects a square matrix");
        const size_t L = scores->value.dim(0);
        for (const auto& [i, j] : positives)
            if (i > j || j >= L) throw ContractViolation("gp_span_loss positive span invalid");

        std::vector<std::pair<size_t, size_t>> pos(positives.begin(), positives.end());
        std::vector<std::pair<size_t, size_t>> neg;
        for (size_t i = 0; i < L; ++i)
            for (size_t j = i; j < L; ++j)
                if (!positives.count({i, j})) neg.emplace_back(i, j);

        std::vector<double> pos_terms(pos.size()), neg_terms(neg.size());
        for (size_t k = 0; k < pos.size(); ++k)
            pos_terms[k] = -scores->value.at(pos[k].first, pos[k].second);
        for (size_t k = 0; k < neg.size(); ++k)
            neg_terms[k] = scores->value.at(neg[k].first, neg[k].second);

        std::vector<double> wp, wn;
        const double loss = log1p_sum_exp(pos_terms, &wp) + log1p_sum_exp(neg_terms, &wn);

        return make("gp_span_loss", Tensor::scalar(loss), {scores},
                    [pos = std::move(pos), neg = std::move(neg), wp = std::move(wp),
                     wn = std::move(wn), L](Node& node) {
                        for (size_t k = 0; k < pos.size(); ++k)
                            node.inputs[0]->grad[pos[k].first * L + pos[k].second] -=
                                node.grad[0] * wp[k];
                        for (size_t k = 0; k < neg.size(); ++k)
                            node.inputs[0]->grad[neg[k].first * L + neg[k].second] +=
                                node.grad[0] * wn[k];
                    });
    }

    // Reverse sweep from a scalar loss node. Accumulates into the bound
    // parameters' gradients (callers zero them first) and returns the loss.
    double backward(Node* loss) {
        if (loss->numel() != 1) throw ContractViolation("backward expects a scalar loss");
        if (!std::isfinite(loss->value[0]))
            throw NumericError("non-finite loss at op " + first_non_finite());
        loss->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if (it->backward) it->backward(*it);
        for (auto& [tensor, node] : param_nodes_) {
            auto& g = tensor->grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += node->grad[i];
        }
        return loss->value[0];
    }

    size_t node_count() const { return nodes_.size(); }

private:
    Node* make(std::string op, Tensor value, std::vector<Node*> inputs,
               std::function<void(Node&)> bw) {
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.op = std::move(op);
        n.value = std::move(value);
        n.grad.assign(n.value.numel(), 0.0);
        n.inputs = std::move(inputs);
        n.backward = std::move(bw);
        return &n;
    }

    static void require_same_shape(const char* op, Node* a, Node* b) {
        if (a->value.shape() != b->value.shape())
            throw ContractViolation(std::string(op) + " shape mismatch");
    }

    std::string first_non_finite() const {
        for (const auto& n : nodes_)
            if (!n.value.all_finite()) return n.op;
        return "<unknown>";
    }

    std::deque<Node> nodes_;
    std::unordered_map<Tensor*, Node*> param_nodes_;
};

} // namespace ordex::nn
