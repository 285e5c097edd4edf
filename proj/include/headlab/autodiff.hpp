#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "headlab/errors.hpp"
#include "headlab/tensor.hpp"

namespace headlab {

using TensorId = std::size_t;

class Graph;

// One recorded operation. Leaves have no recompute/accumulate rules.
// Nodes are appended in evaluation order, so the list is topological.
struct Node {
    std::string op;
    std::vector<TensorId> inputs;
    Tensor out;
    std::function<void(Graph&, Node&)> recompute;
    std::function<void(Graph&, Node&)> accumulate;
};

class Graph {
public:
    TensorId leaf(Tensor t) {
        Node n;
        n.op = "leaf";
        n.out = std::move(t);
        if (n.out.requires_grad && n.out.grad.size() != n.out.values.size()) {
            n.out.grad.assign(n.out.values.size(), 0.0);
        }
        return push(std::move(n));
    }

    Tensor& value(TensorId id) { return nodes_[id].out; }
    const Tensor& value(TensorId id) const { return nodes_[id].out; }
    Node& node(TensorId id) { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

    // ---- operations ------------------------------------------------------

    TensorId matmul(TensorId ai, TensorId bi) {
        const Tensor& a = value(ai);
        const Tensor& b = value(bi);
        if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
            throw DimensionError("matmul: incompatible shapes " +
                                 shape_str(a.shape) + " and " + shape_str(b.shape));
        }
        Node n = make("matmul", {ai, bi}, Shape{a.shape[0], b.shape[1]});
        n.recompute = [ai, bi](Graph& g, Node& self) {
            const Tensor& A = g.value(ai);
            const Tensor& B = g.value(bi);
            const std::size_t p = A.shape[0], q = A.shape[1], r = B.shape[1];
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < r; ++j) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < q; ++k) {
                        acc += A.values[i * q + k] * B.values[k * r + j];
                    }
                    self.out.values[i * r + j] = acc;
                }
            }
        };
        n.accumulate = [ai, bi](Graph& g, Node& self) {
            Tensor& A = g.value(ai);
            Tensor& B = g.value(bi);
            const std::size_t p = A.shape[0], q = A.shape[1], r = B.shape[1];
            if (A.requires_grad) {
                for (std::size_t i = 0; i < p; ++i) {
                    for (std::size_t k = 0; k < q; ++k) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < r; ++j) {
                            acc += self.out.grad[i * r + j] * B.values[k * r + j];
                        }
                        A.grad[i * q + k] += acc;
                    }
                }
            }
            if (B.requires_grad) {
                for (std::size_t k = 0; k < q; ++k) {
                    for (std::size_t j = 0; j < r; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < p; ++i) {
                            acc += A.values[i * q + k] * self.out.grad[i * r + j];
                        }
                        B.grad[k * r + j] += acc;
                    }
                }
            }
        };
        return commit(std::move(n));
    }

    TensorId transpose(TensorId ai) {
        const Tensor& a = value(ai);
        if (a.rank() != 2) {
            throw DimensionError("transpose: expected rank-2 tensor, got " + shape_str(a.shape));
        }
        Node n = make("transpose", {ai}, Shape{a.shape[1], a.shape[0]});
        n.recompute = [ai](Graph& g, Node& self) {
            const Tensor& A = g.value(ai);
            const std::size_t p = A.shape[0], q = A.shape[1];
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < q; ++j) {
                    self.out.values[j * p + i] = A.values[i * q + j];
                }
            }
        };
        n.accumulate = [ai](Graph& g, Node& self) {
            Tensor& A = g.value(ai);
            if (!A.requires_grad) return;
            const std::size_t p = A.shape[0], q = A.shape[1];
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < q; ++j) {
                    A.grad[i * q + j] += self.out.grad[j * p + i];
                }
            }
        };
        return commit(std::move(n));
    }

    TensorId relu(TensorId ai) {
        Node n = make("relu", {ai}, value(ai).shape);
        n.recompute = [ai](Graph& g, Node& self) {
            const Tensor& A = g.value(ai);
            for (std::size_t i = 0; i < A.numel(); ++i) {
                self.out.values[i] = A.values[i] > 0.0 ? A.values[i] : 0.0;
            }
        };
        n.accumulate = [ai](Graph& g, Node& self) {
            Tensor& A = g.value(ai);
            if (!A.requires_grad) return;
            // gradient at exactly 0 is defined as 0
            for (std::size_t i = 0; i < A.numel(); ++i) {
                if (A.values[i] > 0.0) A.grad[i] += self.out.grad[i];
            }
        };
        return commit(std::move(n));
    }

    // Broadcast add: rank-2 [n x m] + [m], or rank-4 [n x c x h x w] + [c].
    TensorId add_bias(TensorId xi, TensorId bi) {
        const Tensor& x = value(xi);
        const Tensor& b = value(bi);
        if (b.rank() != 1) {
            throw DimensionError("add_bias: bias must be rank-1, got " + shape_str(b.shape));
        }
        const bool rank2 = x.rank() == 2;
        if (!rank2 && x.rank() != 4) {
            throw DimensionError("add_bias: input must be rank-2 or rank-4, got " +
                                 shape_str(x.shape));
        }
        const std::size_t channels = rank2 ? x.shape[1] : x.shape[1];
        if (b.shape[0] != channels) {
            throw DimensionError("add_bias: bias " + shape_str(b.shape) +
                                 " does not match input " + shape_str(x.shape));
        }
        Node n = make("add_bias", {xi, bi}, x.shape);
        n.recompute = [xi, bi, rank2](Graph& g, Node& self) {
            const Tensor& X = g.value(xi);
            const Tensor& B = g.value(bi);
            if (rank2) {
                const std::size_t rows = X.shape[0], cols = X.shape[1];
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        self.out.values[i * cols + j] = X.values[i * cols + j] + B.values[j];
                    }
                }
            } else {
                const std::size_t c = X.shape[1], plane = X.shape[2] * X.shape[3];
                for (std::size_t i = 0; i < X.numel(); ++i) {
                    self.out.values[i] = X.values[i] + B.values[(i / plane) % c];
                }
            }
        };
        n.accumulate = [xi, bi, rank2](Graph& g, Node& self) {
            Tensor& X = g.value(xi);
            Tensor& B = g.value(bi);
            if (X.requires_grad) {
                for (std::size_t i = 0; i < X.numel(); ++i) X.grad[i] += self.out.grad[i];
            }
            if (B.requires_grad) {
                if (rank2) {
                    const std::size_t rows = X.shape[0], cols = X.shape[1];
                    for (std::size_t i = 0; i < rows; ++i) {
                        for (std::size_t j = 0; j < cols; ++j) {
                            B.grad[j] += self.out.grad[i * cols + j];
                        }
                    }
                } else {
                    const std::size_t c = X.shape[1], plane = X.shape[2] * X.shape[3];
                    for (std::size_t i = 0; i < X.numel(); ++i) {
                        B.grad[(i / plane) % c] += self.out.grad[i];
                    }
                }
            }
        };
        return commit(std::move(n));
    }

    TensorId scale(TensorId ai, double factor) {
        Node n = make("scale", {ai}, value(ai).shape);
        n.recompute = [ai, factor](Graph& g, Node& self) {
            const Tensor& A = g.value(ai);
            for (std::size_t i = 0; i < A.numel(); ++i) {
                self.out.values[i] = factor * A.values[i];
            }
        };
        n.accumulate = [ai, factor](Graph& g, Node& self) {
            Tensor& A = g.value(ai);
            if (!A.requires_grad) return;
            for (std::size_t i = 0; i < A.numel(); ++i) {
                A.grad[i] += factor * self.out.grad[i];
            }
        };
        return commit(std::move(n));
    }

    TensorId sum(TensorId ai) {
        Node n = make("sum", {ai}, Shape{1});
        n.recompute = [ai](Graph& g, Node& self) {
            const Tensor& A = g.value(ai);
            double acc = 0.0;
            for (double v : A.values) acc += v;
            self.out.values[0] = acc;
        };
        n.accumulate = [ai](Graph& g, Node& self) {
            Tensor& A = g.value(ai);
            if (!A.requires_grad) return;
            for (std::size_t i = 0; i < A.numel(); ++i) A.grad[i] += self.out.grad[0];
        };
        return commit(std::move(n));
    }

    TensorId reshape(TensorId ai, Shape target) {
        check_shape(target);
        const Tensor& a = value(ai);
        if (shape_numel(target) != a.numel()) {
            throw DimensionError("reshape: cannot view " + shape_str(a.shape) + " as " +
                                 shape_str(target));
        }
        Node n = make("reshape", {ai}, target);
        n.recompute = [ai](Graph& g, Node& self) {
            self.out.values = g.value(ai).values;
        };
        n.accumulate = [ai](Graph& g, Node& self) {
            Tensor& A = g.value(ai);
            if (!A.requires_grad) return;
            for (std::size_t i = 0; i < A.numel(); ++i) A.grad[i] += self.out.grad[i];
        };
        return commit(std::move(n));
    }

    // Divides each slice along `axis` by max(l2-norm, eps). Slices whose norm
    // falls at or below eps pass through scaled by 1/eps with zero gradient.
    TensorId l2_normalize(TensorId ai, std::size_t axis, double eps = 1e-12) {
        const Tensor& a = value(ai);
        if (axis >= a.rank()) {
            throw DimensionError("l2_normalize: axis " + std::to_string(axis) +
                                 " out of range for " + shape_str(a.shape));
        }
        if (eps < 0.0) throw RangeError("l2_normalize: eps must be non-negative");
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= a.shape[i];
        for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape[i];
        const std::size_t len = a.shape[axis];
        Node n = make("l2_normalize", {ai}, a.shape);
        n.recompute = [ai, outer, inner, len, eps](Graph& g, Node& self) {
            const Tensor& A = g.value(ai);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    double sq = 0.0;
                    for (std::size_t t = 0; t < len; ++t) {
                        double v = A.values[(o * len + t) * inner + i];
                        sq += v * v;
                    }
                    const double r = std::max(std::sqrt(sq), eps);
                    for (std::size_t t = 0; t < len; ++t) {
                        const std::size_t idx = (o * len + t) * inner + i;
                        self.out.values[idx] = r > 0.0 ? A.values[idx] / r : 0.0;
                    }
                }
            }
        };
        n.accumulate = [ai, outer, inner, len, eps](Graph& g, Node& self) {
            Tensor& A = g.value(ai);
            if (!A.requires_grad) return;
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    double sq = 0.0;
                    for (std::size_t t = 0; t < len; ++t) {
                        double v = A.values[(o * len + t) * inner + i];
                        sq += v * v;
                    }
                    const double norm = std::sqrt(sq);
                    if (norm <= eps) continue;  // eps guard: dead zone
                    double dot = 0.0;
                    for (std::size_t t = 0; t < len; ++t) {
                        const std::size_t idx = (o * len + t) * inner + i;
                        dot += self.out.values[idx] * self.out.grad[idx];
                    }
                    for (std::size_t t = 0; t < len; ++t) {
                        const std::size_t idx = (o * len + t) * inner + i;
                        A.grad[idx] +=
                            (self.out.grad[idx] - self.out.values[idx] * dot) / norm;
                    }
                }
            }
        };
        return commit(std::move(n));
    }

    TensorId global_avg_pool(TensorId ai) {
        const Tensor& a = value(ai);
        if (a.rank() != 4) {
            throw DimensionError("global_avg_pool: expected rank-4 input, got " +
                                 shape_str(a.shape));
        }
        Node n = make("global_avg_pool", {ai}, Shape{a.shape[0], a.shape[1]});
        n.recompute = [ai](Graph& g, Node& self) {
            const Tensor& A = g.value(ai);
            const std::size_t plane = A.shape[2] * A.shape[3];
            const std::size_t maps = A.shape[0] * A.shape[1];
            for (std::size_t m = 0; m < maps; ++m) {
                double acc = 0.0;
                for (std::size_t p = 0; p < plane; ++p) acc += A.values[m * plane + p];
                self.out.values[m] = acc / static_cast<double>(plane);
            }
        };
        n.accumulate = [ai](Graph& g, Node& self) {
            Tensor& A = g.value(ai);
            if (!A.requires_grad) return;
            const std::size_t plane = A.shape[2] * A.shape[3];
            const std::size_t maps = A.shape[0] * A.shape[1];
            for (std::size_t m = 0; m < maps; ++m) {
                const double share = self.out.grad[m] / static_cast<double>(plane);
                for (std::size_t p = 0; p < plane; ++p) A.grad[m * plane + p] += share;
            }
        };
        return commit(std::move(n));
    }

    // 3x3 cross-correlation, zero padding of 1, stride 1 or 2.
    TensorId conv2d(TensorId xi, TensorId ki, std::size_t stride) {
        const Tensor& x = value(xi);
        const Tensor& k = value(ki);
        if (x.rank() != 4) {
            throw DimensionError("conv2d: input must be rank-4, got " + shape_str(x.shape));
        }
        if (k.rank() != 4 || k.shape[2] != 3 || k.shape[3] != 3) {
            throw DimensionError("conv2d: kernel must be [o x c x 3 x 3], got " +
                                 shape_str(k.shape));
        }
        if (x.shape[1] != k.shape[1]) {
            throw DimensionError("conv2d: channel mismatch between input " +
                                 shape_str(x.shape) + " and kernel " + shape_str(k.shape));
        }
        if (stride != 1 && stride != 2) {
            throw RangeError("conv2d: stride must be 1 or 2");
        }
        const std::size_t oh = (x.shape[2] - 1) / stride + 1;
        const std::size_t ow = (x.shape[3] - 1) / stride + 1;
        Node n = make("conv2d", {xi, ki}, Shape{x.shape[0], k.shape[0], oh, ow});
        n.recompute = [xi, ki, stride, oh, ow](Graph& g, Node& self) {
            const Tensor& X = g.value(xi);
            const Tensor& K = g.value(ki);
            const std::size_t nb = X.shape[0], ic = X.shape[1], h = X.shape[2], w = X.shape[3];
            const std::size_t oc = K.shape[0];
            for (std::size_t b = 0; b < nb; ++b) {
                for (std::size_t o = 0; o < oc; ++o) {
                    for (std::size_t i = 0; i < oh; ++i) {
                        for (std::size_t j = 0; j < ow; ++j) {
                            double acc = 0.0;
                            for (std::size_t c = 0; c < ic; ++c) {
                                for (std::size_t di = 0; di < 3; ++di) {
                                    const std::ptrdiff_t si =
                                        static_cast<std::ptrdiff_t>(i * stride + di) - 1;
                                    if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
                                    for (std::size_t dj = 0; dj < 3; ++dj) {
                                        const std::ptrdiff_t sj =
                                            static_cast<std::ptrdiff_t>(j * stride + dj) - 1;
                                        if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
                                        acc += X.at(b, c, si, sj) * K.at(o, c, di, dj);
                                    }
                                }
                            }
                            self.out.at(b, o, i, j) = acc;
                        }
                    }
                }
            }
        };
        n.accumulate = [xi, ki, stride, oh, ow](Graph& g, Node& self) {
            Tensor& X = g.value(xi);
            Tensor& K = g.value(ki);
            const std::size_t nb = X.shape[0], ic = X.shape[1], h = X.shape[2], w = X.shape[3];
            const std::size_t oc = K.shape[0];
            const bool gx = X.requires_grad, gk = K.requires_grad;
            if (!gx && !gk) return;
            for (std::size_t b = 0; b < nb; ++b) {
                for (std::size_t o = 0; o < oc; ++o) {
                    for (std::size_t i = 0; i < oh; ++i) {
                        for (std::size_t j = 0; j < ow; ++j) {
                            const double go = self.out.grad[((b * oc + o) * oh + i) * ow + j];
                            if (go == 0.0) continue;
                            for (std::size_t c = 0; c < ic; ++c) {
                                for (std::size_t di = 0; di < 3; ++di) {
                                    const std::ptrdiff_t si =
                                        static_cast<std::ptrdiff_t>(i * stride + di) - 1;
                                    if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
                                    for (std::size_t dj = 0; dj < 3; ++dj) {
                                        const std::ptrdiff_t sj =
                                            static_cast<std::ptrdiff_t>(j * stride + dj) - 1;
                                        if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
                                        const std::size_t xidx =
                                            ((b * ic + c) * h + si) * w + sj;
                                        const std::size_t kidx =
                                            ((o * ic + c) * 3 + di) * 3 + dj;
                                        if (gx) X.grad[xidx] += K.values[kidx] * go;
                                        if (gk) K.grad[kidx] += X.values[xidx] * go;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
        return commit(std::move(n));
    }

    // Mean over the batch of -log softmax(logits)[label], via max-subtracted
    // log-sum-exp.
    TensorId softmax_cross_entropy(TensorId li, std::vector<int> labels) {
        const Tensor& l = value(li);
        if (l.rank() != 2) {
            throw DimensionError("softmax_cross_entropy: logits must be rank-2, got " +
                                 shape_str(l.shape));
        }
        if (labels.size() != l.shape[0]) {
            throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                 " labels for " + std::to_string(l.shape[0]) + " rows");
        }
        const int m = static_cast<int>(l.shape[1]);
        for (int y : labels) {
            if (y < 0 || y >= m) {
                throw IndexError("softmax_cross_entropy: label " + std::to_string(y) +
                                 " outside [0, " + std::to_string(m) + ")");
            }
        }
        Node n = make("softmax_cross_entropy", {li}, Shape{1});
        n.recompute = [li, labels](Graph& g, Node& self) {
            const Tensor& L = g.value(li);
            const std::size_t rows = L.shape[0], cols = L.shape[1];
            double total = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                const double* z = &L.values[i * cols];
                double mx = z[0];
                for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, z[j]);
                double se = 0.0;
                for (std::size_t j = 0; j < cols; ++j) se += std::exp(z[j] - mx);
                total += mx + std::log(se) - z[labels[i]];
            }
            self.out.values[0] = total / static_cast<double>(rows);
        };
        n.accumulate = [li, labels](Graph& g, Node& self) {
            Tensor& L = g.value(li);
            if (!L.requires_grad) return;
            const std::size_t rows = L.shape[0], cols = L.shape[1];
            const double go = self.out.grad[0] / static_cast<double>(rows);
            for (std::size_t i = 0; i < rows; ++i) {
                const double* z = &L.values[i * cols];
                double mx = z[0];
                for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, z[j]);
                double se = 0.0;
                for (std::size_t j = 0; j < cols; ++j) se += std::exp(z[j] - mx);
                for (std::size_t j = 0; j < cols; ++j) {
                    const double p = std::exp(z[j] - mx) / se;
                    const double ind = static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0;
                    L.grad[i * cols + j] += go * (p - ind);
                }
            }
        };
        return commit(std::move(n));
    }

    // ---- evaluation ------------------------------------------------------

    // Recomputes every non-leaf node in topological (creation) order.
    void forward_all() {
        for (Node& n : nodes_) {
            if (n.recompute) n.recompute(*this, n);
        }
    }

    // Reverse sweep from `root`; each node is visited exactly once.
    void backward(TensorId root) {
        if (value(root).numel() != 1) {
            throw ContractError("backward: root must be scalar, got " +
                                shape_str(value(root).shape));
        }
        for (Node& n : nodes_) n.out.zero_grad();
        if (!value(root).requires_grad) return;
        nodes_[root].out.grad[0] = 1.0;
        for (std::size_t i = root + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.accumulate && n.out.requires_grad) n.accumulate(*this, n);
        }
    }

private:
    Node make(std::string op, std::vector<TensorId> inputs, Shape out_shape) {
        Node n;
        n.op = std::move(op);
        n.out = Tensor::zeros(std::move(out_shape));
        bool rg = false;
        for (TensorId id : inputs) rg = rg || value(id).requires_grad;
        n.out.set_requires_grad(rg);
        n.inputs = std::move(inputs);
        return n;
    }

    TensorId commit(Node n) {
        n.recompute(*this, n);
        return push(std::move(n));
    }

    TensorId push(Node n) {
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    std::vector<Node> nodes_;
};

// Row-wise stable softmax of a rank-2 tensor (plain math, not recorded).
inline Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw DimensionError("softmax_rows: expected rank-2 tensor, got " +
                             shape_str(logits.shape));
    }
    Tensor out = Tensor::zeros(logits.shape);
    const std::size_t rows = logits.shape[0], cols = logits.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
        const double* z = &logits.values[i * cols];
        double mx = z[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, z[j]);
        double se = 0.0;
        for (std::size_t j = 0; j < cols; ++j) se += std::exp(z[j] - mx);
        for (std::size_t j = 0; j < cols; ++j) {
            out.values[i * cols + j] = std::exp(z[j] - mx) / se;
        }
    }
    return out;
}

}  // namespace headlab
