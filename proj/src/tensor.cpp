#include "divbnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace divbnn {

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

namespace detail {
void Node::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}
} // namespace detail

using detail::Node;

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
}

void require_2d(const char* op, const Tensor& t) {
    if (t.shape().size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " +
                                    shape_str(t.shape()));
}

std::shared_ptr<Node> make_node(Shape shape, std::vector<scalar_t> values, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return n;
}

} // namespace

Tensor make_op(const char* op, Shape shape, std::vector<scalar_t> values,
               std::vector<Tensor> parents, std::function<void(Node&)> backprop) {
    auto n = make_node(std::move(shape), std::move(values), false);
    n->is_leaf = false;
    n->op = op;
    for (const auto& p : parents) n->parents.push_back(p.node_);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return Tensor(std::move(n));
}

// --- Tensor basics -----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<scalar_t>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, scalar_t value, bool requires_grad) {
    size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<scalar_t>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<scalar_t> values, bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " needs " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(values.size()));
    return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(scalar_t value, bool requires_grad) {
    return Tensor(make_node(Shape{1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
size_t Tensor::numel() const { return node_->values.size(); }
size_t Tensor::rows() const { return node_->shape.empty() ? 1 : node_->shape.front(); }
size_t Tensor::cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }

const std::vector<scalar_t>& Tensor::values() const { return node_->values; }

std::vector<scalar_t>& Tensor::mutable_values() {
    if (!node_->is_leaf)
        throw std::logic_error("mutable_values: only leaf tensors may be mutated in place");
    return node_->values;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->values.size(); }

const std::vector<scalar_t>& Tensor::grad() const {
    if (!has_grad()) throw std::logic_error("grad: no gradient computed for this tensor");
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

scalar_t Tensor::item() const {
    if (numel() != 1)
        throw std::logic_error("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->values[0];
}

scalar_t Tensor::at(size_t r, size_t c) const {
    require_2d("at", *this);
    return node_->values[r * cols() + c];
}

bool Tensor::all_finite() const {
    for (scalar_t v : node_->values)
        if (!std::isfinite(v)) return false;
    return true;
}

bool Tensor::grad_all_finite() const {
    for (scalar_t v : node_->grad)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::detach() const {
    return Tensor(make_node(node_->shape, node_->values, false));
}

void Tensor::backward() {
    if (numel() != 1) throw std::logic_error("backward: loss must be scalar, got " + shape_str(shape()));
    if (node_->backward_done)
        throw std::logic_error("backward: already called on this graph; rebuild the forward pass");
    node_->backward_done = true;

    // Post-order DFS over the requires_grad subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    if (node_->requires_grad) {
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
    }
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) {
            for (auto& p : n->parents)
                if (p->requires_grad) p->ensure_grad();
            n->backprop(*n);
        }
    }
}

// --- elementwise binaries with scalar broadcast ------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    // bwd(g, av, bv, out) -> {da, db} contributions per element
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape()) shape_error(op, a, b);
    const Shape& out_shape = a_scalar ? b.shape() : a.shape();
    size_t n = shape_numel(out_shape);
    std::vector<scalar_t> out(n);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < n; ++i)
        out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    return make_op(op, out_shape, std::move(out), {a, b},
                   [a_scalar, b_scalar, bwd](Node& node) {
                       Node* pa = node.parents[0].get();
                       Node* pb = node.parents[1].get();
                       size_t n = node.values.size();
                       for (size_t i = 0; i < n; ++i) {
                           scalar_t g = node.grad[i];
                           scalar_t x = pa->values[a_scalar ? 0 : i];
                           scalar_t y = pb->values[b_scalar ? 0 : i];
                           auto [da, db] = bwd(g, x, y, node.values[i]);
                           if (pa->requires_grad) pa->grad[a_scalar ? 0 : i] += da;
                           if (pb->requires_grad) pb->grad[b_scalar ? 0 : i] += db;
                       }
                   });
}

struct Pair { scalar_t da, db; };

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", a, b, [](scalar_t x, scalar_t y) { return x + y; },
                     [](scalar_t g, scalar_t, scalar_t, scalar_t) { return Pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", a, b, [](scalar_t x, scalar_t y) { return x - y; },
                     [](scalar_t g, scalar_t, scalar_t, scalar_t) { return Pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op("mul", a, b, [](scalar_t x, scalar_t y) { return x * y; },
                     [](scalar_t g, scalar_t x, scalar_t y, scalar_t) { return Pair{g * y, g * x}; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    for (scalar_t y : b.values())
        if (y == 0.0) throw std::domain_error("divide: zero denominator");
    return binary_op("div", a, b, [](scalar_t x, scalar_t y) { return x / y; },
                     [](scalar_t g, scalar_t, scalar_t y, scalar_t out) {
                         return Pair{g / y, -g * out / y};
                     });
}

// --- unary ops ----------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* op, const Tensor& a, Fwd fwd, Bwd bwd) {
    // bwd(g, x, out) -> dx
    size_t n = a.numel();
    std::vector<scalar_t> out(n);
    const auto& av = a.values();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
    return make_op(op, a.shape(), std::move(out), {a}, [bwd](Node& node) {
        Node* p = node.parents[0].get();
        for (size_t i = 0; i < node.values.size(); ++i)
            p->grad[i] += bwd(node.grad[i], p->values[i], node.values[i]);
    });
}

} // namespace

Tensor scale(const Tensor& a, scalar_t c) {
    return unary_op("scale", a, [c](scalar_t x) { return c * x; },
                    [c](scalar_t g, scalar_t, scalar_t) { return c * g; });
}

Tensor add_scalar(const Tensor& a, scalar_t c) {
    return unary_op("add_scalar", a, [c](scalar_t x) { return x + c; },
                    [](scalar_t g, scalar_t, scalar_t) { return g; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary_op("exp", a, [](scalar_t x) { return std::exp(x); },
                    [](scalar_t g, scalar_t, scalar_t out) { return g * out; });
}

Tensor log(const Tensor& a) {
    for (scalar_t x : a.values())
        if (x <= 0.0) throw std::domain_error("log: non-positive input " + std::to_string(x));
    return unary_op("log", a, [](scalar_t x) { return std::log(x); },
                    [](scalar_t g, scalar_t x, scalar_t) { return g / x; });
}

namespace {
scalar_t softplus_val(scalar_t x) {
    // log(1 + e^x) without overflow on either tail
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}
scalar_t sigmoid_val(scalar_t x) { return 1.0 / (1.0 + std::exp(-x)); }
} // namespace

Tensor softplus(const Tensor& a) {
    return unary_op("softplus", a, softplus_val,
                    [](scalar_t g, scalar_t x, scalar_t) { return g * sigmoid_val(x); });
}

Tensor relu(const Tensor& a) {
    return unary_op("relu", a, [](scalar_t x) { return x > 0 ? x : 0.0; },
                    [](scalar_t g, scalar_t x, scalar_t) { return x > 0 ? g : 0.0; });
}

Tensor reciprocal(const Tensor& a) {
    for (scalar_t x : a.values())
        if (x == 0.0) throw std::domain_error("reciprocal: zero input");
    return unary_op("reciprocal", a, [](scalar_t x) { return 1.0 / x; },
                    [](scalar_t g, scalar_t, scalar_t out) { return -g * out * out; });
}

// --- structure ops --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d("matmul", a);
    require_2d("matmul", b);
    size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    if (b.shape()[0] != k) shape_error("matmul", a, b);
    std::vector<scalar_t> out(n * m, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < n; ++i)
        for (size_t p = 0; p < k; ++p) {
            scalar_t x = av[i * k + p];
            if (x == 0.0) continue;
            for (size_t j = 0; j < m; ++j) out[i * m + j] += x * bv[p * m + j];
        }
    return make_op("matmul", {n, m}, std::move(out), {a, b}, [n, k, m](Node& node) {
        Node* pa = node.parents[0].get();
        Node* pb = node.parents[1].get();
        if (pa->requires_grad) {
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j) {
                    scalar_t g = node.grad[i * m + j];
                    if (g == 0.0) continue;
                    for (size_t p = 0; p < k; ++p)
                        pa->grad[i * k + p] += g * pb->values[p * m + j];
                }
        }
        if (pb->requires_grad) {
            for (size_t i = 0; i < n; ++i)
                for (size_t p = 0; p < k; ++p) {
                    scalar_t x = pa->values[i * k + p];
                    if (x == 0.0) continue;
                    for (size_t j = 0; j < m; ++j)
                        pb->grad[p * m + j] += x * node.grad[i * m + j];
                }
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_2d("transpose", a);
    size_t n = a.shape()[0], m = a.shape()[1];
    std::vector<scalar_t> out(n * m);
    const auto& av = a.values();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[j * n + i] = av[i * m + j];
    return make_op("transpose", {m, n}, std::move(out), {a}, [n, m](Node& node) {
        Node* p = node.parents[0].get();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) p->grad[i * m + j] += node.grad[j * n + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    return make_op("reshape", std::move(shape), a.values(), {a}, [](Node& node) {
        Node* p = node.parents[0].get();
        for (size_t i = 0; i < node.values.size(); ++i) p->grad[i] += node.grad[i];
    });
}

Tensor row_softmax(const Tensor& a) {
    require_2d("row_softmax", a);
    size_t n = a.shape()[0], m = a.shape()[1];
    std::vector<scalar_t> out(n * m);
    const auto& av = a.values();
    for (size_t i = 0; i < n; ++i) {
        scalar_t mx = av[i * m];
        for (size_t j = 1; j < m; ++j) mx = std::max(mx, av[i * m + j]);
        scalar_t z = 0.0;
        for (size_t j = 0; j < m; ++j) z += (out[i * m + j] = std::exp(av[i * m + j] - mx));
        for (size_t j = 0; j < m; ++j) out[i * m + j] /= z;
    }
    return make_op("row_softmax", {n, m}, std::move(out), {a}, [n, m](Node& node) {
        Node* p = node.parents[0].get();
        for (size_t i = 0; i < n; ++i) {
            scalar_t dot = 0.0;
            for (size_t j = 0; j < m; ++j) dot += node.grad[i * m + j] * node.values[i * m + j];
            for (size_t j = 0; j < m; ++j)
                p->grad[i * m + j] += node.values[i * m + j] * (node.grad[i * m + j] - dot);
        }
    });
}

Tensor log_row_softmax(const Tensor& a) {
    require_2d("log_row_softmax", a);
    size_t n = a.shape()[0], m = a.shape()[1];
    std::vector<scalar_t> out(n * m);
    const auto& av = a.values();
    for (size_t i = 0; i < n; ++i) {
        scalar_t mx = av[i * m];
        for (size_t j = 1; j < m; ++j) mx = std::max(mx, av[i * m + j]);
        scalar_t z = 0.0;
        for (size_t j = 0; j < m; ++j) z += std::exp(av[i * m + j] - mx);
        scalar_t lse = mx + std::log(z);
        for (size_t j = 0; j < m; ++j) out[i * m + j] = av[i * m + j] - lse;
    }
    return make_op("log_row_softmax", {n, m}, std::move(out), {a}, [n, m](Node& node) {
        Node* p = node.parents[0].get();
        for (size_t i = 0; i < n; ++i) {
            scalar_t gsum = 0.0;
            for (size_t j = 0; j < m; ++j) gsum += node.grad[i * m + j];
            for (size_t j = 0; j < m; ++j)
                p->grad[i * m + j] +=
                    node.grad[i * m + j] - std::exp(node.values[i * m + j]) * gsum;
        }
    });
}

Tensor sum(const Tensor& a) {
    scalar_t s = 0.0;
    for (scalar_t x : a.values()) s += x;
    return make_op("sum", {1}, {s}, {a}, [](Node& node) {
        Node* p = node.parents[0].get();
        scalar_t g = node.grad[0];
        for (auto& gi : p->grad) gi += g;
    });
}

Tensor mean(const Tensor& a) {
    size_t n = a.numel();
    scalar_t s = 0.0;
    for (scalar_t x : a.values()) s += x;
    return make_op("mean", {1}, {s / static_cast<scalar_t>(n)}, {a}, [n](Node& node) {
        Node* p = node.parents[0].get();
        scalar_t g = node.grad[0] / static_cast<scalar_t>(n);
        for (auto& gi : p->grad) gi += g;
    });
}

Tensor l2_norm(const Tensor& a) {
    scalar_t s = 0.0;
    for (scalar_t x : a.values()) s += x * x;
    scalar_t norm = std::sqrt(s);
    return make_op("l2_norm", {1}, {norm}, {a}, [norm](Node& node) {
        Node* p = node.parents[0].get();
        scalar_t denom = norm > 0 ? norm : 1.0;
        scalar_t g = node.grad[0] / denom;
        for (size_t i = 0; i < p->values.size(); ++i) p->grad[i] += g * p->values[i];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    size_t cols = parts.front().cols();
    size_t total_rows = 0;
    std::vector<scalar_t> out;
    std::vector<size_t> part_rows;
    for (const auto& t : parts) {
        size_t r = t.shape().size() == 1 ? 1 : t.shape()[0];
        if (t.cols() != cols || t.numel() != r * cols)
            throw std::invalid_argument("concat_rows: column mismatch, expected " +
                                        std::to_string(cols) + " got " + shape_str(t.shape()));
        part_rows.push_back(r);
        total_rows += r;
        out.insert(out.end(), t.values().begin(), t.values().end());
    }
    return make_op("concat_rows", {total_rows, cols}, std::move(out), parts,
                   [part_rows, cols](Node& node) {
                       size_t off = 0;
                       for (size_t k = 0; k < node.parents.size(); ++k) {
                           Node* p = node.parents[k].get();
                           size_t len = part_rows[k] * cols;
                           if (p->requires_grad)
                               for (size_t i = 0; i < len; ++i) p->grad[i] += node.grad[off + i];
                           off += len;
                       }
                   });
}

Tensor slice_rows(const Tensor& a, size_t begin, size_t end) {
    require_2d("slice_rows", a);
    size_t n = a.shape()[0], m = a.shape()[1];
    if (begin >= end || end > n)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") out of " + std::to_string(n) + " rows");
    std::vector<scalar_t> out(a.values().begin() + begin * m, a.values().begin() + end * m);
    return make_op("slice_rows", {end - begin, m}, std::move(out), {a}, [begin, m](Node& node) {
        Node* p = node.parents[0].get();
        size_t off = begin * m;
        for (size_t i = 0; i < node.values.size(); ++i) p->grad[off + i] += node.grad[i];
    });
}

Tensor add_rows(const Tensor& m, const Tensor& v) {
    require_2d("add_rows", m);
    size_t n = m.shape()[0], c = m.shape()[1];
    if (v.numel() != c) shape_error("add_rows", m, v);
    std::vector<scalar_t> out(n * c);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = m.values()[i * c + j] + v.values()[j];
    return make_op("add_rows", {n, c}, std::move(out), {m, v}, [n, c](Node& node) {
        Node* pm = node.parents[0].get();
        Node* pv = node.parents[1].get();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < c; ++j) {
                scalar_t g = node.grad[i * c + j];
                if (pm->requires_grad) pm->grad[i * c + j] += g;
                if (pv->requires_grad) pv->grad[j] += g;
            }
    });
}

Tensor mean_rows(const Tensor& m) {
    require_2d("mean_rows", m);
    size_t n = m.shape()[0], c = m.shape()[1];
    std::vector<scalar_t> out(c, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) out[j] += m.values()[i * c + j];
    for (auto& x : out) x /= static_cast<scalar_t>(n);
    return make_op("mean_rows", {c}, std::move(out), {m}, [n, c](Node& node) {
        Node* p = node.parents[0].get();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < c; ++j)
                p->grad[i * c + j] += node.grad[j] / static_cast<scalar_t>(n);
    });
}

Tensor col_sums(const Tensor& m) {
    require_2d("col_sums", m);
    size_t n = m.shape()[0], c = m.shape()[1];
    std::vector<scalar_t> out(c, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) out[j] += m.values()[i * c + j];
    return make_op("col_sums", {c}, std::move(out), {m}, [n, c](Node& node) {
        Node* p = node.parents[0].get();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < c; ++j) p->grad[i * c + j] += node.grad[j];
    });
}

Tensor scale_rows(const Tensor& m, const Tensor& v) {
    require_2d("scale_rows", m);
    size_t n = m.shape()[0], c = m.shape()[1];
    if (v.numel() != n) shape_error("scale_rows", m, v);
    std::vector<scalar_t> out(n * c);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = m.values()[i * c + j] * v.values()[i];
    return make_op("scale_rows", {n, c}, std::move(out), {m, v}, [n, c](Node& node) {
        Node* pm = node.parents[0].get();
        Node* pv = node.parents[1].get();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < c; ++j) {
                scalar_t g = node.grad[i * c + j];
                if (pm->requires_grad) pm->grad[i * c + j] += g * pv->values[i];
                if (pv->requires_grad) pv->grad[i] += g * pm->values[i * c + j];
            }
    });
}

Tensor scale_cols(const Tensor& m, const Tensor& v) {
    require_2d("scale_cols", m);
    size_t n = m.shape()[0], c = m.shape()[1];
    if (v.numel() != c) shape_error("scale_cols", m, v);
    std::vector<scalar_t> out(n * c);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = m.values()[i * c + j] * v.values()[j];
    return make_op("scale_cols", {n, c}, std::move(out), {m, v}, [n, c](Node& node) {
        Node* pm = node.parents[0].get();
        Node* pv = node.parents[1].get();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < c; ++j) {
                scalar_t g = node.grad[i * c + j];
                if (pm->requires_grad) pm->grad[i * c + j] += g * pv->values[j];
                if (pv->requires_grad) pv->grad[j] += g * pm->values[i * c + j];
            }
    });
}

Tensor row_l2_norms(const Tensor& m, scalar_t eps) {
    require_2d("row_l2_norms", m);
    size_t n = m.shape()[0], c = m.shape()[1];
    std::vector<scalar_t> out(n);
    for (size_t i = 0; i < n; ++i) {
        scalar_t s = eps * eps;
        for (size_t j = 0; j < c; ++j) {
            scalar_t x = m.values()[i * c + j];
            s += x * x;
        }
        out[i] = std::sqrt(s);
    }
    return make_op("row_l2_norms", {n}, std::move(out), {m}, [n, c](Node& node) {
        Node* p = node.parents[0].get();
        for (size_t i = 0; i < n; ++i) {
            scalar_t g = node.grad[i] / node.values[i];
            for (size_t j = 0; j < c; ++j) p->grad[i * c + j] += g * p->values[i * c + j];
        }
    });
}

Tensor zero_diag(const Tensor& m) {
    require_2d("zero_diag", m);
    size_t n = m.shape()[0];
    if (m.shape()[1] != n)
        throw std::invalid_argument("zero_diag: square matrix required, got " + shape_str(m.shape()));
    std::vector<scalar_t> out = m.values();
    for (size_t i = 0; i < n; ++i) out[i * n + i] = 0.0;
    return make_op("zero_diag", {n, n}, std::move(out), {m}, [n](Node& node) {
        Node* p = node.parents[0].get();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j)
                if (i != j) p->grad[i * n + j] += node.grad[i * n + j];
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require_2d("softmax_cross_entropy", logits);
    size_t n = logits.shape()[0], c = logits.shape()[1];
    if (labels.size() != n)
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    for (int y : labels)
        if (y < 0 || static_cast<size_t>(y) >= c)
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) +
                                    " outside [0," + std::to_string(c) + ")");
    const auto& zv = logits.values();
    scalar_t loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        scalar_t mx = zv[i * c];
        for (size_t j = 1; j < c; ++j) mx = std::max(mx, zv[i * c + j]);
        scalar_t z = 0.0;
        for (size_t j = 0; j < c; ++j) z += std::exp(zv[i * c + j] - mx);
        loss += mx + std::log(z) - zv[i * c + labels[i]];
    }
    loss /= static_cast<scalar_t>(n);
    return make_op("softmax_cross_entropy", {1}, {loss}, {logits}, [n, c, labels](Node& node) {
        Node* p = node.parents[0].get();
        scalar_t g = node.grad[0] / static_cast<scalar_t>(n);
        for (size_t i = 0; i < n; ++i) {
            scalar_t mx = p->values[i * c];
            for (size_t j = 1; j < c; ++j) mx = std::max(mx, p->values[i * c + j]);
            scalar_t z = 0.0;
            for (size_t j = 0; j < c; ++j) z += std::exp(p->values[i * c + j] - mx);
            for (size_t j = 0; j < c; ++j) {
                scalar_t sm = std::exp(p->values[i * c + j] - mx) / z;
                p->grad[i * c + j] += g * (sm - (static_cast<size_t>(labels[i]) == j ? 1.0 : 0.0));
            }
        }
    });
}

// --- gradient checking ----------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                           scalar_t h, scalar_t tol) {
    Tensor loss = f();
    if (!std::isfinite(loss.item()))
        throw std::domain_error("grad_check: non-finite loss at evaluation point");
    for (auto l : leaves) l.zero_grad();
    loss.backward();

    GradCheckReport report;
    for (auto leaf : leaves) {
        std::vector<scalar_t> analytic =
            leaf.has_grad() ? leaf.grad() : std::vector<scalar_t>(leaf.numel(), 0.0);
        scalar_t worst = 0.0;
        auto& vals = leaf.mutable_values();
        for (size_t i = 0; i < vals.size(); ++i) {
            scalar_t orig = vals[i];
            vals[i] = orig + h;
            scalar_t fp = f().item();
            vals[i] = orig - h;
            scalar_t fm = f().item();
            vals[i] = orig;
            scalar_t numeric = (fp - fm) / (2 * h);
            scalar_t denom = std::max({std::abs(analytic[i]), std::abs(numeric), scalar_t(1.0)});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
        report.max_rel_error.push_back(worst);
        report.worst = std::max(report.worst, worst);
    }
    report.passed = report.worst < tol;
    return report;
}

} // namespace divbnn
