#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace divbnn {

// Scalar type for all tensor math. Double keeps enough headroom for the
// finite-difference gradient checks; switch to float only for speed runs.
using scalar_t = double;

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<scalar_t> values;
    std::vector<scalar_t> grad; // allocated lazily, same length as values
    bool requires_grad = false;
    bool is_leaf = true;
    bool backward_done = false; // set on the loss node after backward()
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backprop;

    void ensure_grad();
};

} // namespace detail

// Dense row-major tensor with reverse-mode autodiff. Value-semantic handle
// to a shared graph node; ops build a fresh graph every forward pass.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, scalar_t value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<scalar_t> values, bool requires_grad = false);
    static Tensor scalar(scalar_t value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    size_t numel() const;
    size_t rows() const; // first dim (1 for scalars)
    size_t cols() const; // last dim

    const std::vector<scalar_t>& values() const;
    std::vector<scalar_t>& mutable_values(); // leaves only (optimizer updates)

    bool requires_grad() const;
    bool has_grad() const;
    const std::vector<scalar_t>& grad() const;
    void zero_grad();

    scalar_t item() const; // requires numel() == 1
    scalar_t at(size_t i) const { return values()[i]; }
    scalar_t at(size_t r, size_t c) const;

    bool all_finite() const;
    bool grad_all_finite() const;

    // Constant copy sharing no graph history.
    Tensor detach() const;

    // Reverse-mode sweep from a scalar loss. Throws on non-scalar tensors and
    // on a second call without rebuilding the graph.
    void backward();

    detail::Node* node() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(const char* op, Shape shape, std::vector<scalar_t> values,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backprop);
};

// Low-level node constructor; the building block for every primitive.
Tensor make_op(const char* op, Shape shape, std::vector<scalar_t> values,
               std::vector<Tensor> parents, std::function<void(detail::Node&)> backprop);

// --- primitives ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }

Tensor scale(const Tensor& a, scalar_t c);
Tensor add_scalar(const Tensor& a, scalar_t c);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b); // 2-D only
Tensor transpose(const Tensor& a);               // 2-D only
Tensor reshape(const Tensor& a, Shape shape);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a); // throws on non-positive input
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor row_softmax(const Tensor& a);
Tensor log_row_softmax(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor l2_norm(const Tensor& a);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, size_t begin, size_t end);

Tensor add_rows(const Tensor& m, const Tensor& v);  // m[i][j] + v[j]
Tensor mean_rows(const Tensor& m);                  // column means -> {cols}
Tensor col_sums(const Tensor& m);                   // -> {cols}
Tensor scale_rows(const Tensor& m, const Tensor& v); // m[i][j] * v[i]
Tensor scale_cols(const Tensor& m, const Tensor& v); // m[i][j] * v[j]
Tensor row_l2_norms(const Tensor& m, scalar_t eps);  // sqrt(sumsq + eps^2) per row
Tensor reciprocal(const Tensor& a);                  // throws on zero input
Tensor zero_diag(const Tensor& m);                   // square 2-D

// Mean softmax cross-entropy with integer labels; stable log-sum-exp form.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// --- gradient checking -----------------------------------------------------

struct GradCheckReport {
    // Per-leaf max relative error between analytic and central-difference
    // gradients, in leaf order.
    std::vector<scalar_t> max_rel_error;
    scalar_t worst = 0.0;
    bool passed = false;
};

// f must rebuild a fresh scalar loss from the current leaf values.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                           scalar_t h = 1e-5, scalar_t tol = 1e-4);

} // namespace divbnn
