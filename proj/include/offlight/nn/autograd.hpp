#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value in a computation is a 2-D matrix; scalars are 1x1.
// Parameters are persistent leaves whose gradients accumulate across
// backward() calls until zero_grad().

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace offlight::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Matrix& ensure_grad();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    Matrix& mutable_grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double item() const;
    bool defined() const { return static_cast<bool>(node_); }
    const std::shared_ptr<Node>& node() const { return node_; }

    // Runs reverse accumulation from this (scalar) value.
    void backward() const;

private:
    std::shared_ptr<Node> node_;
};

// Disables graph recording in the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

Var constant(Matrix value);
Var parameter(Matrix value);
Var scalar(double v);

// Elementwise and linear algebra.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);
Var mul_col(const Var& a, const Var& col);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.01);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

// Shape manipulation.
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, std::span<const int> index);
Var segment_mean(const Var& a, std::span<const int> segment, int num_segments);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);
Var pick(const Var& a, std::span<const int> column_per_row);
Var minimum(const Var& a, const Var& b);

// Row-wise distributions.
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var logsumexp_rows(const Var& a);

// Graph attention: rows are nodes, `offsets`/`neighbors` a CSR list of
// in-neighbours (self included). Attention logits are
// leaky_relu(src[i,h] + dst[j,h], 0.2), normalized over j per (i, h);
// output[i, h*F:(h+1)*F] = sum_j alpha[i,j,h] * proj[j, h*F:(h+1)*F].
Var graph_attention(const Var& proj, const Var& src_score, const Var& dst_score,
                    std::span<const int> offsets, std::span<const int> neighbors, int heads);

// Per-head dot product: out[m, h] = sum_f x[m, h*F + f] * w[0, h*F + f].
Var head_dot(const Var& x, const Var& w, int heads);

// log N(z | mu, diag(exp(log_var))) per row.
Var diag_gaussian_log_prob(const Var& z, const Var& mu, const Var& log_var);

// log sum_k softmax(pi_logits)_k N(z | means[k], diag(exp(log_vars[k]))) per row.
Var gmm_log_prob(const Var& z, const Var& pi_logits, const Var& means, const Var& log_vars);

}  // namespace offlight::nn
