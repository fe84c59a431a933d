#include "offlight/nn/autograd.hpp"

#include "offlight/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

namespace offlight::nn {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kAttentionSlope = 0.2;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Var make_result(Matrix value, std::vector<std::shared_ptr<Node>> parents,
                std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

// Accumulates into a parent if it participates in differentiation.
template <typename Expr>
void accumulate(const std::shared_ptr<Node>& p, const Expr& g) {
    if (p->requires_grad) p->ensure_grad() += g;
}

}  // namespace

Matrix& Node::ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
        grad = Matrix::Zero(value.rows(), value.cols());
    }
    return grad;
}

double Var::item() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("item() on non-scalar value");
    return node_->value(0, 0);
}

void Var::backward() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("backward() requires a scalar");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad().array() += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() > 0) n->backward(*n);
    }
    // Intermediate gradients are released; leaves keep theirs.
    for (Node* n : order) {
        if (n->backward) n->grad.resize(0, 0);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var parameter(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    Matrix out = a.value() * b.value();
    return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) pa->ensure_grad().noalias() += self.grad * pb->value.transpose();
        if (pb->requires_grad) pb->ensure_grad().noalias() += pa->value.transpose() * self.grad;
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    return make_result(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
        accumulate(self.parents[0], self.grad);
        accumulate(self.parents[1], self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    return make_result(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
        accumulate(self.parents[0], self.grad);
        accumulate(self.parents[1], -self.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Matrix out = a.value().cwiseProduct(b.value());
    return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        accumulate(pa, self.grad.cwiseProduct(pb->value));
        accumulate(pb, self.grad.cwiseProduct(pa->value));
    });
}

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: bias shape mismatch");
    Matrix out = a.value();
    out.rowwise() += row.value().row(0);
    return make_result(std::move(out), {a.node(), row.node()}, [](Node& self) {
        accumulate(self.parents[0], self.grad);
        accumulate(self.parents[1], self.grad.colwise().sum());
    });
}

Var mul_col(const Var& a, const Var& col) {
    if (col.cols() != 1 || col.rows() != a.rows()) throw ShapeError("mul_col: column shape mismatch");
    Matrix out = a.value().array().colwise() * col.value().col(0).array();
    return make_result(std::move(out), {a.node(), col.node()}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pc = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad().array() += self.grad.array().colwise() * pc->value.col(0).array();
        }
        if (pc->requires_grad) {
            pc->ensure_grad() += self.grad.cwiseProduct(pa->value).rowwise().sum();
        }
    });
}

Var scale(const Var& a, double s) {
    return make_result(a.value() * s, {a.node()},
                       [s](Node& self) { accumulate(self.parents[0], self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
    Matrix out = a.value().array() + s;
    return make_result(std::move(out), {a.node()},
                       [](Node& self) { accumulate(self.parents[0], self.grad); });
}

Var square(const Var& a) {
    Matrix out = a.value().array().square();
    return make_result(std::move(out), {a.node()}, [](Node& self) {
        auto& p = self.parents[0];
        accumulate(p, 2.0 * self.grad.cwiseProduct(p->value));
    });
}

Var leaky_relu(const Var& a, double slope) {
    Matrix out = a.value().unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
    return make_result(std::move(out), {a.node()}, [slope](Node& self) {
        auto& p = self.parents[0];
        Matrix d = p->value.unaryExpr([slope](double x) { return x > 0 ? 1.0 : slope; });
        accumulate(p, self.grad.cwiseProduct(d));
    });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var sigmoid(const Var& a) {
    Matrix out = a.value().unaryExpr([](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    return make_result(std::move(out), {a.node()}, [](Node& self) {
        Matrix d = self.value.array() * (1.0 - self.value.array());
        accumulate(self.parents[0], self.grad.cwiseProduct(d));
    });
}

Var tanh(const Var& a) {
    Matrix out = a.value().array().tanh();
    return make_result(std::move(out), {a.node()}, [](Node& self) {
        Matrix d = 1.0 - self.value.array().square();
        accumulate(self.parents[0], self.grad.cwiseProduct(d));
    });
}

Var exp(const Var& a) {
    Matrix out = a.value().array().exp();
    return make_result(std::move(out), {a.node()}, [](Node& self) {
        accumulate(self.parents[0], self.grad.cwiseProduct(self.value));
    });
}

Var log(const Var& a) {
    if ((a.value().array() <= 0.0).any()) throw NumericError("log of non-positive value");
    Matrix out = a.value().array().log();
    return make_result(std::move(out), {a.node()}, [](Node& self) {
        auto& p = self.parents[0];
        accumulate(p, self.grad.cwiseQuotient(p->value));
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<std::shared_ptr<Node>> parents;
    std::vector<Eigen::Index> widths;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
        parents.push_back(p.node());
        widths.push_back(p.cols());
    }
    return make_result(std::move(out), std::move(parents), [widths](Node& self) {
        Eigen::Index start = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            accumulate(self.parents[i], self.grad.middleCols(start, widths[i]));
            start += widths[i];
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<std::shared_ptr<Node>> parents;
    std::vector<Eigen::Index> heights;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
        parents.push_back(p.node());
        heights.push_back(p.rows());
    }
    return make_result(std::move(out), std::move(parents), [heights](Node& self) {
        Eigen::Index start = 0;
        for (std::size_t i = 0; i < heights.size(); ++i) {
            accumulate(self.parents[i], self.grad.middleRows(start, heights[i]));
            start += heights[i];
        }
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
    return make_result(a.value().middleCols(start, count), {a.node()}, [start, count](Node& self) {
        auto& p = self.parents[0];
        if (p->requires_grad) p->ensure_grad().middleCols(start, count) += self.grad;
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
    return make_result(a.value().middleRows(start, count), {a.node()}, [start, count](Node& self) {
        auto& p = self.parents[0];
        if (p->requires_grad) p->ensure_grad().middleRows(start, count) += self.grad;
    });
}

Var gather_rows(const Var& a, std::span<const int> index) {
    Matrix out(static_cast<Eigen::Index>(index.size()), a.cols());
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0 || index[r] >= a.rows()) throw ShapeError("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(r)) = a.value().row(index[r]);
    }
    std::vector<int> idx(index.begin(), index.end());
    return make_result(std::move(out), {a.node()}, [idx = std::move(idx)](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        Matrix& g = p->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) g.row(idx[r]) += self.grad.row(static_cast<Eigen::Index>(r));
    });
}

Var segment_mean(const Var& a, std::span<const int> segment, int num_segments) {
    if (static_cast<Eigen::Index>(segment.size()) != a.rows()) throw ShapeError("segment_mean: segment size");
    Matrix out = Matrix::Zero(num_segments, a.cols());
    std::vector<double> count(static_cast<std::size_t>(num_segments), 0.0);
    for (std::size_t r = 0; r < segment.size(); ++r) {
        if (segment[r] < 0 || segment[r] >= num_segments) throw ShapeError("segment_mean: bad segment id");
        out.row(segment[r]) += a.value().row(static_cast<Eigen::Index>(r));
        count[static_cast<std::size_t>(segment[r])] += 1.0;
    }
    for (int s = 0; s < num_segments; ++s) {
        if (count[static_cast<std::size_t>(s)] > 0) out.row(s) /= count[static_cast<std::size_t>(s)];
    }
    std::vector<int> seg(segment.begin(), segment.end());
    return make_result(std::move(out), {a.node()},
                       [seg = std::move(seg), count = std::move(count)](Node& self) {
                           auto& p = self.parents[0];
                           if (!p->requires_grad) return;
                           Matrix& g = p->ensure_grad();
                           for (std::size_t r = 0; r < seg.size(); ++r) {
                               g.row(static_cast<Eigen::Index>(r)) +=
                                   self.grad.row(seg[r]) / count[static_cast<std::size_t>(seg[r])];
                           }
                       });
}

Var sum(const Var& a) {
    return make_result(Matrix::Constant(1, 1, a.value().sum()), {a.node()}, [](Node& self) {
        auto& p = self.parents[0];
        if (p->requires_grad) p->ensure_grad().array() += self.grad(0, 0);
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw ShapeError("mean of empty value");
    return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
    Matrix out = a.value().rowwise().sum();
    return make_result(std::move(out), {a.node()}, [](Node& self) {
        auto& p = self.parents[0];
        if (p->requires_grad) p->ensure_grad().colwise() += self.grad.col(0);
    });
}

Var pick(const Var& a, std::span<const int> column_per_row) {
    if (static_cast<Eigen::Index>(column_per_row.size()) != a.rows()) throw ShapeError("pick: index size");
    Matrix out(a.rows(), 1);
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const int c = column_per_row[static_cast<std::size_t>(r)];
        if (c < 0 || c >= a.cols()) throw ShapeError("pick: column out of range");
        out(r, 0) = a.value()(r, c);
    }
    std::vector<int> idx(column_per_row.begin(), column_per_row.end());
    return make_result(std::move(out), {a.node()}, [idx = std::move(idx)](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        Matrix& g = p->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            g(static_cast<Eigen::Index>(r), idx[r]) += self.grad(static_cast<Eigen::Index>(r), 0);
        }
    });
}

Var minimum(const Var& a, const Var& b) {
    require_same_shape(a, b, "minimum");
    Matrix out = a.value().cwiseMin(b.value());
    return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        // Ties route the gradient to the first argument.
        Matrix take_a = (pa->value.array() <= pb->value.array()).cast<double>();
        accumulate(pa, self.grad.cwiseProduct(take_a));
        accumulate(pb, self.grad.cwiseProduct((1.0 - take_a.array()).matrix()));
    });
}

namespace {

Matrix softmax_value(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double m = x.row(r).maxCoeff();
        out.row(r) = (x.row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

}  // namespace

Var softmax_rows(const Var& a) {
    if (!a.value().allFinite()) throw NumericError("softmax of non-finite logits");
    return make_result(softmax_value(a.value()), {a.node()}, [](Node& self) {
        const Matrix& y = self.value;
        Vector dot = self.grad.cwiseProduct(y).rowwise().sum();
        Matrix g = y.array() * (self.grad.colwise() - dot).array();
        accumulate(self.parents[0], g);
    });
}

Var log_softmax_rows(const Var& a) {
    if (!a.value().allFinite()) throw NumericError("log_softmax of non-finite logits");
    Matrix out(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double m = a.value().row(r).maxCoeff();
        const double lse = m + std::log((a.value().row(r).array() - m).exp().sum());
        out.row(r) = a.value().row(r).array() - lse;
    }
    return make_result(std::move(out), {a.node()}, [](Node& self) {
        Matrix p = self.value.array().exp();
        Vector gs = self.grad.rowwise().sum();
        Matrix g = self.grad - (p.array().colwise() * gs.array()).matrix();
        accumulate(self.parents[0], g);
    });
}

Var logsumexp_rows(const Var& a) {
    Matrix out(a.rows(), 1);
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double m = a.value().row(r).maxCoeff();
        out(r, 0) = m + std::log((a.value().row(r).array() - m).exp().sum());
    }
    return make_result(std::move(out), {a.node()}, [](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        Matrix sm = (p->value.colwise() - self.value.col(0)).array().exp();
        p->ensure_grad().array() += sm.array().colwise() * self.grad.col(0).array();
    });
}

Var graph_attention(const Var& proj, const Var& src_score, const Var& dst_score,
                    std::span<const int> offsets, std::span<const int> neighbors, int heads) {
    const Eigen::Index m = proj.rows();
    if (heads <= 0 || proj.cols() % heads != 0) throw ShapeError("graph_attention: head width");
    if (src_score.rows() != m || dst_score.rows() != m || src_score.cols() != heads ||
        dst_score.cols() != heads) {
        throw ShapeError("graph_attention: score shapes");
    }
    if (static_cast<Eigen::Index>(offsets.size()) != m + 1) throw ShapeError("graph_attention: offsets size");
    const Eigen::Index f = proj.cols() / heads;

    // alpha[e, h] for every CSR edge e.
    Matrix alpha(static_cast<Eigen::Index>(neighbors.size()), heads);
    Matrix out = Matrix::Zero(m, proj.cols());
    const Matrix& s = src_score.value();
    const Matrix& d = dst_score.value();
    const Matrix& x = proj.value();
    for (Eigen::Index i = 0; i < m; ++i) {
        const int begin = offsets[static_cast<std::size_t>(i)];
        const int end = offsets[static_cast<std::size_t>(i) + 1];
        for (int h = 0; h < heads; ++h) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int e = begin; e < end; ++e) {
                const double raw = s(i, h) + d(neighbors[static_cast<std::size_t>(e)], h);
                const double v = raw > 0 ? raw : kAttentionSlope * raw;
                alpha(e, h) = v;
                mx = std::max(mx, v);
            }
            double z = 0.0;
            for (int e = begin; e < end; ++e) {
                alpha(e, h) = std::exp(alpha(e, h) - mx);
                z += alpha(e, h);
            }
            for (int e = begin; e < end; ++e) {
                alpha(e, h) /= z;
                out.row(i).segment(h * f, f) += alpha(e, h) * x.row(neighbors[static_cast<std::size_t>(e)]).segment(h * f, f);
            }
        }
    }

    std::vector<int> off(offsets.begin(), offsets.end());
    std::vector<int> nbr(neighbors.begin(), neighbors.end());
    return make_result(
        std::move(out), {proj.node(), src_score.node(), dst_score.node()},
        [alpha = std::move(alpha), off = std::move(off), nbr = std::move(nbr), heads, f](Node& self) {
            auto& px = self.parents[0];
            auto& ps = self.parents[1];
            auto& pd = self.parents[2];
            const Matrix& x = px->value;
            const Matrix& s = ps->value;
            const Matrix& d = pd->value;
            const Eigen::Index m = x.rows();
            Matrix gx = Matrix::Zero(x.rows(), x.cols());
            Matrix gs = Matrix::Zero(s.rows(), s.cols());
            Matrix gd = Matrix::Zero(d.rows(), d.cols());
            std::vector<double> dalpha;
            for (Eigen::Index i = 0; i < m; ++i) {
                const int begin = off[static_cast<std::size_t>(i)];
                const int end = off[static_cast<std::size_t>(i) + 1];
                dalpha.assign(static_cast<std::size_t>(end - begin), 0.0);
                for (int h = 0; h < heads; ++h) {
                    const auto go = self.grad.row(i).segment(h * f, f);
                    double weighted = 0.0;
                    for (int e = begin; e < end; ++e) {
                        const int j = nbr[static_cast<std::size_t>(e)];
                        gx.row(j).segment(h * f, f) += alpha(e, h) * go;
                        const double da = go.dot(x.row(j).segment(h * f, f));
                        dalpha[static_cast<std::size_t>(e - begin)] = da;
                        weighted += alpha(e, h) * da;
                    }
                    for (int e = begin; e < end; ++e) {
                        const int j = nbr[static_cast<std::size_t>(e)];
                        const double dv = alpha(e, h) * (dalpha[static_cast<std::size_t>(e - begin)] - weighted);
                        const double raw = s(i, h) + d(j, h);
                        const double draw = dv * (raw > 0 ? 1.0 : kAttentionSlope);
                        gs(i, h) += draw;
                        gd(j, h) += draw;
                    }
                }
            }
            accumulate(px, gx);
            accumulate(ps, gs);
            accumulate(pd, gd);
        });
}

Var head_dot(const Var& x, const Var& w, int heads) {
    if (w.rows() != 1 || w.cols() != x.cols() || x.cols() % heads != 0) throw ShapeError("head_dot: shapes");
    const Eigen::Index f = x.cols() / heads;
    Matrix out(x.rows(), heads);
    for (int h = 0; h < heads; ++h) {
        out.col(h) = x.value().middleCols(h * f, f) * w.value().row(0).segment(h * f, f).transpose();
    }
    return make_result(std::move(out), {x.node(), w.node()}, [heads, f](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        for (int h = 0; h < heads; ++h) {
            if (px->requires_grad) {
                px->ensure_grad().middleCols(h * f, f).noalias() +=
                    self.grad.col(h) * pw->value.row(0).segment(h * f, f);
            }
            if (pw->requires_grad) {
                pw->ensure_grad().row(0).segment(h * f, f).noalias() +=
                    (self.grad.col(h).transpose() * px->value.middleCols(h * f, f));
            }
        }
    });
}

Var diag_gaussian_log_prob(const Var& z, const Var& mu, const Var& log_var) {
    require_same_shape(z, mu, "diag_gaussian_log_prob");
    require_same_shape(z, log_var, "diag_gaussian_log_prob");
    const Eigen::Index dim = z.cols();
    Matrix inv_var = (-log_var.value().array()).exp();
    Matrix diff = z.value() - mu.value();
    Matrix out = -0.5 * ((diff.array().square() * inv_var.array()).rowwise().sum() +
                         log_var.value().array().rowwise().sum() + static_cast<double>(dim) * kLog2Pi);
    return make_result(std::move(out), {z.node(), mu.node(), log_var.node()},
                       [diff = std::move(diff), inv_var = std::move(inv_var)](Node& self) {
                           const auto g = self.grad.col(0).array();
                           Matrix dz = ((diff.array() * inv_var.array()).colwise() * g).matrix();
                           dz = -dz;
                           accumulate(self.parents[0], dz);
                           accumulate(self.parents[1], -dz);
                           Matrix dlv = ((0.5 * (diff.array().square() * inv_var.array() - 1.0)).colwise() * g).matrix();
                           accumulate(self.parents[2], dlv);
                       });
}

Var gmm_log_prob(const Var& z, const Var& pi_logits, const Var& means, const Var& log_vars) {
    const Eigen::Index k = means.rows();
    const Eigen::Index dim = z.cols();
    if (pi_logits.rows() != 1 || pi_logits.cols() != k || means.cols() != dim || log_vars.rows() != k ||
        log_vars.cols() != dim) {
        throw ShapeError("gmm_log_prob: parameter shapes");
    }
    const Eigen::Index m = z.rows();
    const Matrix& pl = pi_logits.value();
    const double pl_max = pl.maxCoeff();
    const double pl_lse = pl_max + std::log((pl.array() - pl_max).exp().sum());

    // comp(r, c) = log pi_c + log N(z_r | mu_c, var_c)
    Matrix comp(m, k);
    for (Eigen::Index c = 0; c < k; ++c) {
        const auto inv = (-log_vars.value().row(c).array()).exp();
        const double norm = log_vars.value().row(c).sum() + static_cast<double>(dim) * kLog2Pi;
        for (Eigen::Index r = 0; r < m; ++r) {
            const double q = ((z.value().row(r) - means.value().row(c)).array().square() * inv).sum();
            comp(r, c) = pl(0, c) - pl_lse - 0.5 * (q + norm);
        }
    }
    Matrix out(m, 1);
    Matrix resp(m, k);
    for (Eigen::Index r = 0; r < m; ++r) {
        const double mx = comp.row(r).maxCoeff();
        const double lse = mx + std::log((comp.row(r).array() - mx).exp().sum());
        out(r, 0) = lse;
        resp.row(r) = (comp.row(r).array() - lse).exp();
    }
    return make_result(std::move(out), {z.node(), pi_logits.node(), means.node(), log_vars.node()},
                       [resp = std::move(resp)](Node& self) {
                           auto& pz = self.parents[0];
                           auto& ppl = self.parents[1];
                           auto& pm = self.parents[2];
                           auto& plv = self.parents[3];
                           const Matrix& zv = pz->value;
                           const Eigen::Index m = zv.rows();
                           const Eigen::Index k = pm->value.rows();
                           const Eigen::Index dim = zv.cols();
                           Matrix gz = Matrix::Zero(m, dim);
                           Matrix gm = Matrix::Zero(k, dim);
                           Matrix glv = Matrix::Zero(k, dim);
                           Matrix gpl = Matrix::Zero(1, k);
                           const Matrix pis = [&] {
                               Matrix p = (ppl->value.array() - ppl->value.maxCoeff()).exp();
                               return Matrix(p / p.sum());
                           }();
                           const double total = self.grad.col(0).sum();
                           for (Eigen::Index c = 0; c < k; ++c) {
                               const Eigen::ArrayXd inv = (-plv->value.row(c).array()).exp().transpose();
                               for (Eigen::Index r = 0; r < m; ++r) {
                                   const double w = self.grad(r, 0) * resp(r, c);
                                   if (w == 0.0) continue;
                                   const Eigen::ArrayXd diff = (zv.row(r) - pm->value.row(c)).array().transpose();
                                   const Eigen::ArrayXd dmu = w * diff * inv;
                                   gz.row(r) -= dmu.matrix().transpose();
                                   gm.row(c) += dmu.matrix().transpose();
                                   glv.row(c) += (0.5 * w * (diff.square() * inv - 1.0)).matrix().transpose();
                                   gpl(0, c) += w;
                               }
                               gpl(0, c) -= total * pis(0, c);
                           }
                           accumulate(pz, gz);
                           accumulate(ppl, gpl);
                           accumulate(pm, gm);
                           accumulate(plv, glv);
                       });
}

}  // namespace offlight::nn
