#include "offlight/nn/layers.hpp"

#include "offlight/errors.hpp"

#include <cmath>

namespace offlight::nn {

void ParameterSet::add(std::string name, Var param) { entries_.emplace_back(std::move(name), std::move(param)); }

void ParameterSet::extend(const std::string& prefix, const ParameterSet& other) {
    for (const auto& [name, var] : other.entries_) entries_.emplace_back(prefix + "." + name, var);
}

std::vector<Var> ParameterSet::vars() const {
    std::vector<Var> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.second.value().size());
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) {
        if (e.second.grad().size() > 0) e.second.mutable_grad().setZero();
    }
}

void ParameterSet::blend_from(const ParameterSet& src, double blend) {
    if (src.entries_.size() != entries_.size()) throw ShapeError("blend_from: parameter layouts differ");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        Matrix& dst = entries_[i].second.mutable_value();
        const Matrix& s = src.entries_[i].second.value();
        if (dst.rows() != s.rows() || dst.cols() != s.cols()) throw ShapeError("blend_from: shape mismatch");
        if (blend == 1.0) {
            dst = s;
        } else {
            dst = (1.0 - blend) * dst + blend * s;
        }
    }
}

nlohmann::json ParameterSet::to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [name, var] : entries_) {
        const Matrix& v = var.value();
        std::vector<double> data(v.data(), v.data() + v.size());
        out.push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}, {"data", data}});
    }
    return out;
}

void ParameterSet::load_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != entries_.size()) throw ShapeError("parameter count mismatch in checkpoint");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& item = j[i];
        auto& [name, var] = entries_[i];
        if (item.at("name").get<std::string>() != name) {
            throw ShapeError("checkpoint parameter '" + item.at("name").get<std::string>() + "' where '" + name +
                             "' expected");
        }
        const auto rows = item.at("rows").get<Eigen::Index>();
        const auto cols = item.at("cols").get<Eigen::Index>();
        if (rows != var.rows() || cols != var.cols()) throw ShapeError("checkpoint shape mismatch for " + name);
        const auto data = item.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ShapeError("checkpoint data size for " + name);
        var.mutable_value() = Eigen::Map<const Matrix>(data.data(), rows, cols);
    }
}

Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

Linear::Linear(int in, int out, Rng& rng)
    : weight_(parameter(glorot(in, out, rng))), bias_(parameter(Matrix::Zero(1, out))) {
    params_.add("weight", weight_);
    params_.add("bias", bias_);
}

LstmCell::LstmCell(int in, int hidden, Rng& rng)
    : hidden_(hidden),
      w_input_(parameter(glorot(in, 4 * hidden, rng))),
      w_hidden_(parameter(glorot(hidden, 4 * hidden, rng))),
      bias_(parameter(Matrix::Zero(1, 4 * hidden))) {
    // Forget-gate bias starts at 1.
    bias_.mutable_value().middleCols(hidden, hidden).setOnes();
    params_.add("w_input", w_input_);
    params_.add("w_hidden", w_hidden_);
    params_.add("bias", bias_);
}

LstmState LstmCell::initial(Eigen::Index batch) const {
    return {constant(Matrix::Zero(batch, hidden_)), constant(Matrix::Zero(batch, hidden_))};
}

LstmState LstmCell::operator()(const Var& x, const LstmState& state) const {
    Var gates = add_row(add(matmul(x, w_input_), matmul(state.h, w_hidden_)), bias_);
    Var i = sigmoid(slice_cols(gates, 0, hidden_));
    Var f = sigmoid(slice_cols(gates, hidden_, hidden_));
    Var g = tanh(slice_cols(gates, 2 * hidden_, hidden_));
    Var o = sigmoid(slice_cols(gates, 3 * hidden_, hidden_));
    Var c = add(mul(f, state.c), mul(i, g));
    Var h = mul(o, tanh(c));
    return {h, c};
}

EdgeIndex EdgeIndex::replicate(const std::vector<std::vector<int>>& neighbours_of, int copies) {
    EdgeIndex e;
    const int n = static_cast<int>(neighbours_of.size());
    e.offsets.reserve(static_cast<std::size_t>(n * copies + 1));
    e.offsets.push_back(0);
    for (int b = 0; b < copies; ++b) {
        for (int i = 0; i < n; ++i) {
            for (int j : neighbours_of[static_cast<std::size_t>(i)]) e.neighbors.push_back(b * n + j);
            e.offsets.push_back(static_cast<int>(e.neighbors.size()));
        }
    }
    return e;
}

GatLayer::GatLayer(int in, int heads, int head_dim, Rng& rng)
    : heads_(heads),
      head_dim_(head_dim),
      weight_(parameter(glorot(in, heads * head_dim, rng))),
      attn_src_(parameter(glorot(1, heads * head_dim, rng))),
      attn_dst_(parameter(glorot(1, heads * head_dim, rng))),
      bias_(parameter(Matrix::Zero(1, heads * head_dim))) {
    params_.add("weight", weight_);
    params_.add("attn_src", attn_src_);
    params_.add("attn_dst", attn_dst_);
    params_.add("bias", bias_);
}

Var GatLayer::operator()(const Var& x, const EdgeIndex& edges) const {
    if (edges.nodes() != x.rows()) throw ShapeError("GatLayer: edge index does not match node count");
    Var proj = matmul(x, weight_);
    Var src = head_dot(proj, attn_src_, heads_);
    Var dst = head_dot(proj, attn_dst_, heads_);
    return add_row(graph_attention(proj, src, dst, edges.offsets, edges.neighbors, heads_), bias_);
}

double clip_grad_norm(const std::vector<Var>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (p.grad().size() > 0) sq += p.grad().squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto p : params) {
            if (p.grad().size() > 0) p.mutable_grad() *= f;
        }
    }
    return norm;
}

Adam::Adam(std::vector<Var> params, Options options) : params_(std::move(params)), opt_(options) {
    for (const auto& p : params_) {
        m_.push_back(Matrix::Zero(p.rows(), p.cols()));
        v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Matrix& g = params_[i].grad();
        if (g.size() == 0) continue;
        m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
        v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
        params_[i].mutable_value().array() -=
            opt_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.eps);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        if (p.grad().size() > 0) p.mutable_grad().setZero();
    }
}

}  // namespace offlight::nn
