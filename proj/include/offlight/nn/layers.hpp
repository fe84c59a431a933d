#pragma once

#include "offlight/nn/autograd.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace offlight::nn {

using Rng = std::mt19937_64;

// Named parameter list shared by every layer and network.
class ParameterSet {
public:
    void add(std::string name, Var param);
    void extend(const std::string& prefix, const ParameterSet& other);

    const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
    std::vector<Var> vars() const;
    std::size_t scalar_count() const;
    void zero_grad();

    // Copies values from `src` (same layout); blend = 1 copies, otherwise
    // target <- (1 - blend) * target + blend * src.
    void blend_from(const ParameterSet& src, double blend);

    nlohmann::json to_json() const;
    void load_json(const nlohmann::json& j);

private:
    std::vector<std::pair<std::string, Var>> entries_;
};

// Uniform Glorot initialization; deterministic given rng state.
Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(int in, int out, Rng& rng);

    Var operator()(const Var& x) const { return add_row(matmul(x, weight_), bias_); }
    const ParameterSet& parameters() const { return params_; }
    int in_features() const { return static_cast<int>(weight_.rows()); }
    int out_features() const { return static_cast<int>(weight_.cols()); }

private:
    Var weight_;
    Var bias_;
    ParameterSet params_;
};

struct LstmState {
    Var h;
    Var c;
};

class LstmCell {
public:
    LstmCell() = default;
    LstmCell(int in, int hidden, Rng& rng);

    LstmState operator()(const Var& x, const LstmState& state) const;
    LstmState initial(Eigen::Index batch) const;
    int hidden() const { return hidden_; }
    const ParameterSet& parameters() const { return params_; }

private:
    int hidden_ = 0;
    Var w_input_;
    Var w_hidden_;
    Var bias_;
    ParameterSet params_;
};

// Block-diagonal CSR in-neighbour lists for `copies` replicas of one graph.
struct EdgeIndex {
    std::vector<int> offsets;
    std::vector<int> neighbors;

    static EdgeIndex replicate(const std::vector<std::vector<int>>& neighbours_of, int copies);
    int nodes() const { return static_cast<int>(offsets.size()) - 1; }
};

// Multi-head graph attention with concatenated heads (output width = in
// width of the next layer = heads * head_dim). No activation applied.
class GatLayer {
public:
    GatLayer() = default;
    GatLayer(int in, int heads, int head_dim, Rng& rng);

    Var operator()(const Var& x, const EdgeIndex& edges) const;
    int out_features() const { return heads_ * head_dim_; }
    const ParameterSet& parameters() const { return params_; }

private:
    int heads_ = 0;
    int head_dim_ = 0;
    Var weight_;
    Var attn_src_;
    Var attn_dst_;
    Var bias_;
    ParameterSet params_;
};

// Rescales gradients so their joint L2 norm is at most max_norm; returns the
// norm before rescaling.
double clip_grad_norm(const std::vector<Var>& params, double max_norm);

class Adam {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam(std::vector<Var> params, Options options);

    void step();
    void zero_grad();
    long steps() const { return t_; }

private:
    std::vector<Var> params_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    Options opt_;
    long t_ = 0;
};

}  // namespace offlight::nn
