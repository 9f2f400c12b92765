#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "urlseq/common.hpp"

namespace urlseq {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& z) {
    return z.derived().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& z) {
    return z.derived().cwiseMax(0.0);
}

MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng);

void require_finite(const Eigen::Ref<const MatrixXd>& m, const std::string& what);

enum class Activation { Identity, Relu, Sigmoid };

struct DenseParams {
    MatrixXd weight;  // out x in
    VectorXd bias;    // out

    static DenseParams init(Eigen::Index out, Eigen::Index in, Rng& rng);
};

struct DenseCache {
    VectorXd input;
    VectorXd pre;  // Wx + b before the activation
    Activation act = Activation::Identity;
};

VectorXd dense_forward(const DenseParams& p, const VectorXd& x, Activation act,
                       DenseCache* cache = nullptr);

struct DenseGrads {
    MatrixXd weight;
    VectorXd bias;
    VectorXd input;
};

DenseGrads dense_backward(const DenseParams& p, const DenseCache& cache,
                          const VectorXd& upstream);

// Gate block layout in the stacked weight matrices: input, forget, cell,
// output. The forget-gate bias starts at 1.
struct LstmParams {
    MatrixXd w_input;  // 4h x in
    MatrixXd w_recur;  // 4h x h
    VectorXd bias;     // 4h
    Eigen::Index hidden = 0;

    Eigen::Index input_dim() const { return w_input.cols(); }
    static LstmParams init(Eigen::Index hidden, Eigen::Index input, Rng& rng);
};

struct LstmStepCache {
    VectorXd input, h_prev, c_prev;
    VectorXd gate_i, gate_f, gate_g, gate_o;
    VectorXd c, tanh_c;
};

void lstm_step(const LstmParams& p, const VectorXd& x, const VectorXd& h_prev,
               const VectorXd& c_prev, VectorXd& h_out, VectorXd& c_out,
               LstmStepCache* cache = nullptr);

struct LstmSeqCache {
    std::vector<LstmStepCache> steps;
    VectorXd recur_mask;  // empty when recurrent dropout is off
};

// Runs the cell over the sequence from a zero state and returns the last
// hidden state. recur_mask, when non-empty, multiplies h_prev before the gate
// computation at every step (one mask per sequence).
VectorXd lstm_forward(const LstmParams& p, std::span<const VectorXd> xs,
                      LstmSeqCache* cache = nullptr, const VectorXd* recur_mask = nullptr);

struct LstmGrads {
    MatrixXd w_input, w_recur;
    VectorXd bias;
    std::vector<VectorXd> inputs;

    static LstmGrads zeros_like(const LstmParams& p, std::size_t seq_len);
};

// Backpropagation through time given the gradient at the final hidden state.
LstmGrads lstm_backward(const LstmParams& p, const LstmSeqCache& cache,
                        const VectorXd& grad_h_last);

struct BceResult {
    double loss = 0.0;
    double grad = 0.0;  // d loss / d p_hat
};

// Binary cross-entropy with p_hat clamped to [1e-12, 1 - 1e-12].
BceResult bce_loss(double p_hat, double y);

enum class DropoutMode { Train, Eval };

// Inverted dropout. The optional mask output holds the applied multipliers
// (0 or 1/(1-rate)) so the backward pass is an elementwise product.
VectorXd dropout_apply(const VectorXd& x, double rate, DropoutMode mode, Rng& rng,
                       VectorXd* mask = nullptr);

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-7;
};

struct AdamState {
    MatrixXd m, v;
    int64_t t = 0;

    static AdamState like(const Eigen::Ref<const MatrixXd>& p);
};

void adam_step(const AdamConfig& cfg, AdamState& state, Eigen::Ref<MatrixXd> param,
               const Eigen::Ref<const MatrixXd>& grad);

/// Adam over the rows of an embedding table; only touched rows advance, each
/// with its own bias-correction timestep.
struct AdamRowState {
    MatrixXd m, v;
    std::vector<int64_t> t;

    static AdamRowState like(const MatrixXd& table);
};

void adam_step_row(const AdamConfig& cfg, AdamRowState& state, MatrixXd& table,
                   Eigen::Index row, const Eigen::Ref<const Eigen::RowVectorXd>& grad);

/// A mutable window into parameter storage, for gradient checking.
struct ParamView {
    double* data = nullptr;
    Eigen::Index size = 0;
};

inline ParamView view(MatrixXd& m) { return {m.data(), m.size()}; }
inline ParamView view(VectorXd& v) { return {v.data(), v.size()}; }

// Central finite differences over every coordinate of every view. Reports
// max over coordinates of |analytic - numeric| / max(1, |numeric|).
double finite_diff_max_rel_error(const std::function<double()>& f,
                                 std::span<const ParamView> params,
                                 std::span<const ParamView> analytic_grads,
                                 double step = 1e-6);

// --- named-tensor binary container ------------------------------------------
// Layout: magic "URLSEQNN", u32 version, then per tensor: u32 name length,
// name bytes, u32 rank, u64 dims, row-major little-endian f64 payload.

struct Tensor {
    std::vector<Eigen::Index> dims;
    std::vector<double> data;
};

struct NamedTensor {
    std::string name;
    std::vector<Eigen::Index> dims;
    std::vector<double> data;
};

NamedTensor tensor_of(const std::string& name, const Eigen::Ref<const MatrixXd>& m);
NamedTensor tensor_of(const std::string& name, std::span<const double> values);

void write_tensor_file(const std::string& path, std::span<const NamedTensor> tensors);
std::map<std::string, Tensor> read_tensor_file(const std::string& path);

MatrixXd tensor_to_matrix(const Tensor& t);
VectorXd tensor_to_vector(const Tensor& t);

}  // namespace urlseq
