#include "urlseq/nn.hpp"

#include <cstring>
#include <fstream>

namespace urlseq {

MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
    MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = rng.uniform(lo, hi);
        }
    }
    return m;
}

void require_finite(const Eigen::Ref<const MatrixXd>& m, const std::string& what) {
    if (!m.allFinite()) throw FormatError(what + " contains NaN or Inf");
}

DenseParams DenseParams::init(Eigen::Index out, Eigen::Index in, Rng& rng) {
    DenseParams p;
    p.weight = uniform_matrix(out, in, -0.05, 0.05, rng);
    p.bias = VectorXd::Zero(out);
    return p;
}

VectorXd dense_forward(const DenseParams& p, const VectorXd& x, Activation act,
                       DenseCache* cache) {
    if (p.weight.cols() != x.size() || p.weight.rows() != p.bias.size()) {
        throw ShapeError("dense_forward: weight " + std::to_string(p.weight.rows()) + "x" +
                         std::to_string(p.weight.cols()) + " vs input " +
                         std::to_string(x.size()));
    }
    VectorXd pre = p.weight * x + p.bias;
    if (cache) {
        cache->input = x;
        cache->pre = pre;
        cache->act = act;
    }
    switch (act) {
        case Activation::Identity: return pre;
        case Activation::Relu: return relu(pre);
        case Activation::Sigmoid: return sigmoid(pre);
    }
    throw ConfigError("unknown activation");
}

DenseGrads dense_backward(const DenseParams& p, const DenseCache& cache,
                          const VectorXd& upstream) {
    if (upstream.size() != p.bias.size()) throw ShapeError("dense_backward: upstream size");
    VectorXd dpre;
    switch (cache.act) {
        case Activation::Identity:
            dpre = upstream;
            break;
        case Activation::Relu:
            dpre = (cache.pre.array() > 0.0).select(upstream, VectorXd::Zero(upstream.size()));
            break;
        case Activation::Sigmoid: {
            VectorXd s = sigmoid(cache.pre);
            dpre = upstream.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
            break;
        }
    }
    DenseGrads g;
    g.weight = dpre * cache.input.transpose();
    g.bias = dpre;
    g.input = p.weight.transpose() * dpre;
    return g;
}

LstmParams LstmParams::init(Eigen::Index hidden, Eigen::Index input, Rng& rng) {
    LstmParams p;
    p.hidden = hidden;
    p.w_input = uniform_matrix(4 * hidden, input, -0.05, 0.05, rng);
    p.w_recur = uniform_matrix(4 * hidden, hidden, -0.05, 0.05, rng);
    p.bias = VectorXd::Zero(4 * hidden);
    p.bias.segment(hidden, hidden).setOnes();  // forget gate
    return p;
}

void lstm_step(const LstmParams& p, const VectorXd& x, const VectorXd& h_prev,
               const VectorXd& c_prev, VectorXd& h_out, VectorXd& c_out,
               LstmStepCache* cache) {
    const Eigen::Index h = p.hidden;
    if (x.size() != p.input_dim() || h_prev.size() != h || c_prev.size() != h) {
        throw ShapeError("lstm_step: input/state dimensions do not match parameters");
    }
    VectorXd z = p.w_input * x + p.w_recur * h_prev + p.bias;
    VectorXd gi = sigmoid(z.segment(0, h));
    VectorXd gf = sigmoid(z.segment(h, h));
    VectorXd gg = z.segment(2 * h, h).array().tanh();
    VectorXd go = sigmoid(z.segment(3 * h, h));

    c_out = gf.cwiseProduct(c_prev) + gi.cwiseProduct(gg);
    VectorXd tc = c_out.array().tanh();
    h_out = go.cwiseProduct(tc);

    if (cache) {
        cache->input = x;
        cache->h_prev = h_prev;
        cache->c_prev = c_prev;
        cache->gate_i = std::move(gi);
        cache->gate_f = std::move(gf);
        cache->gate_g = std::move(gg);
        cache->gate_o = std::move(go);
        cache->c = c_out;
        cache->tanh_c = std::move(tc);
    }
}

VectorXd lstm_forward(const LstmParams& p, std::span<const VectorXd> xs, LstmSeqCache* cache,
                      const VectorXd* recur_mask) {
    if (xs.empty()) throw EmptySequence("lstm_forward: empty input sequence");
    const Eigen::Index h = p.hidden;
    if (recur_mask && recur_mask->size() != h) throw ShapeError("lstm_forward: mask size");

    VectorXd h_state = VectorXd::Zero(h);
    VectorXd c_state = VectorXd::Zero(h);
    if (cache) {
        cache->steps.resize(xs.size());
        cache->recur_mask = recur_mask ? *recur_mask : VectorXd();
    }
    VectorXd h_next(h), c_next(h);
    for (std::size_t t = 0; t < xs.size(); ++t) {
        // the gates see the masked previous hidden state; the carried state
        // itself is not masked
        VectorXd h_used = recur_mask ? VectorXd(h_state.cwiseProduct(*recur_mask)) : h_state;
        lstm_step(p, xs[t], h_used, c_state, h_next, c_next, cache ? &cache->steps[t] : nullptr);
        h_state = h_next;
        c_state = c_next;
    }
    return h_state;
}

LstmGrads LstmGrads::zeros_like(const LstmParams& p, std::size_t seq_len) {
    LstmGrads g;
    g.w_input = MatrixXd::Zero(p.w_input.rows(), p.w_input.cols());
    g.w_recur = MatrixXd::Zero(p.w_recur.rows(), p.w_recur.cols());
    g.bias = VectorXd::Zero(p.bias.size());
    g.inputs.assign(seq_len, VectorXd::Zero(p.input_dim()));
    return g;
}

LstmGrads lstm_backward(const LstmParams& p, const LstmSeqCache& cache,
                        const VectorXd& grad_h_last) {
    if (cache.steps.empty()) throw EmptySequence("lstm_backward: empty cache");
    const Eigen::Index h = p.hidden;
    if (grad_h_last.size() != h) throw ShapeError("lstm_backward: grad size");

    LstmGrads g = LstmGrads::zeros_like(p, cache.steps.size());
    const bool masked = cache.recur_mask.size() > 0;

    VectorXd dh = grad_h_last;
    VectorXd dc = VectorXd::Zero(h);
    VectorXd dz(4 * h);
    for (std::size_t t = cache.steps.size(); t-- > 0;) {
        const LstmStepCache& s = cache.steps[t];
        VectorXd d_o = dh.cwiseProduct(s.tanh_c);
        dc += dh.cwiseProduct(s.gate_o)
                  .cwiseProduct((1.0 - s.tanh_c.array().square()).matrix());

        VectorXd d_i = dc.cwiseProduct(s.gate_g);
        VectorXd d_g = dc.cwiseProduct(s.gate_i);
        VectorXd d_f = dc.cwiseProduct(s.c_prev);
        VectorXd dc_prev = dc.cwiseProduct(s.gate_f);

        dz.segment(0, h) =
            d_i.cwiseProduct(s.gate_i).cwiseProduct((1.0 - s.gate_i.array()).matrix());
        dz.segment(h, h) =
            d_f.cwiseProduct(s.gate_f).cwiseProduct((1.0 - s.gate_f.array()).matrix());
        dz.segment(2 * h, h) = d_g.cwiseProduct((1.0 - s.gate_g.array().square()).matrix());
        dz.segment(3 * h, h) =
            d_o.cwiseProduct(s.gate_o).cwiseProduct((1.0 - s.gate_o.array()).matrix());

        g.w_input.noalias() += dz * s.input.transpose();
        g.w_recur.noalias() += dz * s.h_prev.transpose();
        g.bias += dz;
        g.inputs[t] = p.w_input.transpose() * dz;

        dh = p.w_recur.transpose() * dz;
        if (masked) dh = dh.cwiseProduct(cache.recur_mask);
        dc = dc_prev;
    }
    return g;
}

BceResult bce_loss(double p_hat, double y) {
    constexpr double kEps = 1e-12;
    double p = std::min(std::max(p_hat, kEps), 1.0 - kEps);
    BceResult r;
    r.loss = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    r.grad = -(y / p) + (1.0 - y) / (1.0 - p);
    return r;
}

VectorXd dropout_apply(const VectorXd& x, double rate, DropoutMode mode, Rng& rng,
                       VectorXd* mask) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
    if (mode == DropoutMode::Eval || rate == 0.0) {
        if (mask) *mask = VectorXd::Ones(x.size());
        return x;
    }
    const double keep = 1.0 - rate;
    VectorXd m(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        m(i) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    }
    if (mask) *mask = m;
    return x.cwiseProduct(m);
}

AdamState AdamState::like(const Eigen::Ref<const MatrixXd>& p) {
    AdamState s;
    s.m = MatrixXd::Zero(p.rows(), p.cols());
    s.v = MatrixXd::Zero(p.rows(), p.cols());
    return s;
}

void adam_step(const AdamConfig& cfg, AdamState& state, Eigen::Ref<MatrixXd> param,
               const Eigen::Ref<const MatrixXd>& grad) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
        param.rows() != state.m.rows() || param.cols() != state.m.cols()) {
        throw ShapeError("adam_step: shape mismatch");
    }
    state.t += 1;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.array().square().matrix();
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    param.array() -= cfg.lr * (state.m.array() / bc1) /
                     ((state.v.array() / bc2).sqrt() + cfg.eps);
}

AdamRowState AdamRowState::like(const MatrixXd& table) {
    AdamRowState s;
    s.m = MatrixXd::Zero(table.rows(), table.cols());
    s.v = MatrixXd::Zero(table.rows(), table.cols());
    s.t.assign(static_cast<std::size_t>(table.rows()), 0);
    return s;
}

void adam_step_row(const AdamConfig& cfg, AdamRowState& state, MatrixXd& table,
                   Eigen::Index row, const Eigen::Ref<const Eigen::RowVectorXd>& grad) {
    if (row < 0 || row >= table.rows() || grad.size() != table.cols()) {
        throw ShapeError("adam_step_row: row/width mismatch");
    }
    int64_t& t = state.t[static_cast<std::size_t>(row)];
    t += 1;
    state.m.row(row) = cfg.beta1 * state.m.row(row) + (1.0 - cfg.beta1) * grad;
    state.v.row(row) =
        cfg.beta2 * state.v.row(row) + (1.0 - cfg.beta2) * grad.array().square().matrix();
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    table.row(row).array() -= cfg.lr * (state.m.row(row).array() / bc1) /
                              ((state.v.row(row).array() / bc2).sqrt() + cfg.eps);
}

double finite_diff_max_rel_error(const std::function<double()>& f,
                                 std::span<const ParamView> params,
                                 std::span<const ParamView> analytic_grads,
                                 double step) {
    if (params.size() != analytic_grads.size()) {
        throw ShapeError("finite_diff: view count mismatch");
    }
    double worst = 0.0;
    for (std::size_t v = 0; v < params.size(); ++v) {
        if (params[v].size != analytic_grads[v].size) {
            throw ShapeError("finite_diff: view size mismatch");
        }
        for (Eigen::Index i = 0; i < params[v].size; ++i) {
            double& x = params[v].data[i];
            const double saved = x;
            x = saved + step;
            const double f_plus = f();
            x = saved - step;
            const double f_minus = f();
            x = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double analytic = analytic_grads[v].data[i];
            const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// --- tensor container --------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'U', 'R', 'L', 'S', 'E', 'Q', 'N', 'N'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw FormatError(path + ": truncated tensor file");
    return value;
}

}  // namespace

NamedTensor tensor_of(const std::string& name, const Eigen::Ref<const MatrixXd>& m) {
    NamedTensor t;
    t.name = name;
    t.dims = {m.rows(), m.cols()};
    t.data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            t.data.push_back(m(r, c));
        }
    }
    return t;
}

NamedTensor tensor_of(const std::string& name, std::span<const double> values) {
    NamedTensor t;
    t.name = name;
    t.dims = {static_cast<Eigen::Index>(values.size())};
    t.data.assign(values.begin(), values.end());
    return t;
}

void write_tensor_file(const std::string& path, std::span<const NamedTensor> tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    for (const NamedTensor& t : tensors) {
        write_pod(out, static_cast<uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod(out, static_cast<uint32_t>(t.dims.size()));
        std::size_t expect = 1;
        for (Eigen::Index d : t.dims) {
            write_pod(out, static_cast<uint64_t>(d));
            expect *= static_cast<std::size_t>(d);
        }
        if (expect != t.data.size()) throw ShapeError("tensor '" + t.name + "': dims vs data");
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + path);
}

std::map<std::string, Tensor> read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError(path + ": bad magic");
    }
    const auto version = read_pod<uint32_t>(in, path);
    if (version != kVersion) {
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    }

    std::map<std::string, Tensor> tensors;
    while (true) {
        uint32_t name_len;
        in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (in.eof()) break;
        if (!in) throw FormatError(path + ": truncated tensor file");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw FormatError(path + ": truncated tensor file");

        Tensor t;
        const auto rank = read_pod<uint32_t>(in, path);
        std::size_t count = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const auto d = read_pod<uint64_t>(in, path);
            t.dims.push_back(static_cast<Eigen::Index>(d));
            count *= static_cast<std::size_t>(d);
        }
        t.data.resize(count);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw FormatError(path + ": truncated tensor file");
        for (double v : t.data) {
            if (!std::isfinite(v)) throw FormatError(path + ": non-finite value in '" + name + "'");
        }
        tensors.emplace(std::move(name), std::move(t));
    }
    return tensors;
}

MatrixXd tensor_to_matrix(const Tensor& t) {
    if (t.dims.size() != 2) throw FormatError("tensor is not rank 2");
    MatrixXd m(t.dims[0], t.dims[1]);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = t.data[k++];
        }
    }
    return m;
}

VectorXd tensor_to_vector(const Tensor& t) {
    if (t.dims.size() != 1) throw FormatError("tensor is not rank 1");
    return Eigen::Map<const VectorXd>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

}  // namespace urlseq
