#include "urlseq/sequence_models.hpp"

#include <algorithm>
#include <cmath>

namespace urlseq {

Eigen::Index Representation::url_dim() const {
    if (kind == Kind::OneHot) return vocab_size;
    if (!table) throw ConfigError("representation has no table attached");
    return url_vector_dim(mode, table->cols());
}

Representation Representation::embedding(const MatrixXd& table, CompositionMode mode) {
    Representation r;
    r.kind = Kind::Embedding;
    r.table = &table;
    r.mode = mode;
    return r;
}

Representation Representation::one_hot(int32_t vocab_size) {
    if (vocab_size < kFirstRealId) throw ConfigError("one-hot vocabulary too small");
    Representation r;
    r.kind = Kind::OneHot;
    r.vocab_size = vocab_size;
    return r;
}

Eigen::Index ConversionModel::mapped_dim() const {
    switch (kind) {
        case MappingKind::Average: return rep.url_dim();
        case MappingKind::Dense: return kDenseUnits;
        case MappingKind::Lstm: return kLstmUnits;
    }
    throw ConfigError("unknown mapping kind");
}

ConversionModel make_model(const Representation& rep, MappingKind kind, double dropout,
                           uint64_t seed) {
    if (rep.kind == Representation::Kind::OneHot && kind != MappingKind::Average &&
        !rep.allow_onehot_nonlinear) {
        throw ConfigError("non-linear mappings over one-hot input are disabled");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");

    ConversionModel model;
    model.rep = rep;
    model.kind = kind;
    model.dropout = kind == MappingKind::Average ? 0.0 : dropout;

    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    const Eigen::Index in = rep.url_dim();
    if (kind == MappingKind::Dense) {
        model.mapping = DenseParams::init(kDenseUnits, in, rng);
    } else if (kind == MappingKind::Lstm) {
        model.lstm = LstmParams::init(kLstmUnits, in, rng);
    }
    model.classifier = DenseParams::init(1, model.mapped_dim(), rng);
    return model;
}

namespace {

VectorXd densify(const SparseVec& sparse, Eigen::Index dim) {
    VectorXd out = VectorXd::Zero(dim);
    for (const auto& [idx, value] : sparse) out(idx) += value;
    return out;
}

VectorXd embed_one(const Representation& rep, const TripleIds& ids) {
    if (rep.kind == Representation::Kind::OneHot) {
        return densify(one_hot_url(ids, rep.vocab_size), rep.vocab_size);
    }
    return compose_url_embedding(rep.mode, ids, *rep.table);
}

}  // namespace

std::vector<VectorXd> embed_sequence(std::span<const TripleIds> urls,
                                     const Representation& rep) {
    if (urls.empty()) throw EmptySequence("embed_sequence: empty URL sequence");
    std::vector<VectorXd> out;
    out.reserve(urls.size());
    for (const TripleIds& ids : urls) out.push_back(embed_one(rep, ids));
    return out;
}

VectorXd map_average(std::span<const VectorXd> xs) {
    if (xs.empty()) throw EmptySequence("map_average: empty sequence");
    VectorXd sum = VectorXd::Zero(xs[0].size());
    for (const VectorXd& x : xs) {
        if (x.size() != sum.size()) throw ShapeError("map_average: ragged input");
        sum += x;
    }
    return sum / static_cast<double>(xs.size());
}

VectorXd map_dense(std::span<const VectorXd> xs, const DenseParams& params, double dropout_rate,
                   DropoutMode mode, Rng* rng) {
    VectorXd mean = map_average(xs);
    VectorXd z = dense_forward(params, mean, Activation::Relu);
    if (mode == DropoutMode::Train && dropout_rate > 0.0) {
        if (!rng) throw ConfigError("map_dense: train-mode dropout needs an rng");
        z = dropout_apply(z, dropout_rate, mode, *rng);
    }
    return z;
}

VectorXd map_lstm(std::span<const VectorXd> xs, const LstmParams& params, double dropout_rate,
                  DropoutMode mode, Rng* rng) {
    if (xs.empty()) throw EmptySequence("map_lstm: empty sequence");
    if (mode == DropoutMode::Eval || dropout_rate == 0.0) {
        return lstm_forward(params, xs);
    }
    if (!rng) throw ConfigError("map_lstm: train-mode dropout needs an rng");
    VectorXd input_mask, recur_mask;
    dropout_apply(VectorXd::Ones(xs[0].size()), dropout_rate, mode, *rng, &input_mask);
    dropout_apply(VectorXd::Ones(params.hidden), dropout_rate, mode, *rng, &recur_mask);
    std::vector<VectorXd> masked;
    masked.reserve(xs.size());
    for (const VectorXd& x : xs) masked.push_back(x.cwiseProduct(input_mask));
    return lstm_forward(params, masked, nullptr, &recur_mask);
}

DropoutMasks sample_masks(const ConversionModel& model, Rng& rng) {
    DropoutMasks masks;
    if (model.dropout == 0.0) return masks;
    if (model.kind == MappingKind::Dense) {
        dropout_apply(VectorXd::Ones(kDenseUnits), model.dropout, DropoutMode::Train, rng,
                      &masks.dense);
    } else if (model.kind == MappingKind::Lstm) {
        dropout_apply(VectorXd::Ones(model.rep.url_dim()), model.dropout, DropoutMode::Train,
                      rng, &masks.lstm_input);
        dropout_apply(VectorXd::Ones(kLstmUnits), model.dropout, DropoutMode::Train, rng,
                      &masks.lstm_recur);
    }
    return masks;
}

ModelGrads ModelGrads::zeros_like(const ConversionModel& model) {
    ModelGrads g;
    if (model.kind == MappingKind::Dense) {
        g.mapping_w = MatrixXd::Zero(model.mapping.weight.rows(), model.mapping.weight.cols());
        g.mapping_b = VectorXd::Zero(model.mapping.bias.size());
    } else if (model.kind == MappingKind::Lstm) {
        g.lstm_w = MatrixXd::Zero(model.lstm.w_input.rows(), model.lstm.w_input.cols());
        g.lstm_u = MatrixXd::Zero(model.lstm.w_recur.rows(), model.lstm.w_recur.cols());
        g.lstm_b = VectorXd::Zero(model.lstm.bias.size());
    }
    g.classifier_w =
        MatrixXd::Zero(model.classifier.weight.rows(), model.classifier.weight.cols());
    g.classifier_b = VectorXd::Zero(1);
    return g;
}

void ModelGrads::set_zero() {
    mapping_w.setZero();
    mapping_b.setZero();
    lstm_w.setZero();
    lstm_u.setZero();
    lstm_b.setZero();
    classifier_w.setZero();
    classifier_b.setZero();
}

namespace {

// sigmoid classifier head over z; returns loss, accumulates grads and d loss/d z
double head_loss_and_grads(const ConversionModel& model, const VectorXd& z, double label,
                           ModelGrads* grads, double scale, VectorXd* dz) {
    DenseCache cache;
    const double p = dense_forward(model.classifier, z, Activation::Sigmoid, &cache)(0);
    const BceResult bce = bce_loss(p, label);
    if (grads || dz) {
        VectorXd upstream(1);
        upstream(0) = bce.grad;
        DenseGrads dg = dense_backward(model.classifier, cache, upstream);
        if (grads) {
            grads->classifier_w += scale * dg.weight;
            grads->classifier_b += scale * dg.bias;
        }
        if (dz) *dz = dg.input;
    }
    return bce.loss;
}

double average_path(const ConversionModel& model, const VectorXd& mean, double label,
                    ModelGrads* grads, double scale) {
    return head_loss_and_grads(model, mean, label, grads, scale, nullptr);
}

double dense_path(const ConversionModel& model, const VectorXd& mean, double label,
                  const DropoutMasks* masks, ModelGrads* grads, double scale) {
    DenseCache cache;
    VectorXd h = dense_forward(model.mapping, mean, Activation::Relu, &cache);
    const bool masked = masks && masks->dense.size() > 0;
    VectorXd z = masked ? VectorXd(h.cwiseProduct(masks->dense)) : h;

    VectorXd dz;
    const double loss =
        head_loss_and_grads(model, z, label, grads, scale, grads ? &dz : nullptr);
    if (grads) {
        if (masked) dz = dz.cwiseProduct(masks->dense);
        DenseGrads dg = dense_backward(model.mapping, cache, dz);
        grads->mapping_w += scale * dg.weight;
        grads->mapping_b += scale * dg.bias;
    }
    return loss;
}

double lstm_path(const ConversionModel& model, std::span<const VectorXd> inputs, double label,
                 const DropoutMasks* masks, ModelGrads* grads, double scale) {
    const bool masked = masks && masks->lstm_input.size() > 0;
    std::vector<VectorXd> xs;
    std::span<const VectorXd> used = inputs;
    if (masked) {
        xs.reserve(inputs.size());
        for (const VectorXd& x : inputs) xs.push_back(x.cwiseProduct(masks->lstm_input));
        used = xs;
    }
    const VectorXd* recur = masked && masks->lstm_recur.size() > 0 ? &masks->lstm_recur : nullptr;

    LstmSeqCache cache;
    VectorXd h_last = lstm_forward(model.lstm, used, grads ? &cache : nullptr, recur);

    VectorXd dz;
    const double loss =
        head_loss_and_grads(model, h_last, label, grads, scale, grads ? &dz : nullptr);
    if (grads) {
        LstmGrads lg = lstm_backward(model.lstm, cache, dz);
        grads->lstm_w += scale * lg.w_input;
        grads->lstm_u += scale * lg.w_recur;
        grads->lstm_b += scale * lg.bias;
    }
    return loss;
}

double sparse_lr_path(const ConversionModel& model, const SparseVec& mean, double label,
                      ModelGrads* grads, double scale) {
    double z = model.classifier.bias(0);
    for (const auto& [idx, value] : mean) z += model.classifier.weight(0, idx) * value;
    const double p = sigmoid(z);
    const BceResult bce = bce_loss(p, label);
    if (grads) {
        const double dpre = bce.grad * p * (1.0 - p);
        for (const auto& [idx, value] : mean) {
            grads->classifier_w(0, idx) += scale * dpre * value;
        }
        grads->classifier_b(0) += scale * dpre;
    }
    return bce.loss;
}

SparseVec sparse_mean(std::span<const TripleIds> urls, int32_t vocab_size) {
    std::vector<double> acc(static_cast<std::size_t>(vocab_size), 0.0);
    for (const TripleIds& ids : urls) {
        for (const auto& [idx, value] : one_hot_url(ids, vocab_size)) {
            acc[static_cast<std::size_t>(idx)] += value;
        }
    }
    SparseVec out;
    const double inv = 1.0 / static_cast<double>(urls.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        if (acc[i] != 0.0) out.emplace_back(static_cast<int32_t>(i), acc[i] * inv);
    }
    return out;
}

}  // namespace

double example_loss_and_grads(const ConversionModel& model, std::span<const TripleIds> urls,
                              double label, const DropoutMasks* masks, ModelGrads* grads,
                              double scale) {
    if (urls.empty()) throw EmptySequence("example_loss_and_grads: empty URL sequence");

    if (model.rep.kind == Representation::Kind::OneHot && model.kind == MappingKind::Average) {
        return sparse_lr_path(model, sparse_mean(urls, model.rep.vocab_size), label, grads,
                              scale);
    }

    switch (model.kind) {
        case MappingKind::Average: {
            std::vector<VectorXd> xs = embed_sequence(urls, model.rep);
            return average_path(model, map_average(xs), label, grads, scale);
        }
        case MappingKind::Dense: {
            std::vector<VectorXd> xs = embed_sequence(urls, model.rep);
            return dense_path(model, map_average(xs), label, masks, grads, scale);
        }
        case MappingKind::Lstm: {
            std::vector<VectorXd> xs = embed_sequence(urls, model.rep);
            return lstm_path(model, xs, label, masks, grads, scale);
        }
    }
    throw ConfigError("unknown mapping kind");
}

double predict_proba(const ConversionModel& model, std::span<const TripleIds> urls) {
    if (urls.empty()) throw EmptySequence("predict_proba: empty URL sequence");

    if (model.rep.kind == Representation::Kind::OneHot && model.kind == MappingKind::Average) {
        double z = model.classifier.bias(0);
        for (const auto& [idx, value] : sparse_mean(urls, model.rep.vocab_size)) {
            z += model.classifier.weight(0, idx) * value;
        }
        return sigmoid(z);
    }

    std::vector<VectorXd> xs = embed_sequence(urls, model.rep);
    VectorXd z;
    switch (model.kind) {
        case MappingKind::Average: z = map_average(xs); break;
        case MappingKind::Dense:
            z = map_dense(xs, model.mapping, 0.0, DropoutMode::Eval, nullptr);
            break;
        case MappingKind::Lstm:
            z = map_lstm(xs, model.lstm, 0.0, DropoutMode::Eval, nullptr);
            break;
    }
    return dense_forward(model.classifier, z, Activation::Sigmoid)(0);
}

TrainResult train_classifier(ConversionModel& model, std::span<const LabeledSequence> train,
                             const std::string& advertiser, const TrainConfig& cfg,
                             const EpochProgressFn& progress) {
    if (cfg.epochs < 1 || cfg.steps_per_epoch < 1) {
        throw ConfigError("epochs and steps_per_epoch must be >= 1");
    }
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    model.dropout = model.kind == MappingKind::Average ? 0.0 : cfg.dropout;

    BalancedBatchSampler sampler(train, advertiser, cfg.batch_size, cfg.seed);
    Rng dropout_rng(cfg.seed ^ 0xd06b1a5e5ull);

    // truncated views: a record enters the model as its most recent URLs
    std::vector<std::span<const TripleIds>> views;
    views.reserve(train.size());
    for (const LabeledSequence& rec : train) {
        const std::size_t n = std::min(rec.urls.size(), cfg.max_seq_len);
        views.emplace_back(rec.urls.data() + (rec.urls.size() - n), n);
    }

    // Embeddings are frozen, so order-free mappings can reuse per-record
    // means across all epochs.
    const bool sparse_lr =
        model.rep.kind == Representation::Kind::OneHot && model.kind == MappingKind::Average;
    const bool cache_means = model.kind != MappingKind::Lstm && !sparse_lr;
    std::vector<VectorXd> mean_cache;
    std::vector<SparseVec> sparse_cache;
    if (cache_means) {
        mean_cache.resize(train.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            mean_cache[i] = map_average(embed_sequence(views[i], model.rep));
        }
    } else if (sparse_lr) {
        sparse_cache.resize(train.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            sparse_cache[i] = sparse_mean(views[i], model.rep.vocab_size);
        }
    }

    ModelGrads grads = ModelGrads::zeros_like(model);
    AdamConfig adam;
    AdamState st_cw = AdamState::like(model.classifier.weight);
    AdamState st_cb = AdamState::like(model.classifier.bias);
    AdamState st_mw, st_mb, st_lw, st_lu, st_lb;
    if (model.kind == MappingKind::Dense) {
        st_mw = AdamState::like(model.mapping.weight);
        st_mb = AdamState::like(model.mapping.bias);
    } else if (model.kind == MappingKind::Lstm) {
        st_lw = AdamState::like(model.lstm.w_input);
        st_lu = AdamState::like(model.lstm.w_recur);
        st_lb = AdamState::like(model.lstm.bias);
    }

    TrainResult result;
    result.epoch_mean_loss.reserve(static_cast<std::size_t>(cfg.epochs));
    const double scale = 1.0 / static_cast<double>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            Batch batch = sampler.next_batch();
            ++result.balanced_batches;
            if (batch.n_pos != cfg.batch_size / 2 || batch.n_neg != cfg.batch_size / 2) {
                result.all_batches_balanced = false;
            }

            grads.set_zero();
            double batch_loss = 0.0;
            for (std::size_t idx : batch.indices) {
                const double y = train[idx].labels.at(advertiser);
                DropoutMasks masks = sample_masks(model, dropout_rng);
                if (cache_means) {
                    batch_loss +=
                        model.kind == MappingKind::Average
                            ? average_path(model, mean_cache[idx], y, &grads, scale)
                            : dense_path(model, mean_cache[idx], y, &masks, &grads, scale);
                } else if (sparse_lr) {
                    batch_loss += sparse_lr_path(model, sparse_cache[idx], y, &grads, scale);
                } else {
                    batch_loss +=
                        example_loss_and_grads(model, views[idx], y, &masks, &grads, scale);
                }
            }
            batch_loss *= scale;

            adam_step(adam, st_cw, model.classifier.weight, grads.classifier_w);
            adam_step(adam, st_cb, model.classifier.bias, grads.classifier_b);
            if (model.kind == MappingKind::Dense) {
                adam_step(adam, st_mw, model.mapping.weight, grads.mapping_w);
                adam_step(adam, st_mb, model.mapping.bias, grads.mapping_b);
            } else if (model.kind == MappingKind::Lstm) {
                adam_step(adam, st_lw, model.lstm.w_input, grads.lstm_w);
                adam_step(adam, st_lu, model.lstm.w_recur, grads.lstm_u);
                adam_step(adam, st_lb, model.lstm.bias, grads.lstm_b);
            }

            ++result.total_steps;
            epoch_loss += batch_loss;
        }
        const double mean = epoch_loss / static_cast<double>(cfg.steps_per_epoch);
        result.epoch_mean_loss.push_back(mean);
        if (progress) progress(epoch, mean);
    }
    return result;
}

void save_model(const ConversionModel& model, const std::string& path) {
    if (model.rep.kind == Representation::Kind::Embedding && !model.rep.table) {
        throw ConfigError("save_model: embedding representation has no table attached");
    }
    std::vector<NamedTensor> tensors;
    const double meta[] = {
        static_cast<double>(model.kind == MappingKind::Average  ? 0
                            : model.kind == MappingKind::Dense ? 1
                                                               : 2),
        static_cast<double>(model.rep.kind == Representation::Kind::OneHot ? 0 : 1),
        static_cast<double>(model.rep.mode == CompositionMode::DomainOnly  ? 0
                            : model.rep.mode == CompositionMode::TokenAvg ? 1
                                                                          : 2),
        static_cast<double>(model.rep.vocab_size),
        static_cast<double>(model.rep.kind == Representation::Kind::Embedding
                                ? model.rep.table->cols()
                                : 0),
        model.dropout,
        model.rep.allow_onehot_nonlinear ? 1.0 : 0.0,
    };
    tensors.push_back(tensor_of("meta", std::span<const double>(meta, 7)));
    tensors.push_back(tensor_of("classifier.weight", model.classifier.weight));
    tensors.push_back(
        tensor_of("classifier.bias", std::span<const double>(model.classifier.bias.data(), 1)));
    if (model.kind == MappingKind::Dense) {
        tensors.push_back(tensor_of("mapping.weight", model.mapping.weight));
        tensors.push_back(tensor_of(
            "mapping.bias", std::span<const double>(model.mapping.bias.data(),
                                                    static_cast<std::size_t>(
                                                        model.mapping.bias.size()))));
    } else if (model.kind == MappingKind::Lstm) {
        tensors.push_back(tensor_of("lstm.w_input", model.lstm.w_input));
        tensors.push_back(tensor_of("lstm.w_recur", model.lstm.w_recur));
        tensors.push_back(tensor_of(
            "lstm.bias", std::span<const double>(model.lstm.bias.data(),
                                                 static_cast<std::size_t>(
                                                     model.lstm.bias.size()))));
    }
    write_tensor_file(path, tensors);
}

namespace {

const Tensor& require_tensor(const std::map<std::string, Tensor>& tensors,
                             const std::string& name, const std::string& path) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError(path + ": missing tensor '" + name + "'");
    return it->second;
}

}  // namespace

ConversionModel load_model(const std::string& path) {
    const auto tensors = read_tensor_file(path);
    const Tensor& meta = require_tensor(tensors, "meta", path);
    if (meta.dims.size() != 1 || meta.data.size() != 7) {
        throw FormatError(path + ": bad meta tensor");
    }

    ConversionModel model;
    const int kind = static_cast<int>(meta.data[0]);
    model.kind = kind == 0   ? MappingKind::Average
                 : kind == 1 ? MappingKind::Dense
                             : MappingKind::Lstm;
    model.rep.kind = meta.data[1] == 0.0 ? Representation::Kind::OneHot
                                         : Representation::Kind::Embedding;
    const int mode = static_cast<int>(meta.data[2]);
    model.rep.mode = mode == 0   ? CompositionMode::DomainOnly
                     : mode == 1 ? CompositionMode::TokenAvg
                                 : CompositionMode::TokenConcat;
    model.rep.vocab_size = static_cast<int32_t>(meta.data[3]);
    model.dropout = meta.data[5];
    model.rep.allow_onehot_nonlinear = meta.data[6] != 0.0;

    model.classifier.weight = tensor_to_matrix(require_tensor(tensors, "classifier.weight", path));
    model.classifier.bias = tensor_to_vector(require_tensor(tensors, "classifier.bias", path));
    if (model.kind == MappingKind::Dense) {
        model.mapping.weight = tensor_to_matrix(require_tensor(tensors, "mapping.weight", path));
        model.mapping.bias = tensor_to_vector(require_tensor(tensors, "mapping.bias", path));
    } else if (model.kind == MappingKind::Lstm) {
        model.lstm.w_input = tensor_to_matrix(require_tensor(tensors, "lstm.w_input", path));
        model.lstm.w_recur = tensor_to_matrix(require_tensor(tensors, "lstm.w_recur", path));
        model.lstm.bias = tensor_to_vector(require_tensor(tensors, "lstm.bias", path));
        model.lstm.hidden = model.lstm.w_recur.cols();
    }
    return model;
}

void attach_representation(ConversionModel& model, const MatrixXd& table) {
    if (model.rep.kind != Representation::Kind::Embedding) {
        throw ConfigError("model does not use an embedding representation");
    }
    model.rep.table = &table;
    const Eigen::Index expect =
        model.kind == MappingKind::Dense  ? model.mapping.weight.cols()
        : model.kind == MappingKind::Lstm ? model.lstm.input_dim()
                                          : model.classifier.weight.cols();
    if (model.rep.url_dim() != expect) {
        throw ShapeError("attached table does not match model input width");
    }
}

}  // namespace urlseq
