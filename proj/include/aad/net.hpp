#pragma once
// The band-focused sound classifier: a Mobile-FaceNet-style stack of two 3x3
// convolutions, three inverted-residual stages, a 1x1 expansion, a global
// depthwise convolution, a linear 1x1 projection, global average pooling, and
// a dense softmax head. Includes Adam training with checkpoint rollback,
// binary checkpoints, per-clip embedding extraction, and a finite-difference
// gradient-check harness.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "aad/audio.hpp"
#include "aad/augment.hpp"
#include "aad/common.hpp"
#include "aad/corpus.hpp"
#include "aad/dsp.hpp"
#include "aad/layers.hpp"

namespace aad::net {

struct ModelConfig {
    int num_classes = 4;
    double width_mult = 1.0;
    double dropout_rate = 0.3;
    int input_mels = 128;

    void validate() const {
        if (num_classes < 2) throw InvalidConfig("model needs at least 2 classes");
        if (!(width_mult > 0.0) || width_mult > 1.0)
            throw InvalidConfig("width_mult must lie in (0, 1]");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw InvalidConfig("dropout_rate must lie in [0, 1)");
        if (input_mels < 16) throw InvalidConfig("input_mels must be at least 16");
    }

    // channel counts scale with width_mult but never drop below 8
    int scaled(int channels) const {
        return std::max(8, static_cast<int>(std::lround(channels * width_mult)));
    }
};

inline constexpr int kMinFrames = 32;  // survives the stride chain down to >= 2 frames

template <typename S>
class Model {
  public:
    Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed);
        const int c1 = cfg.scaled(64);
        const int c2 = cfg.scaled(64);
        const int cb = cfg.scaled(128);
        const int c3 = cfg.scaled(512);
        hidden_units_ = cfg.scaled(1024);

        add("conv1", std::make_unique<Conv2d<S>>(1, c1, 3, 3, 2, PadMode::circular, rng));
        add("bn1", std::make_unique<BatchNorm2d<S>>(c1));
        add("", std::make_unique<ReLU6<S>>());
        add("conv2", std::make_unique<Conv2d<S>>(c1, c2, 3, 3, 1, PadMode::circular, rng));
        add("bn2", std::make_unique<BatchNorm2d<S>>(c2));
        add("", std::make_unique<ReLU6<S>>());

        const int expansions[3] = {2, 4, 4};
        int in_ch = c2;
        for (int stage = 0; stage < 3; ++stage) {
            const std::string name = "stage" + std::to_string(stage + 1);
            add(name + ".block1",
                std::make_unique<Bottleneck<S>>(in_ch, cb, expansions[stage], 2, rng));
            add(name + ".block2",
                std::make_unique<Bottleneck<S>>(cb, cb, expansions[stage], 1, rng));
            in_ch = cb;
        }

        add("conv3", std::make_unique<Conv2d<S>>(cb, c3, 1, 1, 1, PadMode::circular, rng));
        add("bn3", std::make_unique<BatchNorm2d<S>>(c3));
        add("", std::make_unique<ReLU6<S>>());

        // height after the five same-padded stride-2 halvings in the trunk
        int h = cfg.input_mels;
        for (const int s : {2, 1, 2, 2, 2}) h = detail::same_out(h, s);
        final_height_ = h;
        add("gdconv", std::make_unique<DepthwiseConv2d<S>>(c3, final_height_, 1, 1, true,
                                                           PadMode::circular, rng));
        add("bn4", std::make_unique<BatchNorm2d<S>>(c3));
        add("conv4", std::make_unique<Conv2d<S>>(c3, c3, 1, 1, 1, PadMode::circular, rng));
        add("bn5", std::make_unique<BatchNorm2d<S>>(c3));

        add("", std::make_unique<GlobalAvgPool2d<S>>());
        add("fc1", std::make_unique<Dense<S>>(c3, hidden_units_, rng));
        hidden_index_ = static_cast<int>(seq_.size());
        add("", std::make_unique<ReLU<S>>());
        add("", std::make_unique<Dropout<S>>(cfg.dropout_rate));
        add("fc2", std::make_unique<Dense<S>>(hidden_units_, cfg.num_classes, rng));
    }

    const ModelConfig& config() const { return cfg_; }
    int hidden_units() const { return hidden_units_; }

    Tensor<S> forward_logits(const Tensor<S>& x, bool train, Rng* rng) {
        if (x.shape.size() != 4 || x.dim(1) != 1 || x.dim(2) != cfg_.input_mels)
            throw ShapeMismatch("expected input [B x 1 x " +
                                std::to_string(cfg_.input_mels) + " x T], got " +
                                x.shape_str());
        if (x.dim(3) < kMinFrames)
            throw InputTooSmall("need at least " + std::to_string(kMinFrames) +
                                " frames, got " + std::to_string(x.dim(3)));
        const Tensor<S>* t = &x;
        for (size_t i = 0; i < seq_.size(); ++i) {
            t = &seq_[i]->forward(*t, train, rng);
            if (static_cast<int>(i) == hidden_index_) hidden_ = *t;
        }
        return *t;
    }

    // softmax probabilities; throws if any activation went non-finite
    Tensor<S> forward(const Tensor<S>& x, bool train, Rng* rng) {
        const Tensor<S> logits = forward_logits(x, train, rng);
        if (!logits.finite()) throw NonFiniteActivation("non-finite network output");
        SoftmaxCrossEntropy<S> softmax;
        return softmax.forward(logits);
    }

    // activation after the hidden dense layer's ReLU, from the last forward
    const Tensor<S>& hidden() const { return hidden_; }

    void backward(const Tensor<S>& dlogits) {
        const Tensor<S>* g = &dlogits;
        for (size_t i = seq_.size(); i-- > 0;) g = &seq_[i]->backward(*g);
    }

    std::vector<ParamRef<S>> params() {
        std::vector<ParamRef<S>> out;
        for (size_t i = 0; i < seq_.size(); ++i)
            if (!names_[i].empty()) seq_[i]->collect_params(out, names_[i]);
        return out;
    }
    std::vector<ParamRef<S>> buffers() {
        std::vector<ParamRef<S>> out;
        for (size_t i = 0; i < seq_.size(); ++i)
            if (!names_[i].empty()) seq_[i]->collect_buffers(out, names_[i]);
        return out;
    }
    void zero_grads() {
        for (auto& p : params()) p.grad->zero();
    }

  private:
    void add(std::string name, std::unique_ptr<Layer<S>> layer) {
        names_.push_back(std::move(name));
        seq_.push_back(std::move(layer));
    }

    ModelConfig cfg_;
    int hidden_units_ = 0;
    int final_height_ = 0;
    int hidden_index_ = -1;
    std::vector<std::string> names_;
    std::vector<std::unique_ptr<Layer<S>>> seq_;
    Tensor<S> hidden_;
};

template <typename S>
inline Model<S> build_model(const ModelConfig& cfg, uint64_t seed) {
    return Model<S>(cfg, seed);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename S>
class Adam {
  public:
    explicit Adam(double lr) : lr_(lr) {}

    double learning_rate() const { return lr_; }
    long step_count() const { return step_; }

    void step(const std::vector<ParamRef<S>>& params) {
        if (m_.empty()) init(params);
        ++step_;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
        for (size_t p = 0; p < params.size(); ++p) {
            Tensor<S>& value = *params[p].value;
            const Tensor<S>& grad = *params[p].grad;
            Tensor<S>& m = m_[p];
            Tensor<S>& v = v_[p];
            for (size_t i = 0; i < value.data.size(); ++i) {
                const double g = grad.data[i];
                const double mi = kBeta1 * m.data[i] + (1.0 - kBeta1) * g;
                const double vi = kBeta2 * v.data[i] + (1.0 - kBeta2) * g * g;
                m.data[i] = static_cast<S>(mi);
                v.data[i] = static_cast<S>(vi);
                value.data[i] = static_cast<S>(
                    value.data[i] - lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + kEps));
            }
        }
    }

    // checkpoint access: moment tensors parallel to the model's param order
    std::vector<Tensor<S>>& moments1(const std::vector<ParamRef<S>>& params) {
        if (m_.empty()) init(params);
        return m_;
    }
    std::vector<Tensor<S>>& moments2(const std::vector<ParamRef<S>>& params) {
        if (m_.empty()) init(params);
        return v_;
    }
    void set_step(long s) { step_ = s; }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

  private:
    void init(const std::vector<ParamRef<S>>& params) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.emplace_back(p.value->shape);
            v_.emplace_back(p.value->shape);
        }
    }

    double lr_;
    long step_ = 0;
    std::vector<Tensor<S>> m_, v_;
};

// ---------------------------------------------------------------------------
// Checkpoints: magic "AADM", version, config JSON, named f32 tensors.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CorruptCheckpoint("truncated checkpoint");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f32_block(std::ostream& out, const float* data, size_t count) {
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        put_u32(out, bits);
    }
}

inline void get_f32_block(std::istream& in, float* data, size_t count) {
    for (size_t i = 0; i < count; ++i) {
        const uint32_t bits = get_u32(in);
        std::memcpy(&data[i], &bits, 4);
    }
}

inline void put_named_tensor(std::ostream& out, const std::string& name,
                             const Tensor<float>& t) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (const int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    put_f32_block(out, t.data.data(), t.data.size());
}

}  // namespace detail

inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(Model<float>& model, const std::filesystem::path& path,
                            Adam<float>* adam = nullptr) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path.string());
    out.write("AADM", 4);
    detail::put_u32(out, kCheckpointVersion);

    const ModelConfig& cfg = model.config();
    const nlohmann::json meta = {{"num_classes", cfg.num_classes},
                                 {"width_mult", cfg.width_mult},
                                 {"dropout_rate", cfg.dropout_rate},
                                 {"input_mels", cfg.input_mels},
                                 {"adam_step", adam ? adam->step_count() : 0}};
    const std::string blob = meta.dump();
    detail::put_u32(out, static_cast<uint32_t>(blob.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));

    auto params = model.params();
    auto buffers = model.buffers();
    uint32_t count = static_cast<uint32_t>(params.size() + buffers.size());
    if (adam) count += static_cast<uint32_t>(2 * params.size());
    detail::put_u32(out, count);
    for (const auto& p : params) detail::put_named_tensor(out, p.name, *p.value);
    for (const auto& b : buffers) detail::put_named_tensor(out, b.name, *b.value);
    if (adam) {
        auto& m = adam->moments1(params);
        auto& v = adam->moments2(params);
        for (size_t i = 0; i < params.size(); ++i) {
            detail::put_named_tensor(out, "adam.m." + params[i].name, m[i]);
            detail::put_named_tensor(out, "adam.v." + params[i].name, v[i]);
        }
    }
    if (!out) throw IoFailure("failed writing " + path.string());
}

inline Model<float> load_checkpoint(const std::filesystem::path& path,
                                    Adam<float>* adam = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot read " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "AADM")
        throw CorruptCheckpoint(path.string() + " is not a model checkpoint");
    if (detail::get_u32(in) != kCheckpointVersion)
        throw CorruptCheckpoint("unsupported checkpoint version in " + path.string());

    const uint32_t blob_len = detail::get_u32(in);
    std::string blob(blob_len, '\0');
    in.read(blob.data(), blob_len);
    if (!in) throw CorruptCheckpoint("truncated checkpoint");
    ModelConfig cfg;
    long adam_step = 0;
    try {
        const nlohmann::json meta = nlohmann::json::parse(blob);
        cfg.num_classes = meta.at("num_classes").get<int>();
        cfg.width_mult = meta.at("width_mult").get<double>();
        cfg.dropout_rate = meta.at("dropout_rate").get<double>();
        cfg.input_mels = meta.at("input_mels").get<int>();
        adam_step = meta.value("adam_step", 0L);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(std::string("bad checkpoint metadata: ") + e.what());
    }

    Model<float> model(cfg, 0);
    auto params = model.params();
    auto buffers = model.buffers();
    std::map<std::string, Tensor<float>*> slots;
    for (const auto& p : params) slots[p.name] = p.value;
    for (const auto& b : buffers) slots[b.name] = b.value;
    if (adam) {
        auto& m = adam->moments1(params);
        auto& v = adam->moments2(params);
        for (size_t i = 0; i < params.size(); ++i) {
            slots["adam.m." + params[i].name] = &m[i];
            slots["adam.v." + params[i].name] = &v[i];
        }
        adam->set_step(adam_step);
    }

    const uint32_t count = detail::get_u32(in);
    size_t filled = 0;
    for (uint32_t t = 0; t < count; ++t) {
        const uint32_t name_len = detail::get_u32(in);
        if (name_len > 4096) throw CorruptCheckpoint("implausible tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t ndim = detail::get_u32(in);
        if (ndim > 8) throw CorruptCheckpoint("implausible tensor rank");
        std::vector<int> dims(ndim);
        size_t numel = 1;
        for (auto& d : dims) {
            d = static_cast<int>(detail::get_u32(in));
            numel *= static_cast<size_t>(d);
        }
        const auto it = slots.find(name);
        if (it == slots.end()) {
            if (name.rfind("adam.", 0) == 0 && !adam) {  // optimizer state not requested
                std::vector<float> skip(numel);
                detail::get_f32_block(in, skip.data(), numel);
                continue;
            }
            throw CorruptCheckpoint("unknown tensor '" + name + "' in " + path.string());
        }
        if (it->second->shape != dims)
            throw CorruptCheckpoint("tensor '" + name + "' has unexpected shape");
        detail::get_f32_block(in, it->second->data.data(), numel);
        ++filled;
    }
    const size_t expected =
        params.size() + buffers.size() + (adam ? 2 * params.size() : 0);
    if (filled != expected)
        throw CorruptCheckpoint("checkpoint is missing tensors (" + std::to_string(filled) +
                                " of " + std::to_string(expected) + ")");
    return model;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 30;
    double lr = 1e-4;
    int batch_size = 32;
    int checkpoint_every = 20;
    std::filesystem::path checkpoint_dir;  // empty: keep no checkpoints
    bool use_specaugment = true;
    bool use_mixup = true;
    augment::AugmentConfig augment;
    uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
        if (!(lr >= 0.0)) throw InvalidConfig("learning rate must be >= 0");
        if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
        if (checkpoint_every < 1) throw InvalidConfig("checkpoint_every must be >= 1");
        augment.validate();
    }
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainingLog {
    std::vector<EpochStats> epochs;
    std::vector<std::filesystem::path> checkpoints;

    void save_csv(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoFailure("cannot write " + path.string());
        out << "epoch,loss,accuracy\n";
        for (const auto& e : epochs)
            out << e.epoch << ',' << e.loss << ',' << e.accuracy << '\n';
    }
};

// epochs at which checkpoints are written: every k-th epoch plus the last
inline std::vector<int> checkpoint_epochs(int total_epochs, int every) {
    std::vector<int> out;
    for (int e = every; e <= total_epochs; e += every) out.push_back(e);
    if (out.empty() || out.back() != total_epochs) out.push_back(total_epochs);
    return out;
}

namespace detail {

template <typename S>
Tensor<S> pack_specs(const std::vector<dsp::MelSpectrogram>& specs,
                     const std::vector<size_t>& idx) {
    const int mels = specs[idx[0]].n_mels;
    const int frames = specs[idx[0]].n_frames;
    Tensor<S> x({static_cast<int>(idx.size()), 1, mels, frames});
    for (size_t b = 0; b < idx.size(); ++b) {
        const auto& v = specs[idx[b]].values;
        for (size_t i = 0; i < v.size(); ++i)
            x.data[b * v.size() + i] = static_cast<S>(v[i]);
    }
    return x;
}

template <typename S>
Tensor<S> pack_batch(const augment::LabeledBatch& batch, Tensor<S>& targets) {
    const int mels = batch.specs[0].n_mels;
    const int frames = batch.specs[0].n_frames;
    const int classes = static_cast<int>(batch.labels[0].size());
    Tensor<S> x({static_cast<int>(batch.specs.size()), 1, mels, frames});
    targets.reshape({static_cast<int>(batch.specs.size()), classes});
    for (size_t b = 0; b < batch.specs.size(); ++b) {
        const auto& v = batch.specs[b].values;
        for (size_t i = 0; i < v.size(); ++i)
            x.data[b * v.size() + i] = static_cast<S>(v[i]);
        for (int c = 0; c < classes; ++c)
            targets.at2(static_cast<int>(b), c) = static_cast<S>(batch.labels[b][c]);
    }
    return x;
}

inline int argmax_row(const Tensor<float>& t, int row) {
    int best = 0;
    for (int c = 1; c < t.dim(1); ++c)
        if (t.at2(row, c) > t.at2(row, best)) best = c;
    return best;
}

}  // namespace detail

inline void load_checkpoint_into(Model<float>& model, Adam<float>& adam,
                                 const std::filesystem::path& path);

// Train with Adam on hard class labels (one-hot targets; Mixup softens them
// per batch when enabled). Deterministic for a fixed seed on one thread. If a
// batch produces a non-finite loss or activation, the model is restored from
// the newest checkpoint written during this run (when there is one) and
// DivergedLoss is raised.
inline TrainingLog train(Model<float>& model, Adam<float>& adam,
                         const std::vector<dsp::MelSpectrogram>& specs,
                         const std::vector<int>& labels, const TrainConfig& cfg) {
    cfg.validate();
    if (specs.empty()) throw EmptyDataset("no training spectrograms");
    if (specs.size() != labels.size())
        throw ShapeMismatch("spectrogram/label count mismatch");
    for (const auto& spec : specs)
        if (spec.n_mels != model.config().input_mels || spec.n_frames != specs[0].n_frames)
            throw ShapeMismatch("training spectrograms must share one shape");
    const int classes = model.config().num_classes;
    {
        std::vector<bool> seen(static_cast<size_t>(classes), false);
        int distinct = 0;
        for (const int label : labels) {
            if (label < 0 || label >= classes)
                throw InvalidConfig("label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(classes) + ")");
            if (!seen[static_cast<size_t>(label)]) {
                seen[static_cast<size_t>(label)] = true;
                ++distinct;
            }
        }
        if (distinct < 2) throw OneClassOnly("training data holds fewer than 2 classes");
    }

    Rng base(cfg.seed);
    TrainingLog log;
    SoftmaxCrossEntropy<float> objective;

    auto diverge = [&](const std::string& what) -> void {
        std::string note = what;
        if (!log.checkpoints.empty()) {
            load_checkpoint_into(model, adam, log.checkpoints.back());
            note += "; model restored from " + log.checkpoints.back().string();
        }
        throw DivergedLoss(note);
    };

    std::vector<size_t> order(specs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng epoch_rng = base.derive(static_cast<uint64_t>(epoch));
        epoch_rng.shuffle(order);

        double loss_sum = 0.0;
        long correct = 0, total = 0;
        const size_t n_batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
        for (size_t b = 0; b < n_batches; ++b) {
            const size_t lo = b * cfg.batch_size;
            const size_t hi = std::min(order.size(), lo + cfg.batch_size);
            Rng batch_rng =
                base.derive(static_cast<uint64_t>(epoch) * 1000003ULL + b + 1);

            augment::LabeledBatch batch;
            for (size_t i = lo; i < hi; ++i) {
                batch.specs.push_back(specs[order[i]]);
                std::vector<float> one_hot(static_cast<size_t>(classes), 0.0f);
                one_hot[static_cast<size_t>(labels[order[i]])] = 1.0f;
                batch.labels.push_back(std::move(one_hot));
            }
            if (cfg.use_specaugment)
                for (auto& spec : batch.specs)
                    spec = augment::spec_augment(spec, batch_rng, cfg.augment);
            if (cfg.use_mixup && batch.specs.size() >= 2)
                batch = augment::mixup(batch, batch_rng, cfg.augment);

            Tensor<float> targets;
            const Tensor<float> x = detail::pack_batch<float>(batch, targets);

            double loss = 0.0;
            try {
                const Tensor<float> logits = model.forward_logits(x, true, &batch_rng);
                loss = objective.loss(logits, targets);
                if (!std::isfinite(loss)) diverge("training loss became non-finite");
                const Tensor<float>& probs = objective.probs();
                for (int r = 0; r < probs.dim(0); ++r) {
                    if (detail::argmax_row(probs, r) == detail::argmax_row(targets, r))
                        ++correct;
                    ++total;
                }
                model.zero_grads();
                model.backward(objective.backward(targets));
            } catch (const NonFiniteActivation& e) {
                diverge(std::string("non-finite activation: ") + e.what());
            }
            adam.step(model.params());
            loss_sum += loss * static_cast<double>(hi - lo);
        }

        log.epochs.push_back({epoch, loss_sum / static_cast<double>(order.size()),
                              static_cast<double>(correct) / static_cast<double>(total)});

        if (!cfg.checkpoint_dir.empty() &&
            (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
            char name[64];
            std::snprintf(name, sizeof name, "checkpoint_epoch_%03d.aadm", epoch);
            const std::filesystem::path path = cfg.checkpoint_dir / name;
            std::filesystem::create_directories(cfg.checkpoint_dir);
            save_checkpoint(model, path, &adam);
            log.checkpoints.push_back(path);
        }
    }
    return log;
}

// replace a model's tensors with a checkpoint's, keeping the instance
inline void load_checkpoint_into(Model<float>& model, Adam<float>& adam,
                                 const std::filesystem::path& path) {
    Adam<float> fresh(adam.learning_rate());
    Model<float> loaded = load_checkpoint(path, &fresh);
    auto dst = model.params();
    auto src = loaded.params();
    for (size_t i = 0; i < dst.size(); ++i) dst[i].value->data = src[i].value->data;
    auto dst_buf = model.buffers();
    auto src_buf = loaded.buffers();
    for (size_t i = 0; i < dst_buf.size(); ++i)
        dst_buf[i].value->data = src_buf[i].value->data;
    adam.moments1(dst) = fresh.moments1(src);
    adam.moments2(dst) = fresh.moments2(src);
    adam.set_step(fresh.step_count());
}

// ---------------------------------------------------------------------------
// Embedding extraction
// ---------------------------------------------------------------------------

enum class EmbeddingSource { softmax, penultimate };

struct Embedding {
    std::vector<float> values;
    corpus::ClipMeta source;
    int segment_index = 0;
};

// For every clip in the manifest (or every 2.5 s half-overlapped segment when
// segmenting), run the band-limited mel spectrogram through the model in eval
// mode and keep the softmax vector (or the hidden activation).
inline std::vector<Embedding> extract_embeddings(
    Model<float>& model, const corpus::Manifest& manifest, const dsp::FrequencyBand& band,
    bool segmenting, int sample_rate = 16000,
    EmbeddingSource source = EmbeddingSource::softmax) {
    band.validate(sample_rate);
    const dsp::MelFilterbank fb =
        dsp::build_mel_filterbank(sample_rate, model.config().input_mels);
    std::vector<Embedding> out;
    for (const auto& entry : manifest.entries) {
        corpus::AudioClip clip = corpus::read_wav(entry.path);
        if (clip.sample_rate != sample_rate)
            clip = corpus::resample_linear(clip, sample_rate);

        std::vector<dsp::MelSpectrogram> mels;
        if (segmenting) {
            for (const auto& seg : dsp::segment_clip(clip))
                mels.push_back(dsp::mel_spectrogram(
                    dsp::band_crop(dsp::stft(dsp::segment_to_clip(seg)), band), fb));
        } else {
            mels.push_back(
                dsp::mel_spectrogram(dsp::band_crop(dsp::stft(clip), band), fb));
        }

        std::vector<size_t> idx(mels.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        const Tensor<float> x = detail::pack_specs<float>(mels, idx);
        const Tensor<float> probs = model.forward(x, false, nullptr);
        const Tensor<float>& hidden = model.hidden();
        for (size_t s = 0; s < mels.size(); ++s) {
            Embedding e;
            e.source = entry;
            e.segment_index = static_cast<int>(s);
            if (source == EmbeddingSource::softmax) {
                e.values.resize(static_cast<size_t>(probs.dim(1)));
                for (int c = 0; c < probs.dim(1); ++c)
                    e.values[static_cast<size_t>(c)] = probs.at2(static_cast<int>(s), c);
            } else {
                e.values.resize(static_cast<size_t>(hidden.dim(1)));
                for (int c = 0; c < hidden.dim(1); ++c)
                    e.values[static_cast<size_t>(c)] = hidden.at2(static_cast<int>(s), c);
            }
            out.push_back(std::move(e));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient checking (double precision, central differences)
// ---------------------------------------------------------------------------

namespace detail {

// random projection makes a scalar objective out of any layer output
inline double projected(const Tensor<double>& y, const std::vector<double>& proj) {
    double acc = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * proj[i];
    return acc;
}

inline double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

inline double check_layer(Layer<double>& layer, Tensor<double>& x, Rng& rng) {
    constexpr double kH = 1e-4;
    const Tensor<double>& y0 = layer.forward(x, true, &rng);
    std::vector<double> proj(y0.data.size());
    Rng proj_rng(12345);
    for (auto& p : proj) p = proj_rng.uniform(-1.0, 1.0);

    Tensor<double> dy(y0.shape);
    for (size_t i = 0; i < proj.size(); ++i) dy.data[i] = proj[i];

    std::vector<ParamRef<double>> params;
    layer.collect_params(params, "p");
    for (auto& p : params) p.grad->zero();
    layer.forward(x, true, &rng);
    const Tensor<double> dx = layer.backward(dy);

    double worst = 0.0;
    auto probe = [&](double* slot, double analytic) {
        const double keep = *slot;
        *slot = keep + kH;
        const double up = projected(layer.forward(x, true, &rng), proj);
        *slot = keep - kH;
        const double down = projected(layer.forward(x, true, &rng), proj);
        *slot = keep;
        worst = std::max(worst, rel_err(analytic, (up - down) / (2.0 * kH)));
    };
    for (auto& p : params)
        for (size_t i = 0; i < p.value->data.size(); ++i)
            probe(&p.value->data[i], p.grad->data[i]);
    for (size_t i = 0; i < x.data.size(); ++i) probe(&x.data[i], dx.data[i]);
    return worst;
}

}  // namespace detail

// Compare analytic gradients of one layer kind against central finite
// differences; returns the worst relative error over all parameters and
// inputs. Kinds: dense, conv, depthwise, gdconv, batchnorm, bottleneck,
// softmax_ce.
inline double gradient_check(const std::string& kind, uint64_t seed) {
    Rng rng(seed);
    Rng fill = rng.derive(1);
    auto randomize = [&fill](Tensor<double>& t) {
        for (auto& v : t.data) v = fill.uniform(-1.0, 1.0);
    };

    if (kind == "dense") {
        Dense<double> layer(8, 4, rng);
        Tensor<double> x({3, 8});
        randomize(x);
        return detail::check_layer(layer, x, rng);
    }
    if (kind == "conv") {
        Conv2d<double> layer(3, 4, 3, 3, 2, PadMode::circular, rng);
        Tensor<double> x({2, 3, 6, 7});
        randomize(x);
        return detail::check_layer(layer, x, rng);
    }
    if (kind == "depthwise") {
        DepthwiseConv2d<double> layer(3, 3, 3, 1, false, PadMode::circular, rng);
        Tensor<double> x({2, 3, 5, 6});
        randomize(x);
        return detail::check_layer(layer, x, rng);
    }
    if (kind == "gdconv") {
        DepthwiseConv2d<double> layer(4, 5, 1, 1, true, PadMode::circular, rng);
        Tensor<double> x({2, 4, 5, 6});
        randomize(x);
        return detail::check_layer(layer, x, rng);
    }
    if (kind == "batchnorm") {
        BatchNorm2d<double> layer(3);
        Tensor<double> x({4, 3, 4, 5});
        randomize(x);
        return detail::check_layer(layer, x, rng);
    }
    if (kind == "bottleneck") {
        Bottleneck<double> layer(3, 3, 2, 1, rng);
        Tensor<double> x({2, 3, 6, 6});
        randomize(x);
        return detail::check_layer(layer, x, rng);
    }
    if (kind == "softmax_ce") {
        constexpr double kH = 1e-4;
        SoftmaxCrossEntropy<double> objective;
        Tensor<double> logits({3, 5}), targets({3, 5});
        randomize(logits);
        Rng trng = rng.derive(2);
        for (int r = 0; r < 3; ++r) {
            double sum = 0.0;
            for (int c = 0; c < 5; ++c) {
                targets.at2(r, c) = trng.uniform(0.0, 1.0);
                sum += targets.at2(r, c);
            }
            for (int c = 0; c < 5; ++c) targets.at2(r, c) /= sum;
        }
        objective.loss(logits, targets);
        const Tensor<double> dlogits = objective.backward(targets);
        double worst = 0.0;
        for (size_t i = 0; i < logits.data.size(); ++i) {
            const double keep = logits.data[i];
            logits.data[i] = keep + kH;
            const double up = objective.loss(logits, targets);
            logits.data[i] = keep - kH;
            const double down = objective.loss(logits, targets);
            logits.data[i] = keep;
            worst = std::max(worst,
                             detail::rel_err(dlogits.data[i], (up - down) / (2.0 * kH)));
        }
        return worst;
    }
    throw InvalidConfig("unknown gradient check kind '" + kind + "'");
}

}  // namespace aad::net
