#include "masklab/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "masklab/error.hpp"
#include "masklab/random.hpp"

namespace masklab {

namespace {

std::vector<Eigen::MatrixXd *> tensors(EncoderParams &p) {
    std::vector<Eigen::MatrixXd *> out;
    p.visit([&](const std::string &, Eigen::MatrixXd &m) { out.push_back(&m); });
    return out;
}

std::vector<const Eigen::MatrixXd *> tensors(const EncoderParams &p) {
    std::vector<const Eigen::MatrixXd *> out;
    p.visit([&](const std::string &, const Eigen::MatrixXd &m) { out.push_back(&m); });
    return out;
}

double to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

} // namespace

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) {
        throw Error(ErrorKind::InvalidConfig, "learning_rate must be >= 0");
    }
    if (num_steps < 1 || batch_size < 1) {
        throw Error(ErrorKind::InvalidConfig, "num_steps and batch_size must be >= 1");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
        throw Error(ErrorKind::InvalidConfig, "invalid Adam hyper-parameters");
    }
}

AdamState init_adam(const EncoderConfig &cfg) { return {zero_params(cfg), zero_params(cfg), 0}; }

void adam_update(EncoderParams &params, const EncoderParams &grads, AdamState &state, const TrainConfig &cfg) {
    ++state.step;
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    auto p = tensors(params);
    auto g = tensors(grads);
    auto m = tensors(state.m);
    auto v = tensors(state.v);
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (Eigen::Index k = 0; k < p[i]->size(); ++k) {
            const double gk = g[i]->data()[k];
            double &mk = m[i]->data()[k];
            double &vk = v[i]->data()[k];
            mk = to_float(b1 * mk + (1.0 - b1) * gk);
            vk = to_float(b2 * vk + (1.0 - b2) * gk * gk);
            const double update = cfg.learning_rate * (mk / c1) / (std::sqrt(vk / c2) + cfg.adam_eps);
            p[i]->data()[k] = to_float(p[i]->data()[k] - update);
        }
    }
}

Trainer::Trainer(EncoderModel model, MaskPolicyConfig mask_cfg, TrainConfig train_cfg)
    : Trainer(model, init_adam(model.config), mask_cfg, train_cfg) {}

Trainer::Trainer(EncoderModel model, AdamState optimizer, MaskPolicyConfig mask_cfg, TrainConfig train_cfg)
    : model_(std::move(model)), adam_(std::move(optimizer)), mask_cfg_(mask_cfg), train_cfg_(train_cfg) {
    model_.config.validate();
    mask_cfg_.validate();
    train_cfg_.validate();
}

std::vector<TrainingExample> Trainer::make_batch(const std::vector<TrainingUtterance> &corpus, long step_index) const {
    if (corpus.empty()) {
        throw Error(ErrorKind::InvalidConfig, "empty training corpus");
    }
    Rng rng(derive_seed(train_cfg_.seed, "batch", static_cast<std::uint64_t>(step_index)));
    std::vector<std::size_t> pool(corpus.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i] = i;
    }
    const std::size_t n = std::min(pool.size(), static_cast<std::size_t>(train_cfg_.batch_size));
    std::vector<TrainingExample> batch;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng.index(pool.size() - i);
        std::swap(pool[i], pool[j]);
        const auto &utt = corpus[pool[i]];
        MaskPolicyConfig cfg = mask_cfg_;
        cfg.seed = derive_seed(mask_cfg_.seed, utt.utt_id, static_cast<std::uint64_t>(step_index));
        const MaskSequence mask = generate_mask(utt.alignment, utt.lists, cfg);
        MaskedFeatures masked = apply_mask(utt.features, mask, cfg);
        batch.push_back({&utt.features, std::move(masked.features), std::move(masked.mask)});
    }
    return batch;
}

double Trainer::step(const std::vector<TrainingUtterance> &corpus) {
    const long index = adam_.step;
    auto batch = make_batch(corpus, index);
    // A MaskedOnly batch can come up empty when p * T rounds to zero.
    long positions = 0;
    for (const auto &ex : batch) {
        positions += loss_positions(ex.mask, ex.target->dims(), train_cfg_.loss_scope);
    }
    if (positions == 0) {
        throw Error(ErrorKind::EmptyMask, "step " + std::to_string(index) + " has no masked frames");
    }
    BatchGradient bg;
    try {
        bg = compute_gradients(model_, batch, train_cfg_.loss_scope, true,
                               derive_seed(train_cfg_.seed, "dropout", static_cast<std::uint64_t>(index)));
    } catch (const Error &e) {
        if (e.kind() == ErrorKind::NonFiniteLoss) {
            throw Error(ErrorKind::DivergedLoss, "loss diverged at step " + std::to_string(index));
        }
        throw;
    }
    adam_update(model_.params, bg.grads, adam_, train_cfg_);
    return bg.loss;
}

void Trainer::run(const std::vector<TrainingUtterance> &corpus, int steps, std::vector<double> &losses) {
    for (int i = 0; i < steps; ++i) {
        losses.push_back(step(corpus));
    }
}

PretrainResult pretrain(const std::vector<TrainingUtterance> &corpus, const MaskPolicyConfig &mask_cfg,
                        const EncoderConfig &enc_cfg, const TrainConfig &train_cfg) {
    train_cfg.validate();
    Trainer trainer(init_encoder(enc_cfg, train_cfg.seed), mask_cfg, train_cfg);
    PretrainResult result;
    trainer.run(corpus, train_cfg.num_steps, result.losses);
    result.model = trainer.model();
    result.optimizer = trainer.optimizer();
    return result;
}

void write_loss_curve(const std::vector<double> &losses, const std::filesystem::path &path, long first_step) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    out << "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%ld,%.9g\n", first_step + static_cast<long>(i), losses[i]);
        out << buf;
    }
}

} // namespace masklab
