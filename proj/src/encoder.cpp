#include "masklab/encoder.hpp"

#include <cmath>

#include "masklab/error.hpp"
#include "masklab/random.hpp"

namespace masklab {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654; // sqrt(2 / pi)

MatrixXd add_bias(MatrixXd m, const MatrixXd &bias) {
    m.rowwise() += bias.row(0);
    return m;
}

MatrixXd column_sums(const MatrixXd &m) { return m.colwise().sum(); }

MatrixXd layer_norm(const MatrixXd &x, const MatrixXd &gain, const MatrixXd &bias, LayerNormCache &cache) {
    const VectorXd mean = x.rowwise().mean();
    MatrixXd centered = x.colwise() - mean;
    const VectorXd var = centered.array().square().rowwise().mean();
    cache.inv_std = (var.array() + kLayerNormEps).rsqrt();
    cache.normed = centered.array().colwise() * cache.inv_std.array();
    MatrixXd out = cache.normed.array().rowwise() * gain.row(0).array();
    out.rowwise() += bias.row(0);
    return out;
}

MatrixXd layer_norm_backward(const MatrixXd &grad, const MatrixXd &gain, const LayerNormCache &cache,
                             MatrixXd &d_gain, MatrixXd &d_bias) {
    d_gain += (grad.array() * cache.normed.array()).colwise().sum().matrix();
    d_bias += grad.colwise().sum();
    const MatrixXd dn = grad.array().rowwise() * gain.row(0).array();
    const VectorXd mean_dn = dn.rowwise().mean();
    const VectorXd mean_dn_n = (dn.array() * cache.normed.array()).rowwise().mean();
    MatrixXd dx = dn.colwise() - mean_dn;
    dx -= (cache.normed.array().colwise() * mean_dn_n.array()).matrix();
    return dx.array().colwise() * cache.inv_std.array();
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
    const double t = std::tanh(kGeluScale * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * 0.044715 * x * x);
}

MatrixXd dropout_mask(int rows, int cols, double rate, Rng &rng) {
    MatrixXd mask(rows, cols);
    const double keep = 1.0 / (1.0 - rate);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) {
            mask(r, c) = rng.uniform() < rate ? 0.0 : keep;
        }
    }
    return mask;
}

MatrixXd apply_optional(const MatrixXd &x, const MatrixXd &mask) {
    return mask.size() == 0 ? x : MatrixXd(x.cwiseProduct(mask));
}

MatrixXd xavier(int fan_in, int fan_out, Rng &rng) {
    const double stddev = std::sqrt(2.0 / (fan_in + fan_out));
    MatrixXd w(fan_in, fan_out);
    for (int c = 0; c < fan_out; ++c) {
        for (int r = 0; r < fan_in; ++r) {
            w(r, c) = static_cast<float>(stddev * rng.normal());
        }
    }
    return w;
}

} // namespace

void EncoderConfig::validate() const {
    if (input_dim < 1 || d_model < 1 || num_layers < 1 || num_heads < 1 || ff_dim < 1 || max_frames < 1) {
        throw Error(ErrorKind::InvalidConfig, "encoder dimensions must be >= 1");
    }
    if (d_model % num_heads != 0) {
        throw Error(ErrorKind::InvalidConfig, "d_model must be divisible by num_heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw Error(ErrorKind::InvalidConfig, "dropout must be in [0, 1)");
    }
}

EncoderConfig EncoderConfig::full_scale() {
    EncoderConfig cfg;
    cfg.d_model = 768;
    cfg.num_layers = 3;
    cfg.num_heads = 12;
    cfg.ff_dim = 3072;
    cfg.dropout = 0.1;
    return cfg;
}

void EncoderParams::visit(const std::function<void(const std::string &, MatrixXd &)> &f) {
    f("in_w", in_w);
    f("in_b", in_b);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto &p = layers[l];
        const std::string pre = "layer" + std::to_string(l) + ".";
        f(pre + "ln1_gain", p.ln1_gain);
        f(pre + "ln1_bias", p.ln1_bias);
        f(pre + "wq", p.wq);
        f(pre + "bq", p.bq);
        f(pre + "wk", p.wk);
        f(pre + "bk", p.bk);
        f(pre + "wv", p.wv);
        f(pre + "bv", p.bv);
        f(pre + "wo", p.wo);
        f(pre + "bo", p.bo);
        f(pre + "ln2_gain", p.ln2_gain);
        f(pre + "ln2_bias", p.ln2_bias);
        f(pre + "ff1_w", p.ff1_w);
        f(pre + "ff1_b", p.ff1_b);
        f(pre + "ff2_w", p.ff2_w);
        f(pre + "ff2_b", p.ff2_b);
    }
    f("final_ln_gain", final_ln_gain);
    f("final_ln_bias", final_ln_bias);
    f("out_w", out_w);
    f("out_b", out_b);
}

void EncoderParams::visit(const std::function<void(const std::string &, const MatrixXd &)> &f) const {
    const_cast<EncoderParams *>(this)->visit(
        [&](const std::string &name, MatrixXd &m) { f(name, static_cast<const MatrixXd &>(m)); });
}

std::size_t EncoderParams::parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string &, const MatrixXd &m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

void EncoderParams::set_zero() {
    visit([](const std::string &, MatrixXd &m) { m.setZero(); });
}

EncoderParams zero_params(const EncoderConfig &cfg) {
    cfg.validate();
    const int d = cfg.d_model;
    EncoderParams p;
    p.in_w = MatrixXd::Zero(cfg.input_dim, d);
    p.in_b = MatrixXd::Zero(1, d);
    p.layers.resize(static_cast<std::size_t>(cfg.num_layers));
    for (auto &l : p.layers) {
        l.ln1_gain = MatrixXd::Zero(1, d);
        l.ln1_bias = MatrixXd::Zero(1, d);
        l.wq = MatrixXd::Zero(d, d);
        l.bq = MatrixXd::Zero(1, d);
        l.wk = MatrixXd::Zero(d, d);
        l.bk = MatrixXd::Zero(1, d);
        l.wv = MatrixXd::Zero(d, d);
        l.bv = MatrixXd::Zero(1, d);
        l.wo = MatrixXd::Zero(d, d);
        l.bo = MatrixXd::Zero(1, d);
        l.ln2_gain = MatrixXd::Zero(1, d);
        l.ln2_bias = MatrixXd::Zero(1, d);
        l.ff1_w = MatrixXd::Zero(d, cfg.ff_dim);
        l.ff1_b = MatrixXd::Zero(1, cfg.ff_dim);
        l.ff2_w = MatrixXd::Zero(cfg.ff_dim, d);
        l.ff2_b = MatrixXd::Zero(1, d);
    }
    p.final_ln_gain = MatrixXd::Zero(1, d);
    p.final_ln_bias = MatrixXd::Zero(1, d);
    p.out_w = MatrixXd::Zero(d, cfg.input_dim);
    p.out_b = MatrixXd::Zero(1, cfg.input_dim);
    return p;
}

EncoderModel init_encoder(const EncoderConfig &cfg, std::uint64_t seed) {
    EncoderModel model{cfg, zero_params(cfg)};
    Rng rng(derive_seed(seed, "encoder-init"));
    auto &p = model.params;
    const int d = cfg.d_model;
    p.in_w = xavier(cfg.input_dim, d, rng);
    for (auto &l : p.layers) {
        l.ln1_gain.setOnes();
        l.ln2_gain.setOnes();
        l.wq = xavier(d, d, rng);
        l.wk = xavier(d, d, rng);
        l.wv = xavier(d, d, rng);
        l.wo = xavier(d, d, rng);
        l.ff1_w = xavier(d, cfg.ff_dim, rng);
        l.ff2_w = xavier(cfg.ff_dim, d, rng);
    }
    p.final_ln_gain.setOnes();
    p.out_w = xavier(d, cfg.input_dim, rng);
    return model;
}

MatrixXd positional_encoding(int frames, int dim) {
    MatrixXd pe(frames, dim);
    for (int i = 0; i < dim; i += 2) {
        const double rate = std::pow(10000.0, -static_cast<double>(i) / dim);
        for (int t = 0; t < frames; ++t) {
            pe(t, i) = std::sin(t * rate);
            if (i + 1 < dim) {
                pe(t, i + 1) = std::cos(t * rate);
            }
        }
    }
    return pe;
}

ForwardPass forward(const EncoderModel &model, const FeatureMatrix &input, bool training, std::uint64_t dropout_seed) {
    const auto &cfg = model.config;
    const auto &p = model.params;
    if (input.dims() != cfg.input_dim) {
        throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(input.dims()) + " dims, model expects " +
                                                  std::to_string(cfg.input_dim));
    }
    const int frames = input.frames();
    if (frames > cfg.max_frames) {
        throw Error(ErrorKind::TooLong, std::to_string(frames) + " frames exceeds max_frames " +
                                            std::to_string(cfg.max_frames));
    }
    if (frames < 1) {
        throw Error(ErrorKind::ShapeMismatch, "empty input");
    }
    const bool use_dropout = training && cfg.dropout > 0.0;
    Rng rng(dropout_seed);
    const int heads = cfg.num_heads;
    const int dh = cfg.d_model / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ForwardPass pass;
    auto &cache = pass.cache;
    cache.input = input.values;
    MatrixXd h = add_bias(input.values * p.in_w, p.in_b) + positional_encoding(frames, cfg.d_model);

    cache.layers.resize(p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto &lp = p.layers[l];
        auto &lc = cache.layers[l];
        lc.input = h;
        lc.attn_in = layer_norm(h, lp.ln1_gain, lp.ln1_bias, lc.ln1);
        lc.q = add_bias(lc.attn_in * lp.wq, lp.bq);
        lc.k = add_bias(lc.attn_in * lp.wk, lp.bk);
        lc.v = add_bias(lc.attn_in * lp.wv, lp.bv);
        lc.context.resize(frames, cfg.d_model);
        lc.probs.resize(static_cast<std::size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            MatrixXd scores = lc.q.middleCols(hd * dh, dh) * lc.k.middleCols(hd * dh, dh).transpose() * scale;
            const VectorXd row_max = scores.rowwise().maxCoeff();
            scores = (scores.colwise() - row_max).array().exp();
            const VectorXd row_sum = scores.rowwise().sum();
            scores = scores.array().colwise() / row_sum.array();
            lc.context.middleCols(hd * dh, dh) = scores * lc.v.middleCols(hd * dh, dh);
            lc.probs[static_cast<std::size_t>(hd)] = std::move(scores);
        }
        MatrixXd attn_out = add_bias(lc.context * lp.wo, lp.bo);
        if (use_dropout) {
            lc.attn_drop = dropout_mask(frames, cfg.d_model, cfg.dropout, rng);
        }
        h = h + apply_optional(attn_out, lc.attn_drop);

        lc.ff_in = layer_norm(h, lp.ln2_gain, lp.ln2_bias, lc.ln2);
        lc.pre_act = add_bias(lc.ff_in * lp.ff1_w, lp.ff1_b);
        lc.act = lc.pre_act.unaryExpr([](double x) { return gelu(x); });
        if (use_dropout) {
            lc.act_drop = dropout_mask(frames, cfg.ff_dim, cfg.dropout, rng);
            lc.ff_drop = dropout_mask(frames, cfg.d_model, cfg.dropout, rng);
        }
        const MatrixXd ff_out = add_bias(apply_optional(lc.act, lc.act_drop) * lp.ff2_w, lp.ff2_b);
        h = h + apply_optional(ff_out, lc.ff_drop);
        pass.hidden.push_back(h);
    }

    cache.final_normed = layer_norm(h, p.final_ln_gain, p.final_ln_bias, cache.final_ln);
    pass.output.values = add_bias(cache.final_normed * p.out_w, p.out_b);
    pass.output.frame_rate = input.frame_rate;
    return pass;
}

EncoderParams backward(const EncoderModel &model, const ForwardPass &pass, const MatrixXd &grad_output) {
    const auto &cfg = model.config;
    const auto &p = model.params;
    const auto &cache = pass.cache;
    const int heads = cfg.num_heads;
    const int dh = cfg.d_model / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    EncoderParams g = zero_params(cfg);
    g.out_w = cache.final_normed.transpose() * grad_output;
    g.out_b = column_sums(grad_output);
    MatrixXd dh_stream = layer_norm_backward(grad_output * p.out_w.transpose(), p.final_ln_gain, cache.final_ln,
                                             g.final_ln_gain, g.final_ln_bias);

    for (std::size_t li = p.layers.size(); li-- > 0;) {
        const auto &lp = p.layers[li];
        const auto &lc = cache.layers[li];
        auto &lg = g.layers[li];

        // Feed-forward branch.
        const MatrixXd d_ff_out = apply_optional(dh_stream, lc.ff_drop);
        const MatrixXd act_used = apply_optional(lc.act, lc.act_drop);
        lg.ff2_w = act_used.transpose() * d_ff_out;
        lg.ff2_b = column_sums(d_ff_out);
        MatrixXd d_act = apply_optional(d_ff_out * lp.ff2_w.transpose(), lc.act_drop);
        const MatrixXd d_pre = d_act.cwiseProduct(lc.pre_act.unaryExpr([](double x) { return gelu_grad(x); }));
        lg.ff1_w = lc.ff_in.transpose() * d_pre;
        lg.ff1_b = column_sums(d_pre);
        MatrixXd d_mid = dh_stream + layer_norm_backward(d_pre * lp.ff1_w.transpose(), lp.ln2_gain, lc.ln2,
                                                         lg.ln2_gain, lg.ln2_bias);

        // Attention branch.
        const MatrixXd d_attn_out = apply_optional(d_mid, lc.attn_drop);
        lg.wo = lc.context.transpose() * d_attn_out;
        lg.bo = column_sums(d_attn_out);
        const MatrixXd d_context = d_attn_out * lp.wo.transpose();
        MatrixXd dq(lc.q.rows(), lc.q.cols()), dk(lc.k.rows(), lc.k.cols()), dv(lc.v.rows(), lc.v.cols());
        for (int hd = 0; hd < heads; ++hd) {
            const MatrixXd &probs = lc.probs[static_cast<std::size_t>(hd)];
            const auto d_ctx_h = d_context.middleCols(hd * dh, dh);
            const MatrixXd d_probs = d_ctx_h * lc.v.middleCols(hd * dh, dh).transpose();
            dv.middleCols(hd * dh, dh) = probs.transpose() * d_ctx_h;
            const VectorXd row_dot = (d_probs.array() * probs.array()).rowwise().sum();
            const MatrixXd d_scores = probs.array() * (d_probs.colwise() - row_dot).array();
            dq.middleCols(hd * dh, dh) = d_scores * lc.k.middleCols(hd * dh, dh) * scale;
            dk.middleCols(hd * dh, dh) = d_scores.transpose() * lc.q.middleCols(hd * dh, dh) * scale;
        }
        lg.wq = lc.attn_in.transpose() * dq;
        lg.bq = column_sums(dq);
        lg.wk = lc.attn_in.transpose() * dk;
        lg.bk = column_sums(dk);
        lg.wv = lc.attn_in.transpose() * dv;
        lg.bv = column_sums(dv);
        const MatrixXd d_attn_in = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
        dh_stream = d_mid + layer_norm_backward(d_attn_in, lp.ln1_gain, lc.ln1, lg.ln1_gain, lg.ln1_bias);
    }

    g.in_w = cache.input.transpose() * dh_stream;
    g.in_b = column_sums(dh_stream);
    return g;
}

MatrixXd extract_representations(const EncoderModel &model, const FeatureMatrix &x) {
    return forward(model, x, false).hidden.back();
}

std::string to_string(LossScope s) { return s == LossScope::MaskedOnly ? "masked" : "all"; }

LossScope parse_loss_scope(const std::string &name) {
    if (name == "masked") return LossScope::MaskedOnly;
    if (name == "all") return LossScope::AllFrames;
    throw Error(ErrorKind::InvalidConfig, "unknown loss scope '" + name + "'");
}

long loss_positions(const MaskSequence &mask, int dims, LossScope scope) {
    const long frames = scope == LossScope::AllFrames ? mask.frames : mask.masked_count();
    return frames * dims;
}

namespace {

void check_loss_shapes(const FeatureMatrix &target, const FeatureMatrix &prediction, const MaskSequence &mask) {
    if (target.frames() != prediction.frames() || target.dims() != prediction.dims()) {
        throw Error(ErrorKind::ShapeMismatch, "target and prediction shapes differ");
    }
    if (mask.frames != target.frames()) {
        throw Error(ErrorKind::ShapeMismatch, "mask length differs from feature length");
    }
}

// Sum of |X - X~| over the selected positions.
double l1_sum(const FeatureMatrix &target, const FeatureMatrix &prediction, const MaskSequence &mask,
              LossScope scope) {
    double sum = 0.0;
    for (int t = 0; t < target.frames(); ++t) {
        if (scope == LossScope::AllFrames || mask.is_masked(t)) {
            sum += (target.values.row(t) - prediction.values.row(t)).cwiseAbs().sum();
        }
    }
    return sum;
}

} // namespace

double l1_loss(const FeatureMatrix &target, const FeatureMatrix &prediction, const MaskSequence &mask,
               LossScope scope) {
    check_loss_shapes(target, prediction, mask);
    const long n = loss_positions(mask, target.dims(), scope);
    if (n == 0) {
        throw Error(ErrorKind::EmptyMask, "no masked frames to score");
    }
    return l1_sum(target, prediction, mask, scope) / static_cast<double>(n);
}

BatchGradient compute_gradients(const EncoderModel &model, const std::vector<TrainingExample> &batch, LossScope scope,
                                bool training, std::uint64_t dropout_seed) {
    long total = 0;
    for (const auto &ex : batch) {
        total += loss_positions(ex.mask, ex.target->dims(), scope);
    }
    if (total == 0) {
        throw Error(ErrorKind::EmptyMask, "no masked frames in batch");
    }
    const double inv_total = 1.0 / static_cast<double>(total);

    BatchGradient out;
    out.grads = zero_params(model.config);
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto &ex = batch[i];
        const ForwardPass pass = forward(model, ex.input, training, derive_seed(dropout_seed, "dropout", i));
        check_loss_shapes(*ex.target, pass.output, ex.mask);
        sum += l1_sum(*ex.target, pass.output, ex.mask, scope);

        // Subgradient of |.| at 0 is taken as 0.
        MatrixXd grad = MatrixXd::Zero(pass.output.frames(), pass.output.dims());
        for (int t = 0; t < grad.rows(); ++t) {
            if (scope == LossScope::AllFrames || ex.mask.is_masked(t)) {
                for (int f = 0; f < grad.cols(); ++f) {
                    const double diff = pass.output.values(t, f) - ex.target->values(t, f);
                    grad(t, f) = diff > 0.0 ? inv_total : (diff < 0.0 ? -inv_total : 0.0);
                }
            }
        }
        EncoderParams g = backward(model, pass, grad);
        std::vector<MatrixXd *> dst;
        out.grads.visit([&](const std::string &, MatrixXd &m) { dst.push_back(&m); });
        std::size_t k = 0;
        g.visit([&](const std::string &, const MatrixXd &m) { *dst[k++] += m; });
    }
    out.loss = sum * inv_total;
    if (!std::isfinite(out.loss)) {
        throw Error(ErrorKind::NonFiniteLoss, "loss is not finite");
    }
    return out;
}

} // namespace masklab
