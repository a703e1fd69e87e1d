#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "masklab/features.hpp"
#include "masklab/masking.hpp"

namespace masklab {

struct EncoderConfig {
    int input_dim = 80;
    int d_model = 64;
    int num_layers = 2;
    int num_heads = 2;
    int ff_dim = 128;
    double dropout = 0.0;
    int max_frames = 4096;

    void validate() const;

    /// 3 layers, FF 3072, dropout 0.1; width and head count follow the
    /// usual 768/12 base configuration.
    static EncoderConfig full_scale();
};

/// Biases and layer-norm parameters are stored as 1 x n matrices.
struct LayerParams {
    Eigen::MatrixXd ln1_gain, ln1_bias;
    Eigen::MatrixXd wq, bq, wk, bk, wv, bv, wo, bo;
    Eigen::MatrixXd ln2_gain, ln2_bias;
    Eigen::MatrixXd ff1_w, ff1_b, ff2_w, ff2_b;
};

struct EncoderParams {
    Eigen::MatrixXd in_w, in_b;
    std::vector<LayerParams> layers;
    Eigen::MatrixXd final_ln_gain, final_ln_bias;
    Eigen::MatrixXd out_w, out_b;

    /// Visits every tensor in a fixed order with a stable name.
    void visit(const std::function<void(const std::string &, Eigen::MatrixXd &)> &f);
    void visit(const std::function<void(const std::string &, const Eigen::MatrixXd &)> &f) const;

    std::size_t parameter_count() const;
    void set_zero();
};

/// Correctly shaped, all-zero parameters.
EncoderParams zero_params(const EncoderConfig &cfg);

struct EncoderModel {
    EncoderConfig config;
    EncoderParams params;
};

/// Xavier-normal weights, zero biases, unit layer-norm gains. Values are
/// rounded to float precision like every stored parameter.
EncoderModel init_encoder(const EncoderConfig &cfg, std::uint64_t seed);

struct LayerNormCache {
    Eigen::MatrixXd normed;
    Eigen::VectorXd inv_std;
};

struct LayerCache {
    Eigen::MatrixXd input;
    LayerNormCache ln1;
    Eigen::MatrixXd attn_in;
    Eigen::MatrixXd q, k, v;
    std::vector<Eigen::MatrixXd> probs; // one T x T matrix per head
    Eigen::MatrixXd context;
    Eigen::MatrixXd attn_drop; // empty when dropout is inactive
    LayerNormCache ln2;
    Eigen::MatrixXd ff_in;
    Eigen::MatrixXd pre_act, act;
    Eigen::MatrixXd act_drop, ff_drop;
};

struct ForwardCache {
    Eigen::MatrixXd input;
    std::vector<LayerCache> layers;
    LayerNormCache final_ln;
    Eigen::MatrixXd final_normed;
};

struct ForwardPass {
    FeatureMatrix output;               // X~, T x input_dim
    std::vector<Eigen::MatrixXd> hidden; // residual stream after each layer
    ForwardCache cache;
};

/// Sinusoidal position table, T x d.
Eigen::MatrixXd positional_encoding(int frames, int dim);

/// Pre-norm transformer encoder. Dropout is applied only when `training`
/// is set and the configured rate is positive.
ForwardPass forward(const EncoderModel &model, const FeatureMatrix &input, bool training,
                    std::uint64_t dropout_seed = 0);

/// Gradients of a scalar loss given dL/dX~.
EncoderParams backward(const EncoderModel &model, const ForwardPass &pass, const Eigen::MatrixXd &grad_output);

/// Last-layer hidden states for unmasked input, inference mode.
Eigen::MatrixXd extract_representations(const EncoderModel &model, const FeatureMatrix &x);

enum class LossScope { MaskedOnly, AllFrames };

std::string to_string(LossScope s);
LossScope parse_loss_scope(const std::string &name);

/// Mean |X - X~| over masked frames x all dims, or over every position.
double l1_loss(const FeatureMatrix &target, const FeatureMatrix &prediction, const MaskSequence &mask,
               LossScope scope);

/// Number of positions the loss averages over.
long loss_positions(const MaskSequence &mask, int dims, LossScope scope);

struct TrainingExample {
    const FeatureMatrix *target = nullptr;
    FeatureMatrix input; // masked
    MaskSequence mask;
};

struct BatchGradient {
    double loss = 0.0;
    EncoderParams grads;
};

/// Loss pooled over all selected positions of the batch and its exact
/// gradient. Per-utterance gradients are summed in batch order.
BatchGradient compute_gradients(const EncoderModel &model, const std::vector<TrainingExample> &batch,
                                LossScope scope, bool training = false, std::uint64_t dropout_seed = 0);

} // namespace masklab
