#pragma once

// Central-difference check of the encoder's analytic gradients.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "masklab/encoder.hpp"
#include "masklab/masking.hpp"
#include "masklab/random.hpp"

namespace gradcheck {

using namespace masklab;

struct Report {
    int checked = 0;
    int tensors = 0;
    double worst_rel = 0.0;
    std::vector<std::string> failures;
};

/// Small encoder with every parameter nudged off its initial value, plus a
/// one-utterance masked batch. Returned by value so callers own the target.
struct Problem {
    EncoderModel model;
    FeatureMatrix target;
    std::vector<TrainingExample> batch;
};

inline Problem make_problem(std::uint64_t seed) {
    Problem p;
    EncoderConfig cfg;
    cfg.input_dim = 6;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.ff_dim = 12;
    cfg.num_layers = 2;
    p.model = init_encoder(cfg, seed);
    Rng rng(derive_seed(seed, "gradcheck"));
    p.model.params.visit([&](const std::string &, Eigen::MatrixXd &m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] += 0.1 * rng.normal();
        }
    });
    p.target.values.resize(9, cfg.input_dim);
    for (Eigen::Index i = 0; i < p.target.values.size(); ++i) {
        p.target.values.data()[i] = 2.0 * rng.normal();
    }
    MaskPolicyConfig mc;
    mc.span = 3;
    mc.budget = 0.3;
    mc.seed = derive_seed(seed, "gradcheck-mask");
    const MaskSequence mask = gen_random_mask(9, mc);
    TrainingExample ex;
    ex.input = apply_mask(p.target, mask, mc).features;
    ex.mask = mask;
    p.batch.push_back(std::move(ex));
    p.batch.back().target = &p.target;
    return p;
}

/// Samples `per_tensor` entries of every tensor. Entries where both
/// derivatives are below `abs_floor` pass outright: the key bias of
/// attention has an exactly zero gradient because softmax ignores a
/// constant shift, and a relative error there only measures round-off.
inline Report run(Problem &p, LossScope scope, int per_tensor, std::uint64_t seed, double tol = 1e-3,
                  double abs_floor = 1e-7) {
    Report rep;
    const BatchGradient g = compute_gradients(p.model, p.batch, scope);
    std::vector<std::pair<std::string, Eigen::MatrixXd *>> params;
    p.model.params.visit([&](const std::string &n, Eigen::MatrixXd &m) { params.push_back({n, &m}); });
    std::vector<const Eigen::MatrixXd *> grads;
    g.grads.visit([&](const std::string &, const Eigen::MatrixXd &m) { grads.push_back(&m); });

    Rng rng(seed);
    const double h = 1e-5;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Eigen::MatrixXd &w = *params[k].second;
        ++rep.tensors;
        for (int r = 0; r < per_tensor; ++r) {
            const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(w.size())));
            const double orig = w.data()[i];
            w.data()[i] = orig + h;
            const double up = compute_gradients(p.model, p.batch, scope).loss;
            w.data()[i] = orig - h;
            const double down = compute_gradients(p.model, p.batch, scope).loss;
            w.data()[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double an = grads[k]->data()[i];
            ++rep.checked;
            if (std::abs(fd) < abs_floor && std::abs(an) < abs_floor) {
                continue;
            }
            const double rel = std::abs(fd - an) / std::max(std::abs(fd), std::abs(an));
            rep.worst_rel = std::max(rep.worst_rel, rel);
            if (rel > tol) {
                rep.failures.push_back(params[k].first + "[" + std::to_string(i) + "] fd=" + std::to_string(fd) +
                                       " analytic=" + std::to_string(an));
            }
        }
    }
    return rep;
}

} // namespace gradcheck
