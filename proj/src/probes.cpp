#include "masklab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "masklab/error.hpp"
#include "masklab/random.hpp"

namespace masklab {

namespace {

using Eigen::MatrixXd;

MatrixXd softmax_rows(MatrixXd logits) {
    const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    logits = (logits.colwise() - row_max).array().exp();
    const Eigen::VectorXd sums = logits.rowwise().sum();
    return logits.array().colwise() / sums.array();
}

struct Adam {
    std::vector<MatrixXd> m, v;
    long step = 0;

    explicit Adam(const std::vector<MatrixXd *> &params) {
        for (const auto *p : params) {
            m.push_back(MatrixXd::Zero(p->rows(), p->cols()));
            v.push_back(MatrixXd::Zero(p->rows(), p->cols()));
        }
    }

    void update(const std::vector<MatrixXd *> &params, const std::vector<MatrixXd> &grads, double lr) {
        ++step;
        const double c1 = 1.0 - std::pow(0.9, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(0.999, static_cast<double>(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = 0.9 * m[i] + 0.1 * grads[i];
            v[i] = 0.999 * v[i] + 0.001 * grads[i].cwiseProduct(grads[i]);
            params[i]->array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + 1e-8);
        }
    }
};

MatrixXd small_random(int rows, int cols, Rng &rng) {
    const double stddev = std::sqrt(2.0 / (rows + cols));
    MatrixXd w(rows, cols);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) {
            w(r, c) = stddev * rng.normal();
        }
    }
    return w;
}

bool is_hidden(ProbeTask t) { return t == ProbeTask::Phoneme1H; }

} // namespace

std::string to_string(ProbeTask t) {
    switch (t) {
    case ProbeTask::PhonemeL: return "Phoneme-L";
    case ProbeTask::Phoneme1H: return "Phoneme-1H";
    case ProbeTask::SpeakerF: return "Speaker-F";
    case ProbeTask::SpeakerU: return "Speaker-U";
    }
    return "?";
}

ProbeTask parse_probe_task(const std::string &name) {
    std::string key;
    for (char c : name) {
        if (c != '-' && c != '_') {
            key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (key == "phonemel") return ProbeTask::PhonemeL;
    if (key == "phoneme1h") return ProbeTask::Phoneme1H;
    if (key == "speakerf") return ProbeTask::SpeakerF;
    if (key == "speakeru") return ProbeTask::SpeakerU;
    throw Error(ErrorKind::InvalidConfig, "unknown probe task '" + name + "'");
}

void ProbeConfig::validate() const {
    if (task == ProbeTask::Phoneme1H && hidden_dim < 1) {
        throw Error(ErrorKind::InvalidConfig, "hidden_dim must be >= 1");
    }
    if (!(learning_rate > 0.0) || num_steps < 1 || batch_size < 1) {
        throw Error(ErrorKind::InvalidConfig, "probe learning_rate, num_steps and batch_size must be positive");
    }
}

ProbeDataset frame_dataset(const std::vector<MatrixXd> &reps, const std::vector<std::vector<int>> &frame_labels,
                           int num_classes) {
    if (reps.size() != frame_labels.size()) {
        throw Error(ErrorKind::LabelMismatch, "one label sequence per utterance required");
    }
    ProbeDataset ds;
    ds.num_classes = num_classes;
    Eigen::Index rows = 0;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        if (static_cast<std::size_t>(reps[i].rows()) != frame_labels[i].size()) {
            throw Error(ErrorKind::LabelMismatch, "utterance " + std::to_string(i) + " has " +
                                                      std::to_string(frame_labels[i].size()) + " labels for " +
                                                      std::to_string(reps[i].rows()) + " frames");
        }
        rows += reps[i].rows();
    }
    const Eigen::Index dims = reps.empty() ? 0 : reps.front().cols();
    ds.features.resize(rows, dims);
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        ds.features.middleRows(r, reps[i].rows()) = reps[i];
        r += reps[i].rows();
        ds.labels.insert(ds.labels.end(), frame_labels[i].begin(), frame_labels[i].end());
    }
    return ds;
}

Eigen::RowVectorXd mean_pool(const MatrixXd &rep) { return rep.colwise().mean(); }

ProbeDataset pooled_dataset(const std::vector<MatrixXd> &reps, const std::vector<int> &utt_labels, int num_classes) {
    if (reps.size() != utt_labels.size()) {
        throw Error(ErrorKind::LabelMismatch, "one label per utterance required");
    }
    ProbeDataset ds;
    ds.num_classes = num_classes;
    ds.features.resize(static_cast<Eigen::Index>(reps.size()), reps.empty() ? 0 : reps.front().cols());
    for (std::size_t i = 0; i < reps.size(); ++i) {
        ds.features.row(static_cast<Eigen::Index>(i)) = mean_pool(reps[i]);
    }
    ds.labels = utt_labels;
    return ds;
}

PhonemeInventory::PhonemeInventory(const std::vector<PhonemeAlignment> &alignments) {
    std::set<std::string> names;
    for (const auto &a : alignments) {
        for (const auto &s : a.spans) {
            if (!s.is_silence) {
                names.insert(s.label);
            }
        }
    }
    labels_.push_back("sil");
    labels_.insert(labels_.end(), names.begin(), names.end());
}

int PhonemeInventory::class_of(const PhonemeSpan &span) const {
    if (span.is_silence) {
        return 0;
    }
    const auto it = std::lower_bound(labels_.begin() + 1, labels_.end(), span.label);
    if (it == labels_.end() || *it != span.label) {
        throw Error(ErrorKind::LabelMismatch, "phoneme '" + span.label + "' not in inventory");
    }
    return static_cast<int>(std::distance(labels_.begin(), it));
}

std::vector<int> PhonemeInventory::frame_labels(const PhonemeAlignment &a) const {
    std::vector<int> out(static_cast<std::size_t>(a.frames));
    for (const auto &s : a.spans) {
        const int c = class_of(s);
        for (int t = s.begin; t <= s.end; ++t) {
            out[static_cast<std::size_t>(t)] = c;
        }
    }
    return out;
}

int ProbeModel::num_classes() const {
    return static_cast<int>(w2.size() > 0 ? w2.cols() : w1.cols());
}

MatrixXd ProbeModel::logits(const MatrixXd &features) const {
    MatrixXd x = (features.rowwise() - mean).array().rowwise() * inv_std.array();
    MatrixXd z = x * w1;
    z.rowwise() += b1.row(0);
    if (w2.size() == 0) {
        return z;
    }
    MatrixXd out = z.cwiseMax(0.0) * w2;
    out.rowwise() += b2.row(0);
    return out;
}

std::vector<int> ProbeModel::predict(const MatrixXd &features) const {
    const MatrixXd z = logits(features);
    std::vector<int> out(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        Eigen::Index best;
        z.row(r).maxCoeff(&best);
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

ProbeModel train_probe(const ProbeDataset &train, const ProbeConfig &cfg) {
    cfg.validate();
    if (static_cast<Eigen::Index>(train.labels.size()) != train.features.rows()) {
        throw Error(ErrorKind::LabelMismatch, "label count differs from example count");
    }
    const std::set<int> distinct(train.labels.begin(), train.labels.end());
    if (distinct.size() < 2) {
        throw Error(ErrorKind::SingleClass, "training labels contain fewer than two classes");
    }
    for (int c : distinct) {
        if (c < 0 || c >= train.num_classes) {
            throw Error(ErrorKind::LabelMismatch, "label " + std::to_string(c) + " outside class range");
        }
    }

    const int n = train.size();
    const int dims = static_cast<int>(train.features.cols());
    const int classes = train.num_classes;
    ProbeModel probe;
    probe.task = cfg.task;
    probe.mean = train.features.colwise().mean();
    const Eigen::RowVectorXd var = (train.features.rowwise() - probe.mean).array().square().colwise().mean();
    probe.inv_std = (var.array() + 1e-8).rsqrt();

    Rng rng(derive_seed(cfg.seed, "probe-init"));
    const bool hidden = is_hidden(cfg.task);
    if (hidden) {
        probe.w1 = small_random(dims, cfg.hidden_dim, rng);
        probe.b1 = MatrixXd::Zero(1, cfg.hidden_dim);
        probe.w2 = small_random(cfg.hidden_dim, classes, rng);
        probe.b2 = MatrixXd::Zero(1, classes);
    } else {
        probe.w1 = small_random(dims, classes, rng);
        probe.b1 = MatrixXd::Zero(1, classes);
    }
    std::vector<MatrixXd *> params{&probe.w1, &probe.b1};
    if (hidden) {
        params.push_back(&probe.w2);
        params.push_back(&probe.b2);
    }
    Adam adam(params);

    const MatrixXd standardized = (train.features.rowwise() - probe.mean).array().rowwise() * probe.inv_std.array();
    const int batch = std::min(cfg.batch_size, n);
    Rng sampler(derive_seed(cfg.seed, "probe-batches"));
    MatrixXd xb(batch, dims);
    std::vector<int> yb(static_cast<std::size_t>(batch));
    for (int step = 0; step < cfg.num_steps; ++step) {
        for (int i = 0; i < batch; ++i) {
            const auto j = static_cast<Eigen::Index>(sampler.index(static_cast<std::uint64_t>(n)));
            xb.row(i) = standardized.row(j);
            yb[static_cast<std::size_t>(i)] = train.labels[static_cast<std::size_t>(j)];
        }
        MatrixXd z1 = xb * probe.w1;
        z1.rowwise() += probe.b1.row(0);
        MatrixXd a1;
        MatrixXd logits;
        if (hidden) {
            a1 = z1.cwiseMax(0.0);
            logits = a1 * probe.w2;
            logits.rowwise() += probe.b2.row(0);
        } else {
            logits = z1;
        }
        MatrixXd d_logits = softmax_rows(logits);
        for (int i = 0; i < batch; ++i) {
            d_logits(i, yb[static_cast<std::size_t>(i)]) -= 1.0;
        }
        d_logits /= batch;

        std::vector<MatrixXd> grads;
        if (hidden) {
            const MatrixXd d_a1 = d_logits * probe.w2.transpose();
            const MatrixXd d_z1 = d_a1.array() * (z1.array() > 0.0).cast<double>();
            grads.push_back(xb.transpose() * d_z1);
            grads.push_back(d_z1.colwise().sum());
            grads.push_back(a1.transpose() * d_logits);
            grads.push_back(d_logits.colwise().sum());
        } else {
            grads.push_back(xb.transpose() * d_logits);
            grads.push_back(d_logits.colwise().sum());
        }
        adam.update(params, grads, cfg.learning_rate);
    }
    return probe;
}

ProbeResult score_predictions(ProbeTask task, const std::vector<int> &truth, const std::vector<int> &predicted,
                              int num_classes) {
    if (truth.empty()) {
        throw Error(ErrorKind::EmptyEvalSet, "no evaluation examples");
    }
    if (truth.size() != predicted.size()) {
        throw Error(ErrorKind::LabelMismatch, "prediction count differs from label count");
    }
    ProbeResult r;
    r.task = task;
    r.num_examples = static_cast<int>(truth.size());
    r.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        r.confusion(truth[i], predicted[i]) += 1;
    }
    r.accuracy = static_cast<double>(r.confusion.trace()) / r.num_examples;
    return r;
}

ProbeResult eval_probe(const ProbeModel &probe, const ProbeDataset &eval) {
    if (eval.size() == 0) {
        throw Error(ErrorKind::EmptyEvalSet, "no evaluation examples");
    }
    return score_predictions(probe.task, eval.labels, probe.predict(eval.features), probe.num_classes());
}

bool is_train_utterance(const std::string &utt_id, std::uint64_t split_seed, double train_fraction) {
    const std::uint64_t h = derive_seed(split_seed, utt_id);
    return static_cast<double>(h >> 11) * 0x1.0p-53 < train_fraction;
}

void write_results_csv(const std::vector<ResultRow> &rows, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    out << "policy,task,accuracy,num_examples\n";
    char buf[64];
    for (const auto &r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.accuracy);
        out << r.policy << ',' << to_string(r.task) << ',' << buf << ',' << r.num_examples << '\n';
    }
}

std::string format_results_table(const std::vector<ResultRow> &rows) {
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-12s | %-11s | %9s\n", "policy", "task", "accuracy%");
    out << buf << std::string(38, '-') << '\n';
    for (const auto &r : rows) {
        std::snprintf(buf, sizeof(buf), "%-12s | %-11s | %9.1f\n", r.policy.c_str(), to_string(r.task).c_str(),
                      100.0 * r.accuracy);
        out << buf;
    }
    return out.str();
}

} // namespace masklab
