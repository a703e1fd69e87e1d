#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "masklab/alignment.hpp"

namespace masklab {

enum class ProbeTask { PhonemeL, Phoneme1H, SpeakerF, SpeakerU };

std::string to_string(ProbeTask t);
ProbeTask parse_probe_task(const std::string &name);

struct ProbeConfig {
    ProbeTask task = ProbeTask::PhonemeL;
    int hidden_dim = 128;
    double learning_rate = 1e-3;
    int num_steps = 500;
    int batch_size = 256;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Labeled vectors a probe trains or evaluates on: one row per frame, or
/// one mean-pooled row per utterance for SpeakerU.
struct ProbeDataset {
    Eigen::MatrixXd features;
    std::vector<int> labels;
    int num_classes = 0;

    int size() const { return static_cast<int>(labels.size()); }
};

/// Frame-level examples. `frame_labels[i]` must have one entry per row of
/// `reps[i]`.
ProbeDataset frame_dataset(const std::vector<Eigen::MatrixXd> &reps, const std::vector<std::vector<int>> &frame_labels,
                           int num_classes);

/// Utterance-level examples from mean-pooled representations.
ProbeDataset pooled_dataset(const std::vector<Eigen::MatrixXd> &reps, const std::vector<int> &utt_labels,
                            int num_classes);

Eigen::RowVectorXd mean_pool(const Eigen::MatrixXd &rep);

/// Maps phoneme labels to classes. All silence labels share one class.
class PhonemeInventory {
public:
    PhonemeInventory() = default;
    explicit PhonemeInventory(const std::vector<PhonemeAlignment> &alignments);

    int class_of(const PhonemeSpan &span) const;
    int size() const { return static_cast<int>(labels_.size()); }
    const std::vector<std::string> &labels() const { return labels_; }

    std::vector<int> frame_labels(const PhonemeAlignment &a) const;

private:
    std::vector<std::string> labels_; // index 0 is "sil"
};

/// Softmax classifier over standardized inputs; one hidden ReLU layer for
/// Phoneme1H, linear otherwise.
struct ProbeModel {
    ProbeTask task = ProbeTask::PhonemeL;
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd inv_std;
    Eigen::MatrixXd w1, b1; // input -> hidden (or -> classes for linear probes)
    Eigen::MatrixXd w2, b2; // hidden -> classes, empty for linear probes

    int num_classes() const;
    Eigen::MatrixXd logits(const Eigen::MatrixXd &features) const;
    std::vector<int> predict(const Eigen::MatrixXd &features) const;
};

/// Adam on softmax cross-entropy. Only the probe's own parameters are
/// updated; the representations are read-only inputs.
ProbeModel train_probe(const ProbeDataset &train, const ProbeConfig &cfg);

struct ProbeResult {
    ProbeTask task = ProbeTask::PhonemeL;
    double accuracy = 0.0;
    int num_examples = 0;
    Eigen::MatrixXi confusion; // rows = truth, cols = prediction
};

ProbeResult eval_probe(const ProbeModel &probe, const ProbeDataset &eval);

/// Scores fixed predictions, e.g. from a trivial baseline.
ProbeResult score_predictions(ProbeTask task, const std::vector<int> &truth, const std::vector<int> &predicted,
                              int num_classes);

/// Deterministic 80/20 style split keyed by utterance id and seed.
bool is_train_utterance(const std::string &utt_id, std::uint64_t split_seed, double train_fraction = 0.8);

struct ResultRow {
    std::string policy;
    ProbeTask task;
    double accuracy;
    int num_examples;
};

/// CSV `policy,task,accuracy,num_examples`.
void write_results_csv(const std::vector<ResultRow> &rows, const std::filesystem::path &path);

/// Human-readable `policy | task | accuracy%` table.
std::string format_results_table(const std::vector<ResultRow> &rows);

} // namespace masklab
