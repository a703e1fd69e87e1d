#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "masklab/probes.hpp"
#include "masklab/run_config.hpp"
#include "masklab/trainer.hpp"

namespace masklab {

/// key=value stamp written next to every artifact.
struct Provenance {
    std::string stage;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string tool_version = kToolVersion;
};

void write_provenance(const std::filesystem::path &path, const Provenance &p, const std::string &config_dump);
std::optional<Provenance> read_provenance(const std::filesystem::path &path);

/// FNV-1a over a file's bytes.
std::uint64_t file_digest(const std::filesystem::path &path);

/// Reads a corpus directory (manifest, WAVs, alignments) and derives
/// features and VAD lists with the run's settings.
std::vector<TrainingUtterance> load_corpus(const std::filesystem::path &dir, const RunConfig &cfg);

/// Frame-level or pooled probe data for one task, split by utterance hash.
struct ProbeSplit {
    ProbeDataset train;
    ProbeDataset eval;
};

ProbeSplit probe_split(const EncoderModel &model, const std::vector<TrainingUtterance> &corpus, ProbeTask task,
                       std::uint64_t split_seed, double train_fraction);

/// Trains and evaluates one probe on frozen representations.
ProbeResult run_probe(const EncoderModel &model, const std::vector<TrainingUtterance> &corpus, ProbeTask task,
                      const RunConfig &cfg);

struct StageResult {
    std::string stage;
    bool skipped = false;
    std::vector<std::filesystem::path> artifacts{};
};

struct PretrainRequest {
    std::filesystem::path corpus_dir; // empty: the run's synthetic corpus
    std::filesystem::path out;        // empty: <out>/models/<policy>.ckpt
    std::filesystem::path resume;     // optional checkpoint to continue from
};

struct ProbeRequest {
    std::filesystem::path checkpoint; // empty: randomly initialized encoder
    std::filesystem::path corpus_dir;
    std::filesystem::path out; // empty: <out>/probes/<name>
};

struct AnalyzeRequest {
    std::filesystem::path checkpoint;
    std::string utt_id;
    std::filesystem::path corpus_dir;
    std::filesystem::path out; // empty: <out>/analysis/<utt>_<policy>
};

struct SweepCell {
    MaskPolicy policy = MaskPolicy::SpeechLevel;
    double value = 0.0;
    std::map<ProbeTask, double> accuracy;
    bool failed = false;
    std::string error;
};

struct SweepTable {
    std::string parameter;
    std::vector<ProbeTask> tasks;
    std::vector<SweepCell> cells;
};

/// Runs stages against one output tree. Each stage stamps its outputs with
/// a hash of the settings it depends on and returns early when the stamp
/// already matches, unless the config sets `force`.
class Pipeline {
public:
    Pipeline(RunConfig cfg, std::ostream &log);

    const RunConfig &config() const { return cfg_; }
    std::filesystem::path corpus_dir() const;

    StageResult synth();
    StageResult featurize();
    StageResult vad();
    StageResult align_check();
    StageResult mask();
    StageResult pretrain(const PretrainRequest &req = {});
    StageResult probe(const ProbeRequest &req = {});
    StageResult analyze(const AnalyzeRequest &req);
    SweepTable sweep();

private:
    bool fresh(const std::filesystem::path &stamp, const std::string &hash) const;
    void stamp(const std::filesystem::path &path, const std::string &stage, const std::string &hash,
               const std::vector<std::string> &sections) const;
    SweepCell sweep_cell(const std::vector<TrainingUtterance> &corpus, MaskPolicy policy, double value);

    RunConfig cfg_;
    std::ostream &log_;
};

/// Single-file helpers used by `featurize --in` and `vad --in`.
void featurize_file(const std::filesystem::path &wav, const std::filesystem::path &out, const RunConfig &cfg);
void vad_file(const std::filesystem::path &wav, const std::filesystem::path &out, const RunConfig &cfg);

/// Sweep table as CSV: one row per value, one column per policy and task.
std::string format_sweep_csv(const SweepTable &table, const std::vector<MaskPolicy> &policies);

} // namespace masklab
