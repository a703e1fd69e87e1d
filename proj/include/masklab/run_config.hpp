#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "masklab/encoder.hpp"
#include "masklab/features.hpp"
#include "masklab/masking.hpp"
#include "masklab/probes.hpp"
#include "masklab/synth.hpp"
#include "masklab/trainer.hpp"
#include "masklab/vad.hpp"

namespace masklab {

constexpr const char *kToolVersion = "0.1.0";

struct SweepSpec {
    std::string parameter = "rho"; // rho, budget or span
    std::vector<double> values{0.80, 0.85, 0.90, 0.95, 1.00};
    std::vector<MaskPolicy> policies{MaskPolicy::SpeechLevel, MaskPolicy::Combined};
    std::vector<ProbeTask> tasks{ProbeTask::PhonemeL, ProbeTask::Phoneme1H};
    int pretrain_steps = 2000;
    int probe_steps = 500;

    void validate() const;
};

/// Every tunable of a run. Settings come from `section.key=value` lines and
/// command-line overrides; module seeds are derived from the global seed.
struct RunConfig {
    std::uint64_t seed = 1;
    std::filesystem::path out_dir = "masklab_out";
    bool force = false;

    SynthCorpusSpec corpus;
    FeatureConfig features;
    VadConfig vad;
    MaskPolicyConfig mask;
    EncoderConfig encoder;
    TrainConfig train;
    ProbeConfig probe;
    double probe_train_fraction = 0.8;
    SweepSpec sweep;

    /// Throws ConfigError for unknown keys or values that do not parse.
    void set(const std::string &key, const std::string &value);

    /// Reads `key=value` lines; blank lines and '#' comments are skipped.
    void load_file(const std::filesystem::path &path);

    /// Re-derives module seeds and dependent dimensions. Call after the last set().
    void resolve();

    /// Throws ConfigError if a resolved module config is invalid.
    void validate() const;

    /// Sorted `key=value` lines for the given sections (all when empty).
    std::string dump(const std::vector<std::string> &sections = {}) const;

    /// Hash of the global seed plus the dumped sections.
    std::uint64_t hash(const std::vector<std::string> &sections = {}) const;

    std::uint64_t split_seed() const;

    static std::vector<std::string> keys();
};

std::string hex64(std::uint64_t v);

} // namespace masklab
