#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "masklab/alignment.hpp"
#include "masklab/features.hpp"
#include "masklab/vad.hpp"

namespace masklab {

enum class MaskPolicy { Random, SpeechLevel, PhonemeLevel, Combined };
enum class MaskMode { ZeroAll, Stochastic801010 };

std::string to_string(MaskPolicy p);
MaskPolicy parse_mask_policy(const std::string &name);
std::string to_string(MaskMode m);
MaskMode parse_mask_mode(const std::string &name);

struct MaskPolicyConfig {
    MaskPolicy policy = MaskPolicy::Random;
    int span = 7;         // C
    double budget = 0.15; // p, target masked fraction of T
    double rho = 0.9;     // share of starting points drawn from the speech list
    MaskMode mode = MaskMode::ZeroAll;
    bool include_silence_phones = false;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class SpanOrigin { RandomSpan, SpeechSpan, SilenceSpan, PhonemeSpan };

std::string to_string(SpanOrigin o);

struct FrameState {
    enum class Kind { Unmasked, MaskedZero, MaskedReplace, MaskedKeep };
    Kind kind = Kind::Unmasked;
    int source = -1; // MaskedReplace only

    bool masked() const { return kind != Kind::Unmasked; }
};

/// One span as drawn by a generator, before overlapping spans are merged.
/// `anchor` is the sampled starting frame (for Combined phoneme spans, the
/// speech frame that selected the phoneme).
struct DrawnSpan {
    int anchor = 0;
    int start = 0;
    int end = 0; // inclusive
    SpanOrigin origin = SpanOrigin::RandomSpan;
    std::string label; // phoneme label for PhonemeSpan
};

/// Maximal group of overlapping drawn spans. Takes the origin of the
/// earliest drawn member.
struct MaskRun {
    int start = 0;
    int end = 0; // inclusive
    SpanOrigin origin = SpanOrigin::RandomSpan;
    std::string label;

    int length() const { return end - start + 1; }
};

struct MaskSequence {
    int frames = 0;
    std::vector<FrameState> states;
    std::vector<MaskRun> runs;
    std::vector<DrawnSpan> draws; // in draw order
    int speech_starts = 0;        // starts drawn from list A
    int silence_starts = 0;       // starts drawn from list B
    std::vector<std::string> warnings;

    int masked_count() const;
    bool is_masked(int t) const { return states[static_cast<std::size_t>(t)].masked(); }
};

/// round(p * T) with halves rounded away from zero.
int mask_target(double budget, int frames);

/// Number of list-A starts among the first `starts` starts: round(rho * starts).
int speech_quota(double rho, int starts);

MaskSequence gen_random_mask(int frames, const MaskPolicyConfig &cfg);
MaskSequence gen_speech_level_mask(int frames, const SpeechLists &lists, const MaskPolicyConfig &cfg);
MaskSequence gen_phoneme_level_mask(const PhonemeAlignment &a, const MaskPolicyConfig &cfg);
MaskSequence gen_combined_mask(const PhonemeAlignment &a, const SpeechLists &lists, const MaskPolicyConfig &cfg);

/// Dispatches on cfg.policy. Inputs a policy does not need are ignored.
MaskSequence generate_mask(const PhonemeAlignment &a, const SpeechLists &lists, const MaskPolicyConfig &cfg);

struct MaskedFeatures {
    FeatureMatrix features;
    MaskSequence mask; // with the realized per-frame states
};

/// Realizes X (.) M. ZeroAll zeroes every masked frame; Stochastic801010
/// picks, per run, zero (80%), replace each frame by a random unmasked frame
/// (10%) or keep (10%).
MaskedFeatures apply_mask(const FeatureMatrix &x, const MaskSequence &m, const MaskPolicyConfig &cfg);

/// `origin<TAB>start<TAB>end` per run; phoneme runs are written as
/// `phoneme:<label>`.
void write_mask_runs(const MaskSequence &m, const std::filesystem::path &path);
MaskSequence read_mask_runs(const std::filesystem::path &path, int frames);

/// One line per frame: U, Z, R:<src> or K.
void write_mask_states(const MaskSequence &m, const std::filesystem::path &path);

} // namespace masklab
