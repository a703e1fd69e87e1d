#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "masklab/alignment.hpp"
#include "masklab/audio_io.hpp"
#include "masklab/features.hpp"
#include "masklab/vad.hpp"

namespace masklab {

struct IntRange {
    int lo = 0;
    int hi = 0;

    bool valid() const { return lo >= 1 && lo <= hi; }
};

/// Parameters of the labeled synthetic corpus.
///
/// Each utterance is leading silence, then one or more speech segments
/// separated by silence gaps, then trailing silence. A segment is a run of
/// back-to-back phonemes. Phoneme class k is a harmonic stack shaped by two
/// class-specific formant peaks; speaker s sets the fundamental and a
/// spectral tilt.
struct SynthCorpusSpec {
    int num_utterances = 50;
    int num_phoneme_classes = 12;
    int num_speakers = 8;
    IntRange phoneme_duration{8, 25}; // frames
    IntRange silence_gap{5, 20};      // frames
    IntRange segments_per_utterance{1, 2};
    IntRange phonemes_per_segment{10, 16};
    int successors = 3; // allowed next classes per class; 0 means any other class
    double noise_level = 0.01;
    double speech_level = 0.5; // summed harmonic amplitude before per-phoneme gain
    std::uint64_t seed = 1;
    int sample_rate = 16000;
    int frame_length = 400;
    int hop = 160;

    void validate() const;
};

struct SynthUtterance {
    std::string utt_id;
    int speaker_id = 0;
    Waveform waveform;
    PhonemeAlignment alignment;
    VadLabels vad_truth;
};

/// Per-class list of allowed successor classes; empty when successors == 0.
std::vector<std::vector<int>> successor_table(const SynthCorpusSpec &spec);

std::string phoneme_label(int phoneme_class);

/// Deterministic in `spec` alone. Waveforms are already on the 16-bit grid.
std::vector<SynthUtterance> synth_corpus(const SynthCorpusSpec &spec);

/// Framing the corpus was generated for.
FeatureConfig corpus_feature_config(const SynthCorpusSpec &spec);

struct CorpusEntry {
    std::string utt_id;
    int speaker_id = 0;
    int frames = 0;
};

/// Writes <utt>.wav, <utt>.align.tsv, <utt>.vad.txt and corpus.manifest.tsv.
void write_corpus(const std::vector<SynthUtterance> &corpus, const std::filesystem::path &dir);

std::vector<CorpusEntry> read_manifest(const std::filesystem::path &dir);

constexpr const char *kManifestName = "corpus.manifest.tsv";

} // namespace masklab
