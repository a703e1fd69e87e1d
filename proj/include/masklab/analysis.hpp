#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "masklab/alignment.hpp"
#include "masklab/features.hpp"
#include "masklab/masking.hpp"
#include "masklab/vad.hpp"

namespace masklab {

struct MaskStats {
    double masked_fraction = 0.0;
    double speech_masked_fraction = 0.0; // |masked & A| / |masked|
    std::map<int, int> run_length_histogram;
    std::optional<double> whole_phoneme_rate; // needs an alignment and >= 1 phoneme run
    int run_count = 0;
};

/// Recomputed from the raw mask every call.
MaskStats mask_stats(const MaskSequence &m, const SpeechLists &lists, const PhonemeAlignment *alignment = nullptr);

/// key=value report.
std::string format_mask_stats(const MaskStats &s);

/// Mean over masked interior frames t (t-1, t, t+1 in one run) and all bins
/// of |X[t+1] - 2 X[t] + X[t-1]|.
double sharpness(const FeatureMatrix &x, const MaskSequence &m);

/// Centered 3-frame moving average; edge frames average what exists.
FeatureMatrix moving_average3(const FeatureMatrix &x);

struct SharpnessReport {
    std::string policy;
    double reconstruction = 0.0;
    double ground_truth = 0.0;
};

/// Binary PGM (P5) of width T and height F + 1: row 0 marks masked frames
/// (255) against unmasked (0), rows below hold bins with the highest bin on
/// top, min-max scaled to 0..255 (constant input maps to 128).
std::string spectrogram_pgm(const FeatureMatrix &x, const MaskSequence *m);

/// Writes <base>.pgm and <base>.csv (T rows, F columns, %.9g).
void dump_spectrogram(const FeatureMatrix &x, const MaskSequence *m, const std::filesystem::path &base);

FeatureMatrix read_matrix_csv(const std::filesystem::path &path);

} // namespace masklab
