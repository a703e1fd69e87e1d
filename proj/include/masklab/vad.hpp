#pragma once

#include <filesystem>
#include <vector>

#include "masklab/features.hpp"

namespace masklab {

struct VadConfig {
    double theta = -45.0; // dBFS
    int hangover = 5;
    int min_speech_run = 3;

    void validate() const;
};

struct VadLabels {
    std::vector<bool> labels; // true = speech

    int frames() const { return static_cast<int>(labels.size()); }
};

/// Speech frames (list A) and non-speech frames (list B), both ascending.
struct SpeechLists {
    std::vector<int> speech;
    std::vector<int> nonspeech;

    int frames() const { return static_cast<int>(speech.size() + nonspeech.size()); }
};

/// RMS energy of every analysis frame in dBFS. Silent frames give -inf.
std::vector<double> frame_energy_db(const Waveform &w, const FeatureConfig &feat_cfg);

/// Thresholded decision before any smoothing.
VadLabels vad_raw(const Waveform &w, const FeatureConfig &feat_cfg, double theta);

/// Dilates speech runs by `hangover` frames on each side, then drops runs
/// shorter than `min_speech_run`.
VadLabels vad_postprocess(const VadLabels &raw, const VadConfig &cfg);

VadLabels vad_labels(const Waveform &w, const FeatureConfig &feat_cfg, const VadConfig &vad_cfg);

SpeechLists speech_lists(const VadLabels &v);

/// Fraction of frames on which two label sequences agree.
double frame_accuracy(const VadLabels &a, const VadLabels &b);

/// One "0"/"1" line per frame.
void write_vad_labels(const VadLabels &v, const std::filesystem::path &path);
VadLabels read_vad_labels(const std::filesystem::path &path);

} // namespace masklab
