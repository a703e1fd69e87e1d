#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "masklab/audio_io.hpp"

namespace masklab {

struct FeatureConfig {
    int frame_length = 400; // 25 ms at 16 kHz
    int hop = 160;          // 10 ms
    int fft_size = 512;
    int num_mel = 80;
    double mel_low = 0.0;
    double mel_high = 0.0; // <= 0 means sample_rate / 2
    double log_floor = 1e-10;
    bool normalize = false; // per-utterance mean/variance normalization

    void validate(int sample_rate) const;
    double resolved_mel_high(int sample_rate) const {
        return mel_high > 0.0 ? mel_high : sample_rate / 2.0;
    }
};

/// T x F grid of log-mel energies, one row per frame.
struct FeatureMatrix {
    Eigen::MatrixXd values;
    double frame_rate = 100.0;

    int frames() const { return static_cast<int>(values.rows()); }
    int dims() const { return static_cast<int>(values.cols()); }
};

/// Number of frames produced for a signal of `num_samples` samples.
int frame_count(std::size_t num_samples, const FeatureConfig &cfg);

/// Samples needed to produce exactly `frames` frames.
std::size_t samples_for_frames(int frames, const FeatureConfig &cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Center frequencies (Hz) of the triangular filters.
std::vector<double> mel_center_frequencies(const FeatureConfig &cfg, int sample_rate);

/// num_mel x (fft_size/2 + 1) triangular filter weights.
Eigen::MatrixXd mel_filterbank(const FeatureConfig &cfg, int sample_rate);

/// Hann-windowed power spectrum -> mel filterbank -> natural log with floor.
/// Output values are rounded to float precision so feature dumps are lossless.
FeatureMatrix fbank(const Waveform &w, const FeatureConfig &cfg);

/// Per-utterance, per-dimension mean/variance normalization.
void normalize_mean_variance(FeatureMatrix &x);

/// Binary dump: text header "T F frame_rate\n" then row-major LE float32.
void write_features(const FeatureMatrix &x, const std::filesystem::path &path);
FeatureMatrix read_features(const std::filesystem::path &path);

} // namespace masklab
