#pragma once

#include <filesystem>
#include <vector>

namespace masklab {

/// Mono PCM signal with amplitudes in [-1, 1].
struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;

    std::size_t size() const { return samples.size(); }
    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

    /// Throws InvalidSpec if a sample is non-finite or out of range.
    void validate() const;
};

/// 16-bit PCM mono RIFF/WAVE only. Samples are scaled by 1/32768.
Waveform read_wav(const std::filesystem::path &path);

/// Writes 16-bit PCM mono. Amplitudes are rounded to the nearest code and
/// clamped to [-32768, 32767].
void write_wav(const Waveform &w, const std::filesystem::path &path);

/// Rounds every sample to the 16-bit grid used by write_wav, so that a
/// quantized waveform survives a write/read cycle unchanged.
void quantize_pcm16(Waveform &w);

} // namespace masklab
