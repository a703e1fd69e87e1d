#include "masklab/features.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <fftw3.h>

#include "masklab/error.hpp"

namespace masklab {

namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

struct FftwPlanDeleter {
    void operator()(fftw_plan_s *p) const { fftw_destroy_plan(p); }
};

struct FftwBufferDeleter {
    void operator()(void *p) const { fftw_free(p); }
};

} // namespace

void FeatureConfig::validate(int sample_rate) const {
    if (!(0 < hop && hop <= frame_length && frame_length <= fft_size)) {
        throw Error(ErrorKind::InvalidConfig, "require 0 < hop <= frame_length <= fft_size");
    }
    if (!is_power_of_two(fft_size)) {
        throw Error(ErrorKind::InvalidConfig, "fft_size must be a power of two");
    }
    if (num_mel < 1) {
        throw Error(ErrorKind::InvalidConfig, "num_mel must be >= 1");
    }
    const double high = resolved_mel_high(sample_rate);
    if (!(mel_low >= 0.0 && mel_low < high && high <= sample_rate / 2.0)) {
        throw Error(ErrorKind::InvalidConfig, "require 0 <= mel_low < mel_high <= sample_rate/2");
    }
    if (!(log_floor > 0.0)) {
        throw Error(ErrorKind::InvalidConfig, "log_floor must be positive");
    }
}

int frame_count(std::size_t num_samples, const FeatureConfig &cfg) {
    if (num_samples < static_cast<std::size_t>(cfg.frame_length)) {
        return 0;
    }
    return 1 + static_cast<int>((num_samples - static_cast<std::size_t>(cfg.frame_length)) /
                                static_cast<std::size_t>(cfg.hop));
}

std::size_t samples_for_frames(int frames, const FeatureConfig &cfg) {
    return static_cast<std::size_t>(cfg.frame_length) +
           static_cast<std::size_t>(frames - 1) * static_cast<std::size_t>(cfg.hop);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(const FeatureConfig &cfg, int sample_rate) {
    const double lo = hz_to_mel(cfg.mel_low);
    const double hi = hz_to_mel(cfg.resolved_mel_high(sample_rate));
    const double step = (hi - lo) / (cfg.num_mel + 1);
    std::vector<double> centers(static_cast<std::size_t>(cfg.num_mel));
    for (int m = 0; m < cfg.num_mel; ++m) {
        centers[static_cast<std::size_t>(m)] = mel_to_hz(lo + (m + 1) * step);
    }
    return centers;
}

Eigen::MatrixXd mel_filterbank(const FeatureConfig &cfg, int sample_rate) {
    const int bins = cfg.fft_size / 2 + 1;
    const double lo = hz_to_mel(cfg.mel_low);
    const double hi = hz_to_mel(cfg.resolved_mel_high(sample_rate));
    const double step = (hi - lo) / (cfg.num_mel + 1);

    Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(cfg.num_mel, bins);
    for (int m = 0; m < cfg.num_mel; ++m) {
        const double left = lo + m * step;
        const double center = left + step;
        const double right = center + step;
        for (int k = 0; k < bins; ++k) {
            const double mel = hz_to_mel(static_cast<double>(k) * sample_rate / cfg.fft_size);
            if (mel <= left || mel >= right) {
                continue;
            }
            weights(m, k) = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
        }
    }
    return weights;
}

FeatureMatrix fbank(const Waveform &w, const FeatureConfig &cfg) {
    cfg.validate(w.sample_rate);
    const int frames = frame_count(w.samples.size(), cfg);
    if (frames < 1) {
        throw Error(ErrorKind::TooShort, "waveform shorter than one frame");
    }

    const int n = cfg.fft_size;
    const int bins = n / 2 + 1;
    std::unique_ptr<double, FftwBufferDeleter> in(fftw_alloc_real(static_cast<std::size_t>(n)));
    std::unique_ptr<fftw_complex, FftwBufferDeleter> out(fftw_alloc_complex(static_cast<std::size_t>(bins)));
    std::unique_ptr<fftw_plan_s, FftwPlanDeleter> plan(
        fftw_plan_dft_r2c_1d(n, in.get(), out.get(), FFTW_ESTIMATE));

    std::vector<double> window(static_cast<std::size_t>(cfg.frame_length));
    for (int i = 0; i < cfg.frame_length; ++i) {
        window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (cfg.frame_length - 1));
    }
    const Eigen::MatrixXd filters = mel_filterbank(cfg, w.sample_rate);

    FeatureMatrix x;
    x.frame_rate = static_cast<double>(w.sample_rate) / cfg.hop;
    x.values.resize(frames, cfg.num_mel);
    Eigen::VectorXd power(bins);

    for (int t = 0; t < frames; ++t) {
        const std::size_t offset = static_cast<std::size_t>(t) * static_cast<std::size_t>(cfg.hop);
        double *buf = in.get();
        for (int i = 0; i < n; ++i) {
            buf[i] = i < cfg.frame_length
                         ? window[static_cast<std::size_t>(i)] * w.samples[offset + static_cast<std::size_t>(i)]
                         : 0.0;
        }
        fftw_execute(plan.get());
        for (int k = 0; k < bins; ++k) {
            power(k) = out.get()[k][0] * out.get()[k][0] + out.get()[k][1] * out.get()[k][1];
        }
        const Eigen::VectorXd energy = filters * power;
        for (int m = 0; m < cfg.num_mel; ++m) {
            const double v = std::log(std::max(energy(m), cfg.log_floor));
            x.values(t, m) = static_cast<double>(static_cast<float>(v));
        }
    }
    if (cfg.normalize) {
        normalize_mean_variance(x);
    }
    return x;
}

void normalize_mean_variance(FeatureMatrix &x) {
    for (int f = 0; f < x.dims(); ++f) {
        auto col = x.values.col(f);
        const double mean = col.mean();
        const double var = (col.array() - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + 1e-8);
        for (int t = 0; t < x.frames(); ++t) {
            col(t) = static_cast<double>(static_cast<float>((col(t) - mean) * inv));
        }
    }
}

void write_features(const FeatureMatrix &x, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    std::ostringstream header;
    header.precision(17);
    header << x.frames() << ' ' << x.dims() << ' ' << x.frame_rate << '\n';
    out << header.str();
    std::string blob;
    blob.reserve(static_cast<std::size_t>(x.frames()) * static_cast<std::size_t>(x.dims()) * 4);
    for (int t = 0; t < x.frames(); ++t) {
        for (int f = 0; f < x.dims(); ++f) {
            const float v = static_cast<float>(x.values(t, f));
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            for (int b = 0; b < 4; ++b) {
                blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
            }
        }
    }
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) {
        throw Error(ErrorKind::IoError, "write failed for " + path.string());
    }
}

FeatureMatrix read_features(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    long frames = 0, dims = 0;
    double rate = 0.0;
    if (!(hs >> frames >> dims >> rate) || frames < 0 || dims < 1) {
        throw Error(ErrorKind::IoError, "bad feature header in " + path.string());
    }
    const std::size_t count = static_cast<std::size_t>(frames) * static_cast<std::size_t>(dims);
    std::string blob(count * 4, '\0');
    in.read(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (static_cast<std::size_t>(in.gcount()) != blob.size()) {
        throw Error(ErrorKind::IoError, "truncated feature data in " + path.string());
    }
    FeatureMatrix x;
    x.frame_rate = rate;
    x.values.resize(frames, dims);
    const auto *p = reinterpret_cast<const unsigned char *>(blob.data());
    for (long t = 0; t < frames; ++t) {
        for (long f = 0; f < dims; ++f) {
            const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                       (static_cast<std::uint32_t>(p[2]) << 16) |
                                       (static_cast<std::uint32_t>(p[3]) << 24);
            float v;
            std::memcpy(&v, &bits, 4);
            x.values(t, f) = v;
            p += 4;
        }
    }
    return x;
}

} // namespace masklab
