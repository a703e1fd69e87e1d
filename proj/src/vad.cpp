#include "masklab/vad.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "masklab/error.hpp"

namespace masklab {

void VadConfig::validate() const {
    if (hangover < 0) {
        throw Error(ErrorKind::InvalidConfig, "hangover must be >= 0");
    }
    if (min_speech_run < 1) {
        throw Error(ErrorKind::InvalidConfig, "min_speech_run must be >= 1");
    }
}

std::vector<double> frame_energy_db(const Waveform &w, const FeatureConfig &feat_cfg) {
    const int frames = frame_count(w.samples.size(), feat_cfg);
    if (frames < 1) {
        throw Error(ErrorKind::TooShort, "waveform shorter than one frame");
    }
    std::vector<double> energy(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        const std::size_t offset = static_cast<std::size_t>(t) * static_cast<std::size_t>(feat_cfg.hop);
        double sum = 0.0;
        for (int i = 0; i < feat_cfg.frame_length; ++i) {
            const double s = w.samples[offset + static_cast<std::size_t>(i)];
            sum += s * s;
        }
        const double mean_square = sum / feat_cfg.frame_length;
        energy[static_cast<std::size_t>(t)] =
            mean_square > 0.0 ? 10.0 * std::log10(mean_square) : -std::numeric_limits<double>::infinity();
    }
    return energy;
}

VadLabels vad_raw(const Waveform &w, const FeatureConfig &feat_cfg, double theta) {
    const auto energy = frame_energy_db(w, feat_cfg);
    VadLabels v;
    v.labels.reserve(energy.size());
    for (double e : energy) {
        v.labels.push_back(e > theta);
    }
    return v;
}

VadLabels vad_postprocess(const VadLabels &raw, const VadConfig &cfg) {
    cfg.validate();
    const int n = raw.frames();
    VadLabels dilated;
    dilated.labels.assign(raw.labels.size(), false);
    for (int t = 0; t < n; ++t) {
        if (!raw.labels[static_cast<std::size_t>(t)]) {
            continue;
        }
        const int lo = std::max(0, t - cfg.hangover);
        const int hi = std::min(n - 1, t + cfg.hangover);
        for (int u = lo; u <= hi; ++u) {
            dilated.labels[static_cast<std::size_t>(u)] = true;
        }
    }
    int t = 0;
    while (t < n) {
        if (!dilated.labels[static_cast<std::size_t>(t)]) {
            ++t;
            continue;
        }
        int end = t;
        while (end + 1 < n && dilated.labels[static_cast<std::size_t>(end + 1)]) {
            ++end;
        }
        if (end - t + 1 < cfg.min_speech_run) {
            for (int u = t; u <= end; ++u) {
                dilated.labels[static_cast<std::size_t>(u)] = false;
            }
        }
        t = end + 1;
    }
    return dilated;
}

VadLabels vad_labels(const Waveform &w, const FeatureConfig &feat_cfg, const VadConfig &vad_cfg) {
    vad_cfg.validate();
    return vad_postprocess(vad_raw(w, feat_cfg, vad_cfg.theta), vad_cfg);
}

SpeechLists speech_lists(const VadLabels &v) {
    SpeechLists lists;
    for (int t = 0; t < v.frames(); ++t) {
        (v.labels[static_cast<std::size_t>(t)] ? lists.speech : lists.nonspeech).push_back(t);
    }
    return lists;
}

double frame_accuracy(const VadLabels &a, const VadLabels &b) {
    if (a.frames() != b.frames()) {
        throw Error(ErrorKind::LengthMismatch, "label sequences differ in length");
    }
    if (a.frames() == 0) {
        return 1.0;
    }
    int agree = 0;
    for (int t = 0; t < a.frames(); ++t) {
        agree += a.labels[static_cast<std::size_t>(t)] == b.labels[static_cast<std::size_t>(t)];
    }
    return static_cast<double>(agree) / a.frames();
}

void write_vad_labels(const VadLabels &v, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    for (bool b : v.labels) {
        out << (b ? '1' : '0') << '\n';
    }
}

VadLabels read_vad_labels(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    VadLabels v;
    std::string line;
    while (std::getline(in, line)) {
        if (line == "0" || line == "1") {
            v.labels.push_back(line == "1");
        } else if (!line.empty()) {
            throw Error(ErrorKind::IoError, "bad VAD label line '" + line + "' in " + path.string());
        }
    }
    return v;
}

} // namespace masklab
