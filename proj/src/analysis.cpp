#include "masklab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "masklab/error.hpp"

namespace masklab {

MaskStats mask_stats(const MaskSequence &m, const SpeechLists &lists, const PhonemeAlignment *alignment) {
    if (lists.frames() != m.frames || (alignment && alignment->frames != m.frames)) {
        throw Error(ErrorKind::InconsistentInputs, "mask, lists and alignment disagree on frame count");
    }
    MaskStats s;
    s.run_count = static_cast<int>(m.runs.size());
    const int masked = m.masked_count();
    s.masked_fraction = m.frames > 0 ? static_cast<double>(masked) / m.frames : 0.0;
    int speech_masked = 0;
    for (int t : lists.speech) {
        speech_masked += m.is_masked(t);
    }
    s.speech_masked_fraction = masked > 0 ? static_cast<double>(speech_masked) / masked : 0.0;
    for (const auto &r : m.runs) {
        ++s.run_length_histogram[r.length()];
    }
    if (alignment) {
        int phoneme_runs = 0;
        int exact = 0;
        for (const auto &r : m.runs) {
            if (r.origin != SpanOrigin::PhonemeSpan) {
                continue;
            }
            ++phoneme_runs;
            const auto &span = phoneme_at(*alignment, r.start);
            exact += span.begin == r.start && span.end == r.end;
        }
        if (phoneme_runs > 0) {
            s.whole_phoneme_rate = static_cast<double>(exact) / phoneme_runs;
        }
    }
    return s;
}

std::string format_mask_stats(const MaskStats &s) {
    std::ostringstream out;
    out.precision(9);
    out << "masked_fraction=" << s.masked_fraction << '\n'
        << "speech_masked_fraction=" << s.speech_masked_fraction << '\n'
        << "run_count=" << s.run_count << '\n';
    if (s.whole_phoneme_rate) {
        out << "whole_phoneme_rate=" << *s.whole_phoneme_rate << '\n';
    }
    out << "run_length_histogram=";
    bool first = true;
    for (const auto &[len, count] : s.run_length_histogram) {
        out << (first ? "" : ",") << len << ':' << count;
        first = false;
    }
    out << '\n';
    return out.str();
}

double sharpness(const FeatureMatrix &x, const MaskSequence &m) {
    if (x.frames() != m.frames) {
        throw Error(ErrorKind::ShapeMismatch, "mask length differs from feature length");
    }
    double sum = 0.0;
    long count = 0;
    for (const auto &r : m.runs) {
        for (int t = r.start + 1; t < r.end; ++t) {
            sum += (x.values.row(t + 1) - 2.0 * x.values.row(t) + x.values.row(t - 1)).cwiseAbs().sum();
            count += x.dims();
        }
    }
    if (count == 0) {
        throw Error(ErrorKind::NoInteriorFrames, "no run spans three or more frames");
    }
    return sum / static_cast<double>(count);
}

FeatureMatrix moving_average3(const FeatureMatrix &x) {
    FeatureMatrix out = x;
    const int n = x.frames();
    for (int t = 0; t < n; ++t) {
        const int lo = std::max(0, t - 1);
        const int hi = std::min(n - 1, t + 1);
        out.values.row(t) = x.values.middleRows(lo, hi - lo + 1).colwise().mean();
    }
    return out;
}

std::string spectrogram_pgm(const FeatureMatrix &x, const MaskSequence *m) {
    if (m && m->frames != x.frames()) {
        throw Error(ErrorKind::ShapeMismatch, "mask length differs from feature length");
    }
    const int width = x.frames();
    const int bins = x.dims();
    const double lo = x.values.size() ? x.values.minCoeff() : 0.0;
    const double hi = x.values.size() ? x.values.maxCoeff() : 0.0;

    std::string img = "P5\n" + std::to_string(width) + " " + std::to_string(bins + 1) + "\n255\n";
    for (int t = 0; t < width; ++t) {
        img.push_back(static_cast<char>(m && m->is_masked(t) ? 255 : 0));
    }
    for (int f = bins - 1; f >= 0; --f) {
        for (int t = 0; t < width; ++t) {
            int v = 128;
            if (hi > lo) {
                v = static_cast<int>(std::lround(255.0 * (x.values(t, f) - lo) / (hi - lo)));
            }
            img.push_back(static_cast<char>(static_cast<unsigned char>(v)));
        }
    }
    return img;
}

void dump_spectrogram(const FeatureMatrix &x, const MaskSequence *m, const std::filesystem::path &base) {
    const auto pgm_path = std::filesystem::path(base.string() + ".pgm");
    const auto csv_path = std::filesystem::path(base.string() + ".csv");
    std::ofstream pgm(pgm_path, std::ios::binary | std::ios::trunc);
    if (!pgm) {
        throw Error(ErrorKind::IoError, "cannot write " + pgm_path.string());
    }
    const std::string img = spectrogram_pgm(x, m);
    pgm.write(img.data(), static_cast<std::streamsize>(img.size()));

    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) {
        throw Error(ErrorKind::IoError, "cannot write " + csv_path.string());
    }
    char buf[32];
    for (int t = 0; t < x.frames(); ++t) {
        for (int f = 0; f < x.dims(); ++f) {
            std::snprintf(buf, sizeof(buf), "%.9g", x.values(t, f));
            csv << (f ? "," : "") << buf;
        }
        csv << '\n';
    }
    if (!pgm || !csv) {
        throw Error(ErrorKind::IoError, "write failed for " + base.string());
    }
}

FeatureMatrix read_matrix_csv(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<double> row;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) {
            row.push_back(std::stod(cell));
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw Error(ErrorKind::IoError, "ragged CSV in " + path.string());
        }
        rows.push_back(std::move(row));
    }
    FeatureMatrix x;
    x.values.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            x.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return x;
}

} // namespace masklab
