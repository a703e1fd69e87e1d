#include "masklab/alignment.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "masklab/error.hpp"

namespace masklab {

namespace {

int parse_frame(const std::string &field, int line_no) {
    int value = 0;
    const auto *first = field.data();
    const auto *last = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || field.empty()) {
        throw Error(ErrorKind::MalformedAlignment,
                    "line " + std::to_string(line_no) + ": bad frame index '" + field + "'");
    }
    return value;
}

} // namespace

void validate_alignment(const PhonemeAlignment &a) {
    int expected = 0;
    for (const auto &s : a.spans) {
        if (s.begin > s.end) {
            throw Error(ErrorKind::MalformedAlignment, "span '" + s.label + "' has begin > end");
        }
        if (s.begin != expected) {
            throw Error(ErrorKind::GapOrOverlap, "span '" + s.label + "' begins at " + std::to_string(s.begin) +
                                                     ", expected " + std::to_string(expected));
        }
        expected = s.end + 1;
    }
    if (expected != a.frames) {
        throw Error(ErrorKind::LengthMismatch, "alignment covers " + std::to_string(expected) + " frames, expected " +
                                                   std::to_string(a.frames));
    }
}

PhonemeAlignment parse_alignment_text(const std::string &text, int frames, const AlignmentOptions &opts) {
    if (frames <= 0) {
        throw Error(ErrorKind::LengthMismatch, "frame count must be positive");
    }
    PhonemeAlignment a;
    a.frames = frames;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line.front() == '#') {
            continue;
        }
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const auto tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
            if (tab == std::string::npos) {
                break;
            }
            start = tab + 1;
        }
        if (fields.size() != 3) {
            throw Error(ErrorKind::MalformedAlignment,
                        "line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
        }
        PhonemeSpan span;
        span.label = fields[0];
        span.begin = parse_frame(fields[1], line_no);
        span.end = parse_frame(fields[2], line_no);
        if (span.begin < 0 || span.end < span.begin) {
            throw Error(ErrorKind::MalformedAlignment,
                        "line " + std::to_string(line_no) + ": require 0 <= begin <= end");
        }
        span.is_silence = opts.is_silence(span.label);
        a.spans.push_back(std::move(span));
    }
    if (a.spans.empty()) {
        throw Error(ErrorKind::MalformedAlignment, "no spans");
    }
    validate_alignment(a);
    return a;
}

PhonemeAlignment parse_alignment(const std::filesystem::path &path, int frames, const AlignmentOptions &opts) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    auto a = parse_alignment_text(text.str(), frames, opts);
    a.utt_id = path.filename().string();
    const auto dot = a.utt_id.find('.');
    if (dot != std::string::npos) {
        a.utt_id.resize(dot);
    }
    return a;
}

void write_alignment(const PhonemeAlignment &a, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    for (const auto &s : a.spans) {
        out << s.label << '\t' << s.begin << '\t' << s.end << '\n';
    }
}

std::size_t span_index_at(const PhonemeAlignment &a, int t) {
    if (t < 0 || t >= a.frames || a.spans.empty()) {
        throw Error(ErrorKind::OutOfRange, "frame " + std::to_string(t) + " outside 0.." + std::to_string(a.frames - 1));
    }
    const auto it = std::upper_bound(a.spans.begin(), a.spans.end(), t,
                                     [](int frame, const PhonemeSpan &s) { return frame < s.begin; });
    return static_cast<std::size_t>(std::distance(a.spans.begin(), it) - 1);
}

const PhonemeSpan &phoneme_at(const PhonemeAlignment &a, int t) { return a.spans[span_index_at(a, t)]; }

} // namespace masklab
