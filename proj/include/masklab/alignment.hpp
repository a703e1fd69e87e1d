#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace masklab {

struct PhonemeSpan {
    std::string label;
    int begin = 0; // inclusive
    int end = 0;   // inclusive
    bool is_silence = false;

    int length() const { return end - begin + 1; }
    bool contains(int t) const { return begin <= t && t <= end; }
};

struct AlignmentOptions {
    std::set<std::string> silence_labels{"sil", "sp", ""};

    bool is_silence(const std::string &label) const { return silence_labels.count(label) > 0; }
};

/// Frame-level phoneme segmentation of one utterance. Spans are contiguous
/// and cover frames 0..T-1 exactly once.
struct PhonemeAlignment {
    std::string utt_id;
    std::vector<PhonemeSpan> spans;
    int frames = 0;
};

/// Checks ordering, contiguity and coverage. Throws GapOrOverlap or
/// LengthMismatch.
void validate_alignment(const PhonemeAlignment &a);

/// TSV `label<TAB>begin<TAB>end`; lines starting with '#' are ignored.
PhonemeAlignment parse_alignment(const std::filesystem::path &path, int frames,
                                 const AlignmentOptions &opts = {});
PhonemeAlignment parse_alignment_text(const std::string &text, int frames,
                                      const AlignmentOptions &opts = {});

void write_alignment(const PhonemeAlignment &a, const std::filesystem::path &path);

const PhonemeSpan &phoneme_at(const PhonemeAlignment &a, int t);

/// Index into a.spans of the span containing frame t.
std::size_t span_index_at(const PhonemeAlignment &a, int t);

} // namespace masklab
