#include <doctest.h>

#include "helpers.hpp"
#include "masklab/alignment.hpp"
#include "masklab/synth.hpp"

using namespace masklab;

namespace {

const char *kPes = "p\t0\t9\ne\t10\t19\nsil\t20\t24\n";

} // namespace

TEST_CASE("three-span file parses with a trailing silence") {
    const PhonemeAlignment a = parse_alignment_text(kPes, 25);
    REQUIRE(a.spans.size() == 3);
    CHECK(a.spans[0].label == "p");
    CHECK(a.spans[1].begin == 10);
    CHECK(a.spans[1].end == 19);
    CHECK_FALSE(a.spans[0].is_silence);
    CHECK(a.spans[2].is_silence);
    CHECK(a.frames == 25);
}

TEST_CASE("coverage and contiguity errors") {
    CHECK(testutil::error_kind([] { parse_alignment_text(kPes, 30); }) == ErrorKind::LengthMismatch);
    CHECK(testutil::error_kind([] { parse_alignment_text("a\t0\t5\nb\t5\t9\n", 10); }) == ErrorKind::GapOrOverlap);
    CHECK(testutil::error_kind([] { parse_alignment_text("a\t0\t4\nb\t6\t9\n", 10); }) == ErrorKind::GapOrOverlap);
    CHECK(testutil::error_kind([] { parse_alignment_text("a\t1\t9\n", 10); }) == ErrorKind::GapOrOverlap);
    CHECK(testutil::error_kind([] { parse_alignment_text("a\t5\t2\n", 10); }) == ErrorKind::MalformedAlignment);
    CHECK(testutil::error_kind([] { parse_alignment_text("a\tx\t9\n", 10); }) == ErrorKind::MalformedAlignment);
    CHECK(testutil::error_kind([] { parse_alignment_text("a 0 9\n", 10); }) == ErrorKind::MalformedAlignment);
    CHECK(testutil::error_kind([] { parse_alignment_text("# only a comment\n", 10); }) ==
          ErrorKind::MalformedAlignment);
}

TEST_CASE("comments are skipped and custom silence labels honored") {
    const char *text = "# header\nSIL\t0\t3\n# mid\naa\t4\t7\n";
    CHECK_FALSE(parse_alignment_text(text, 8).spans[0].is_silence);
    AlignmentOptions opts;
    opts.silence_labels = {"SIL"};
    const auto a = parse_alignment_text(text, 8, opts);
    REQUIRE(a.spans.size() == 2);
    CHECK(a.spans[0].is_silence);
}

TEST_CASE("phoneme lookup") {
    const PhonemeAlignment a = parse_alignment_text(kPes, 25);
    CHECK(phoneme_at(a, 10).label == "e");
    CHECK(phoneme_at(a, 10).begin == 10);
    CHECK(phoneme_at(a, 10).end == 19);
    CHECK(phoneme_at(a, 0).label == "p");
    CHECK(phoneme_at(a, 24).label == "sil");
    CHECK(testutil::error_kind([&] { phoneme_at(a, 25); }) == ErrorKind::OutOfRange);
    CHECK(testutil::error_kind([&] { phoneme_at(a, -1); }) == ErrorKind::OutOfRange);
}

TEST_CASE("lookup agrees with containment on synthetic alignments") {
    SynthCorpusSpec spec;
    spec.num_utterances = 100;
    spec.seed = 4;
    for (const auto &u : synth_corpus(spec)) {
        const auto &a = u.alignment;
        for (int t = 0; t < a.frames; ++t) {
            const PhonemeSpan &s = phoneme_at(a, t);
            REQUIRE(s.begin <= t);
            REQUIRE(t <= s.end);
            REQUIRE(&a.spans[span_index_at(a, t)] == &s);
        }
    }
}

TEST_CASE("file round trip") {
    const auto dir = testutil::scratch("alignment_io");
    const PhonemeAlignment a = parse_alignment_text(kPes, 25);
    write_alignment(a, dir / "u1.align.tsv");
    const PhonemeAlignment b = parse_alignment(dir / "u1.align.tsv", 25);
    CHECK(b.utt_id == "u1");
    REQUIRE(b.spans.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(b.spans[i].label == a.spans[i].label);
        CHECK(b.spans[i].begin == a.spans[i].begin);
        CHECK(b.spans[i].end == a.spans[i].end);
    }
    CHECK(testutil::error_kind([&] { parse_alignment(dir / "missing.tsv", 25); }) == ErrorKind::IoError);
}
