#include <doctest.h>

#include <map>

#include "helpers.hpp"
#include "mask_audit.hpp"
#include "masklab/masking.hpp"
#include "masklab/random.hpp"
#include "masklab/synth.hpp"

using namespace masklab;

namespace {

SpeechLists lists_from(const PhonemeAlignment &a) {
    VadLabels v;
    v.labels.assign(static_cast<std::size_t>(a.frames), false);
    for (const auto &s : a.spans) {
        for (int t = s.begin; t <= s.end; ++t) {
            v.labels[static_cast<std::size_t>(t)] = !s.is_silence;
        }
    }
    return speech_lists(v);
}

// First half speech, second half silence.
SpeechLists half_lists(int frames) {
    VadLabels v;
    for (int t = 0; t < frames; ++t) {
        v.labels.push_back(t < frames / 2);
    }
    return speech_lists(v);
}

FeatureMatrix ramp(int frames, int dims) {
    FeatureMatrix x;
    x.values.resize(frames, dims);
    for (int t = 0; t < frames; ++t) {
        for (int d = 0; d < dims; ++d) {
            x.values(t, d) = 1.0 + t + 0.001 * d;
        }
    }
    return x;
}

MaskSequence runs_mask(int frames, std::vector<std::pair<int, int>> runs) {
    MaskSequence m;
    m.frames = frames;
    m.states.resize(static_cast<std::size_t>(frames));
    for (auto [s, e] : runs) {
        m.runs.push_back({s, e, SpanOrigin::RandomSpan, {}});
        for (int t = s; t <= e; ++t) {
            m.states[static_cast<std::size_t>(t)].kind = FrameState::Kind::MaskedZero;
        }
    }
    return m;
}

const char *kSpe = "sil\t0\t4\np\t5\t12\ne\t13\t25\nsil\t26\t30\n";

} // namespace

TEST_CASE("random mask on 100 frames stays within the budget bounds") {
    MaskPolicyConfig cfg;
    int lo = 1000, hi = 0;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        cfg.seed = seed;
        const MaskSequence m = gen_random_mask(100, cfg);
        lo = std::min(lo, m.masked_count());
        hi = std::max(hi, m.masked_count());
        for (const auto &d : m.draws) {
            REQUIRE(d.start == d.anchor);
            REQUIRE(d.end == std::min(d.start + 6, 99));
        }
    }
    CHECK(mask_target(0.15, 100) == 15);
    CHECK(lo >= 15);
    CHECK(hi <= 21);
    CHECK(hi > 15);
}

TEST_CASE("vanishing budget masks nothing") {
    MaskPolicyConfig cfg;
    cfg.budget = 0.0;
    const MaskSequence m = gen_random_mask(100, cfg);
    CHECK(m.masked_count() == 0);
    CHECK(m.runs.empty());
    cfg.budget = 0.004;
    CHECK(gen_random_mask(100, cfg).runs.empty());
}

TEST_CASE("speech-level quota") {
    MaskPolicyConfig cfg;
    cfg.rho = 1.0;
    const SpeechLists lists = half_lists(200);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        cfg.seed = seed;
        const MaskSequence m = gen_speech_level_mask(200, lists, cfg);
        for (const auto &r : m.runs) {
            CHECK(r.origin == SpanOrigin::SpeechSpan);
        }
    }

    cfg.rho = 0.9;
    const SpeechLists big = half_lists(1000);
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        cfg.seed = seed;
        const MaskSequence m = gen_speech_level_mask(1000, big, cfg);
        const int K = static_cast<int>(m.draws.size());
        int from_a = 0;
        for (const auto &d : m.draws) {
            from_a += d.origin == SpanOrigin::SpeechSpan;
            REQUIRE(audit::in_sorted(d.origin == SpanOrigin::SpeechSpan ? big.speech : big.nonspeech, d.start));
        }
        REQUIRE(m.warnings.empty());
        CHECK(from_a == audit::round_half_away(0.9 * K));
        CHECK(m.speech_starts == from_a);
        CHECK(m.silence_starts == K - from_a);
    }
}

TEST_CASE("quota holds after every prefix of starts") {
    for (double rho : {0.0, 0.3, 0.5, 0.85, 0.9, 1.0}) {
        int prev = 0;
        for (int n = 1; n <= 300; ++n) {
            const int q = speech_quota(rho, n);
            CHECK(q == audit::round_half_away(rho * n));
            CHECK((q == prev || q == prev + 1));
            prev = q;
        }
    }
}

TEST_CASE("exhausted list falls back with a warning") {
    MaskPolicyConfig cfg;
    cfg.rho = 1.0;
    cfg.budget = 1.0;
    VadLabels v;
    v.labels = {false, false, true, false, false, false, false, false, false, false};
    const MaskSequence m = gen_speech_level_mask(10, speech_lists(v), cfg);
    CHECK(m.masked_count() == 10);
    CHECK_FALSE(m.warnings.empty());
}

TEST_CASE("phoneme-level masks whole spans only") {
    const PhonemeAlignment a = parse_alignment_text(kSpe, 31);
    MaskPolicyConfig cfg;
    cfg.policy = MaskPolicy::PhonemeLevel;
    cfg.budget = 1.0;
    const MaskSequence m = gen_phoneme_level_mask(a, cfg);
    for (int t = 0; t < 31; ++t) {
        CHECK(m.is_masked(t) == (t >= 5 && t <= 25));
    }
    for (const auto &r : m.runs) {
        CHECK(audit::equals_some_span(a, r.start, r.end));
        CHECK(r.origin == SpanOrigin::PhonemeSpan);
    }

    const PhonemeAlignment silent = parse_alignment_text("sil\t0\t9\nsp\t10\t19\n", 20);
    CHECK(testutil::error_kind([&] { gen_phoneme_level_mask(silent, cfg); }) == ErrorKind::NoEligiblePhonemes);
    cfg.include_silence_phones = true;
    CHECK(gen_phoneme_level_mask(silent, cfg).masked_count() == 20);
}

TEST_CASE("combined policy at the quota extremes") {
    SynthCorpusSpec spec;
    spec.num_utterances = 20;
    spec.seed = 9;
    MaskPolicyConfig cfg;
    cfg.policy = MaskPolicy::Combined;
    for (const auto &u : synth_corpus(spec)) {
        const SpeechLists lists = lists_from(u.alignment);
        cfg.rho = 1.0;
        for (const auto &r : gen_combined_mask(u.alignment, lists, cfg).runs) {
            CHECK(r.origin == SpanOrigin::PhonemeSpan);
            CHECK(audit::equals_some_span(u.alignment, r.start, r.end));
        }
        cfg.rho = 0.0;
        const MaskSequence m = gen_combined_mask(u.alignment, lists, cfg);
        for (const auto &d : m.draws) {
            if (d.origin == SpanOrigin::SilenceSpan) {
                CHECK(d.end - d.start + 1 <= cfg.span);
                CHECK(audit::in_sorted(lists.nonspeech, d.start));
            }
        }
        if (m.warnings.empty()) {
            CHECK(m.speech_starts == 0);
        } else {
            // speech starts only once every non-speech frame has been used
            for (int t : lists.nonspeech) {
                CHECK(m.is_masked(t));
            }
        }
    }
}

TEST_CASE("combined masks over 200 synthetic utterances pass the audit") {
    SynthCorpusSpec spec;
    spec.num_utterances = 200;
    spec.seed = 21;
    MaskPolicyConfig cfg;
    cfg.policy = MaskPolicy::Combined;
    int merged_runs = 0, runs = 0;
    for (const auto &u : synth_corpus(spec)) {
        const SpeechLists lists = lists_from(u.alignment);
        cfg.seed = derive_seed(3, u.utt_id);
        const MaskSequence m = gen_combined_mask(u.alignment, lists, cfg);
        const auto bad = audit::check(m, cfg, lists, u.alignment);
        CHECK_MESSAGE(bad.empty(), u.utt_id << ": " << (bad.empty() ? "" : bad.front()));
        for (const auto &r : m.runs) {
            ++runs;
            const bool phone = audit::equals_some_span(u.alignment, r.start, r.end);
            const bool short_silence = r.length() <= cfg.span && audit::in_sorted(lists.nonspeech, r.start);
            merged_runs += !(phone || short_silence);
        }
    }
    // Merged runs only arise where a silence span overlaps a phoneme.
    MESSAGE("runs: " << runs << ", merged: " << merged_runs);
    CHECK(merged_runs < runs / 10);
}

TEST_CASE("identical inputs and seed give identical masks") {
    SynthCorpusSpec spec;
    spec.num_utterances = 5;
    for (const auto &u : synth_corpus(spec)) {
        const SpeechLists lists = lists_from(u.alignment);
        for (auto policy : {MaskPolicy::Random, MaskPolicy::SpeechLevel, MaskPolicy::PhonemeLevel,
                            MaskPolicy::Combined}) {
            MaskPolicyConfig cfg;
            cfg.policy = policy;
            cfg.seed = 77;
            const MaskSequence a = generate_mask(u.alignment, lists, cfg);
            const MaskSequence b = generate_mask(u.alignment, lists, cfg);
            REQUIRE(a.runs.size() == b.runs.size());
            for (std::size_t i = 0; i < a.runs.size(); ++i) {
                CHECK(a.runs[i].start == b.runs[i].start);
                CHECK(a.runs[i].end == b.runs[i].end);
                CHECK(a.runs[i].origin == b.runs[i].origin);
            }
        }
    }
}

TEST_CASE("input errors") {
    MaskPolicyConfig cfg;
    CHECK(testutil::error_kind([&] { gen_random_mask(0, cfg); }) == ErrorKind::NoFrames);
    CHECK(testutil::error_kind([&] { gen_speech_level_mask(0, SpeechLists{}, cfg); }) == ErrorKind::NoFrames);
    CHECK(testutil::error_kind([&] { gen_speech_level_mask(20, half_lists(10), cfg); }) ==
          ErrorKind::InconsistentInputs);
    const PhonemeAlignment a = parse_alignment_text(kSpe, 31);
    CHECK(testutil::error_kind([&] { gen_combined_mask(a, half_lists(30), cfg); }) == ErrorKind::InconsistentInputs);
    cfg.span = 0;
    CHECK(testutil::error_kind([&] { gen_random_mask(10, cfg); }) == ErrorKind::InvalidConfig);
    cfg = {};
    cfg.rho = 1.5;
    CHECK(testutil::error_kind([&] { gen_random_mask(10, cfg); }) == ErrorKind::InvalidConfig);
    CHECK(testutil::error_kind([] { parse_mask_policy("bogus"); }) == ErrorKind::InvalidConfig);
    CHECK(parse_mask_policy(to_string(MaskPolicy::Combined)) == MaskPolicy::Combined);
    CHECK(parse_mask_mode(to_string(MaskMode::Stochastic801010)) == MaskMode::Stochastic801010);
}

TEST_CASE("applying masks") {
    const FeatureMatrix x = ramp(10, 4);
    MaskPolicyConfig cfg;
    const MaskedFeatures same = apply_mask(x, runs_mask(10, {}), cfg);
    CHECK((same.features.values.array() == x.values.array()).all());

    const MaskedFeatures z = apply_mask(x, runs_mask(10, {{3, 5}}), cfg);
    for (int t = 0; t < 10; ++t) {
        if (t >= 3 && t <= 5) {
            CHECK(z.features.values.row(t).isZero(0.0));
        } else {
            CHECK((z.features.values.row(t).array() == x.values.row(t).array()).all());
        }
    }
    CHECK(testutil::error_kind([&] { apply_mask(x, runs_mask(11, {}), cfg); }) == ErrorKind::LengthMismatch);
}

TEST_CASE("stochastic application frequencies and untouched frames") {
    const FeatureMatrix x = ramp(400, 3);
    MaskPolicyConfig cfg;
    cfg.mode = MaskMode::Stochastic801010;
    std::map<FrameState::Kind, int> counts;
    int total = 0;
    for (std::uint64_t seed = 0; total < 10000; ++seed) {
        cfg.seed = seed;
        const MaskSequence m = gen_random_mask(400, cfg);
        const MaskedFeatures out = apply_mask(x, m, cfg);
        for (const auto &r : out.mask.runs) {
            const auto kind = out.mask.states[static_cast<std::size_t>(r.start)].kind;
            for (int t = r.start; t <= r.end; ++t) {
                const auto &s = out.mask.states[static_cast<std::size_t>(t)];
                REQUIRE(s.kind == kind);
                if (s.kind == FrameState::Kind::MaskedReplace) {
                    REQUIRE(s.source >= 0);
                    REQUIRE(!m.is_masked(s.source));
                    REQUIRE((out.features.values.row(t).array() == x.values.row(s.source).array()).all());
                } else if (s.kind == FrameState::Kind::MaskedKeep) {
                    REQUIRE((out.features.values.row(t).array() == x.values.row(t).array()).all());
                }
            }
            ++counts[kind];
            ++total;
        }
        for (int t = 0; t < 400; ++t) {
            if (!m.is_masked(t)) {
                REQUIRE((out.features.values.row(t).array() == x.values.row(t).array()).all());
            }
        }
    }
    CHECK(counts[FrameState::Kind::MaskedZero] / double(total) == doctest::Approx(0.8).epsilon(0.025));
    CHECK(std::abs(counts[FrameState::Kind::MaskedReplace] / double(total) - 0.1) <= 0.02);
    CHECK(std::abs(counts[FrameState::Kind::MaskedKeep] / double(total) - 0.1) <= 0.02);
}

TEST_CASE("mask run files round-trip") {
    const auto dir = testutil::scratch("mask_io");
    const PhonemeAlignment a = parse_alignment_text(kSpe, 31);
    MaskPolicyConfig cfg;
    cfg.policy = MaskPolicy::Combined;
    cfg.budget = 0.6;
    cfg.rho = 0.5;
    const MaskSequence m = generate_mask(a, lists_from(a), cfg);
    write_mask_runs(m, dir / "m.tsv");
    const MaskSequence r = read_mask_runs(dir / "m.tsv", 31);
    REQUIRE(r.runs.size() == m.runs.size());
    for (std::size_t i = 0; i < m.runs.size(); ++i) {
        CHECK(r.runs[i].start == m.runs[i].start);
        CHECK(r.runs[i].end == m.runs[i].end);
        CHECK(r.runs[i].origin == m.runs[i].origin);
        CHECK(r.runs[i].label == m.runs[i].label);
    }
    for (int t = 0; t < 31; ++t) {
        CHECK(r.is_masked(t) == m.is_masked(t));
    }
    write_mask_states(m, dir / "m.states");
    CHECK(std::filesystem::file_size(dir / "m.states") >= 31 * 2);
}
