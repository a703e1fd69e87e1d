#include "masklab/masking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "masklab/error.hpp"
#include "masklab/random.hpp"

namespace masklab {

namespace {

// Draws without replacement from a fixed pool.
class Sampler {
public:
    Sampler(std::vector<int> pool) : pool_(std::move(pool)) {}

    bool empty() const { return pool_.empty(); }

    int draw(Rng &rng) {
        const std::size_t j = rng.index(pool_.size());
        std::swap(pool_[j], pool_.back());
        const int v = pool_.back();
        pool_.pop_back();
        return v;
    }

private:
    std::vector<int> pool_;
};

class MaskBuilder {
public:
    explicit MaskBuilder(int frames) : frames_(frames), covered_(static_cast<std::size_t>(frames), false) {}

    int masked() const { return masked_; }

    void add(DrawnSpan span) {
        for (int t = span.start; t <= span.end; ++t) {
            if (!covered_[static_cast<std::size_t>(t)]) {
                covered_[static_cast<std::size_t>(t)] = true;
                ++masked_;
            }
        }
        draws_.push_back(std::move(span));
    }

    MaskSequence finish() {
        MaskSequence m;
        m.frames = frames_;
        m.states.resize(static_cast<std::size_t>(frames_));
        for (int t = 0; t < frames_; ++t) {
            if (covered_[static_cast<std::size_t>(t)]) {
                m.states[static_cast<std::size_t>(t)].kind = FrameState::Kind::MaskedZero;
            }
        }

        std::vector<std::size_t> order(draws_.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return draws_[a].start != draws_[b].start ? draws_[a].start < draws_[b].start : a < b;
        });

        // Spans that share a frame merge; touching spans stay separate runs.
        std::size_t i = 0;
        while (i < order.size()) {
            int start = draws_[order[i]].start;
            int end = draws_[order[i]].end;
            std::size_t earliest = order[i];
            std::size_t j = i + 1;
            while (j < order.size() && draws_[order[j]].start <= end) {
                end = std::max(end, draws_[order[j]].end);
                earliest = std::min(earliest, order[j]);
                ++j;
            }
            m.runs.push_back({start, end, draws_[earliest].origin, draws_[earliest].label});
            i = j;
        }
        m.draws = std::move(draws_);
        return m;
    }

private:
    int frames_;
    std::vector<bool> covered_;
    int masked_ = 0;
    std::vector<DrawnSpan> draws_;
};

void check_frames(int frames) {
    if (frames < 1) {
        throw Error(ErrorKind::NoFrames, "utterance has no frames");
    }
}

void check_lists(int frames, const SpeechLists &lists) {
    if (lists.frames() != frames) {
        throw Error(ErrorKind::InconsistentInputs, "speech lists cover " + std::to_string(lists.frames()) +
                                                       " frames, expected " + std::to_string(frames));
    }
}

bool eligible(const PhonemeSpan &s, const MaskPolicyConfig &cfg) {
    return cfg.include_silence_phones || !s.is_silence;
}

void record_fallbacks(MaskSequence &m, int from_a, int from_b) {
    if (from_a > 0) {
        m.warnings.push_back("speech list exhausted: " + std::to_string(from_a) +
                             " start(s) drawn from the non-speech list instead");
    }
    if (from_b > 0) {
        m.warnings.push_back("non-speech list exhausted: " + std::to_string(from_b) +
                             " start(s) drawn from the speech list instead");
    }
}

} // namespace

std::string to_string(MaskPolicy p) {
    switch (p) {
    case MaskPolicy::Random: return "random";
    case MaskPolicy::SpeechLevel: return "speech";
    case MaskPolicy::PhonemeLevel: return "phoneme";
    case MaskPolicy::Combined: return "combined";
    }
    return "?";
}

MaskPolicy parse_mask_policy(const std::string &name) {
    if (name == "random") return MaskPolicy::Random;
    if (name == "speech" || name == "speech-level") return MaskPolicy::SpeechLevel;
    if (name == "phoneme" || name == "phoneme-level") return MaskPolicy::PhonemeLevel;
    if (name == "combined" || name == "speech-phoneme") return MaskPolicy::Combined;
    throw Error(ErrorKind::InvalidConfig, "unknown mask policy '" + name + "'");
}

std::string to_string(MaskMode m) { return m == MaskMode::ZeroAll ? "zero" : "stochastic"; }

MaskMode parse_mask_mode(const std::string &name) {
    if (name == "zero") return MaskMode::ZeroAll;
    if (name == "stochastic" || name == "801010") return MaskMode::Stochastic801010;
    throw Error(ErrorKind::InvalidConfig, "unknown mask mode '" + name + "'");
}

std::string to_string(SpanOrigin o) {
    switch (o) {
    case SpanOrigin::RandomSpan: return "random";
    case SpanOrigin::SpeechSpan: return "speech";
    case SpanOrigin::SilenceSpan: return "silence";
    case SpanOrigin::PhonemeSpan: return "phoneme";
    }
    return "?";
}

void MaskPolicyConfig::validate() const {
    if (span < 1) {
        throw Error(ErrorKind::InvalidConfig, "span C must be >= 1");
    }
    if (!(budget >= 0.0 && budget <= 1.0)) {
        throw Error(ErrorKind::InvalidConfig, "budget p must be in [0, 1]");
    }
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw Error(ErrorKind::InvalidConfig, "rho must be in [0, 1]");
    }
}

int MaskSequence::masked_count() const {
    return static_cast<int>(std::count_if(states.begin(), states.end(), [](const FrameState &s) { return s.masked(); }));
}

int mask_target(double budget, int frames) { return static_cast<int>(std::llround(budget * frames)); }

int speech_quota(double rho, int starts) { return static_cast<int>(std::llround(rho * starts)); }

MaskSequence gen_random_mask(int frames, const MaskPolicyConfig &cfg) {
    cfg.validate();
    check_frames(frames);
    Rng rng(derive_seed(cfg.seed, "random-mask"));
    std::vector<int> pool(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        pool[static_cast<std::size_t>(t)] = t;
    }
    Sampler starts(std::move(pool));
    MaskBuilder builder(frames);
    const int target = mask_target(cfg.budget, frames);
    while (builder.masked() < target && !starts.empty()) {
        const int s = starts.draw(rng);
        builder.add({s, s, std::min(s + cfg.span - 1, frames - 1), SpanOrigin::RandomSpan, {}});
    }
    return builder.finish();
}

MaskSequence gen_speech_level_mask(int frames, const SpeechLists &lists, const MaskPolicyConfig &cfg) {
    cfg.validate();
    check_frames(frames);
    check_lists(frames, lists);
    Rng rng(derive_seed(cfg.seed, "speech-level-mask"));
    Sampler speech(lists.speech);
    Sampler silence(lists.nonspeech);
    MaskBuilder builder(frames);
    const int target = mask_target(cfg.budget, frames);

    // The quota is tracked cumulatively: after n starts exactly
    // round(rho * n) came from list A, so it holds wherever drawing stops.
    int starts = 0, from_a = 0, fallback_a = 0, fallback_b = 0;
    while (builder.masked() < target && !(speech.empty() && silence.empty())) {
        bool use_speech = speech_quota(cfg.rho, starts + 1) > from_a;
        if (use_speech && speech.empty()) {
            use_speech = false;
            ++fallback_a;
        } else if (!use_speech && silence.empty()) {
            use_speech = true;
            ++fallback_b;
        }
        const int s = (use_speech ? speech : silence).draw(rng);
        builder.add({s, s, std::min(s + cfg.span - 1, frames - 1),
                     use_speech ? SpanOrigin::SpeechSpan : SpanOrigin::SilenceSpan, {}});
        ++starts;
        from_a += use_speech;
    }
    MaskSequence m = builder.finish();
    m.speech_starts = from_a;
    m.silence_starts = starts - from_a;
    record_fallbacks(m, fallback_a, fallback_b);
    return m;
}

MaskSequence gen_phoneme_level_mask(const PhonemeAlignment &a, const MaskPolicyConfig &cfg) {
    cfg.validate();
    check_frames(a.frames);
    std::vector<int> candidates;
    for (std::size_t i = 0; i < a.spans.size(); ++i) {
        if (eligible(a.spans[i], cfg)) {
            candidates.push_back(static_cast<int>(i));
        }
    }
    if (candidates.empty()) {
        throw Error(ErrorKind::NoEligiblePhonemes, "no maskable phonemes in '" + a.utt_id + "'");
    }
    Rng rng(derive_seed(cfg.seed, "phoneme-level-mask"));
    Sampler spans(std::move(candidates));
    MaskBuilder builder(a.frames);
    const int target = mask_target(cfg.budget, a.frames);
    while (builder.masked() < target && !spans.empty()) {
        const auto &s = a.spans[static_cast<std::size_t>(spans.draw(rng))];
        builder.add({s.begin, s.begin, s.end, SpanOrigin::PhonemeSpan, s.label});
    }
    return builder.finish();
}

MaskSequence gen_combined_mask(const PhonemeAlignment &a, const SpeechLists &lists, const MaskPolicyConfig &cfg) {
    cfg.validate();
    check_frames(a.frames);
    check_lists(a.frames, lists);

    // Speech starts select the phoneme they fall in, so longer phonemes are
    // proportionally more likely. Frames of silence phones are not anchors.
    std::vector<int> anchors;
    for (int t : lists.speech) {
        if (eligible(phoneme_at(a, t), cfg)) {
            anchors.push_back(t);
        }
    }
    Rng rng(derive_seed(cfg.seed, "combined-mask"));
    Sampler speech(std::move(anchors));
    Sampler silence(lists.nonspeech);
    std::vector<bool> span_used(a.spans.size(), false);
    MaskBuilder builder(a.frames);
    const int target = mask_target(cfg.budget, a.frames);

    // Draws the next anchor whose phoneme has not been masked yet.
    auto next_anchor = [&]() -> int {
        while (!speech.empty()) {
            const int t = speech.draw(rng);
            if (!span_used[span_index_at(a, t)]) {
                return t;
            }
        }
        return -1;
    };
    int pending = -1;
    auto speech_available = [&] {
        if (pending < 0) {
            pending = next_anchor();
        }
        return pending >= 0;
    };

    int starts = 0, from_a = 0, fallback_a = 0, fallback_b = 0;
    while (builder.masked() < target && (speech_available() || !silence.empty())) {
        bool use_speech = speech_quota(cfg.rho, starts + 1) > from_a;
        if (use_speech && !speech_available()) {
            use_speech = false;
            ++fallback_a;
        } else if (!use_speech && silence.empty()) {
            use_speech = true;
            ++fallback_b;
        }
        if (use_speech) {
            const std::size_t idx = span_index_at(a, pending);
            const auto &s = a.spans[idx];
            span_used[idx] = true;
            builder.add({pending, s.begin, s.end, SpanOrigin::PhonemeSpan, s.label});
            pending = -1;
        } else {
            const int s = silence.draw(rng);
            builder.add({s, s, std::min(s + cfg.span - 1, a.frames - 1), SpanOrigin::SilenceSpan, {}});
        }
        ++starts;
        from_a += use_speech;
    }
    MaskSequence m = builder.finish();
    m.speech_starts = from_a;
    m.silence_starts = starts - from_a;
    record_fallbacks(m, fallback_a, fallback_b);
    return m;
}

MaskSequence generate_mask(const PhonemeAlignment &a, const SpeechLists &lists, const MaskPolicyConfig &cfg) {
    switch (cfg.policy) {
    case MaskPolicy::Random: return gen_random_mask(a.frames, cfg);
    case MaskPolicy::SpeechLevel: return gen_speech_level_mask(a.frames, lists, cfg);
    case MaskPolicy::PhonemeLevel: return gen_phoneme_level_mask(a, cfg);
    case MaskPolicy::Combined: return gen_combined_mask(a, lists, cfg);
    }
    throw Error(ErrorKind::InvalidConfig, "unknown policy");
}

MaskedFeatures apply_mask(const FeatureMatrix &x, const MaskSequence &m, const MaskPolicyConfig &cfg) {
    if (x.frames() != m.frames) {
        throw Error(ErrorKind::LengthMismatch, "mask has " + std::to_string(m.frames) + " frames, features have " +
                                                   std::to_string(x.frames()));
    }
    MaskedFeatures out{x, m};
    auto &states = out.mask.states;
    auto zero = [&](int t) {
        out.features.values.row(t).setZero();
        states[static_cast<std::size_t>(t)] = {FrameState::Kind::MaskedZero, -1};
    };

    if (cfg.mode == MaskMode::ZeroAll) {
        for (const auto &run : m.runs) {
            for (int t = run.start; t <= run.end; ++t) {
                zero(t);
            }
        }
        return out;
    }

    std::vector<int> unmasked;
    for (int t = 0; t < m.frames; ++t) {
        if (!m.is_masked(t)) {
            unmasked.push_back(t);
        }
    }
    Rng rng(derive_seed(cfg.seed, "apply-mask"));
    for (const auto &run : m.runs) {
        const double u = rng.uniform();
        for (int t = run.start; t <= run.end; ++t) {
            if (u < 0.8 || (u < 0.9 && unmasked.empty())) {
                zero(t);
            } else if (u < 0.9) {
                const int src = unmasked[rng.index(unmasked.size())];
                out.features.values.row(t) = x.values.row(src);
                states[static_cast<std::size_t>(t)] = {FrameState::Kind::MaskedReplace, src};
            } else {
                states[static_cast<std::size_t>(t)] = {FrameState::Kind::MaskedKeep, -1};
            }
        }
    }
    return out;
}

void write_mask_runs(const MaskSequence &m, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    for (const auto &r : m.runs) {
        out << to_string(r.origin);
        if (r.origin == SpanOrigin::PhonemeSpan) {
            out << ':' << r.label;
        }
        out << '\t' << r.start << '\t' << r.end << '\n';
    }
}

MaskSequence read_mask_runs(const std::filesystem::path &path, int frames) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    MaskSequence m;
    m.frames = frames;
    m.states.resize(static_cast<std::size_t>(frames));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string origin;
        MaskRun run;
        if (!std::getline(row, origin, '\t') || !(row >> run.start >> run.end) || run.start < 0 ||
            run.end < run.start || run.end >= frames) {
            throw Error(ErrorKind::IoError, "bad mask line '" + line + "'");
        }
        const auto colon = origin.find(':');
        const std::string kind = origin.substr(0, colon);
        if (kind == "random") run.origin = SpanOrigin::RandomSpan;
        else if (kind == "speech") run.origin = SpanOrigin::SpeechSpan;
        else if (kind == "silence") run.origin = SpanOrigin::SilenceSpan;
        else if (kind == "phoneme") run.origin = SpanOrigin::PhonemeSpan;
        else throw Error(ErrorKind::IoError, "unknown run origin '" + origin + "'");
        if (colon != std::string::npos) {
            run.label = origin.substr(colon + 1);
        }
        for (int t = run.start; t <= run.end; ++t) {
            m.states[static_cast<std::size_t>(t)].kind = FrameState::Kind::MaskedZero;
        }
        m.draws.push_back({run.start, run.start, run.end, run.origin, run.label});
        m.runs.push_back(std::move(run));
    }
    return m;
}

void write_mask_states(const MaskSequence &m, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    for (const auto &s : m.states) {
        switch (s.kind) {
        case FrameState::Kind::Unmasked: out << "U\n"; break;
        case FrameState::Kind::MaskedZero: out << "Z\n"; break;
        case FrameState::Kind::MaskedReplace: out << "R:" << s.source << '\n'; break;
        case FrameState::Kind::MaskedKeep: out << "K\n"; break;
        }
    }
}

} // namespace masklab
