#include "masklab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "masklab/error.hpp"
#include "masklab/random.hpp"

namespace masklab {

namespace {

constexpr const char *kSilence = "sil";

struct Formants {
    double f1;
    double f2;
};

Formants class_formants(int k, int sample_rate) {
    const double nyquist = sample_rate / 2.0;
    const double f1 = 300.0 + 180.0 * (k % 4);
    const double f2 = std::min(900.0 + 500.0 * (k / 4) + 120.0 * (k % 4), 0.45 * sample_rate);
    return {std::min(f1, 0.4 * nyquist), f2};
}

double speaker_f0(int s) { return 95.0 + 13.0 * (s % 8) + 3.0 * (s / 8); }

// dB of attenuation per kHz.
double speaker_tilt(int s) { return 1.0 + 0.75 * s; }

struct PlannedSpan {
    int cls = -1; // -1 = silence
    int frames = 0;
};

// Harmonic stack of one phoneme instance, sampled into out[begin, end).
void render_phoneme(std::vector<float> &out, std::size_t begin, std::size_t end, int cls,
                    int speaker, const SynthCorpusSpec &spec, Rng &rng) {
    const double sr = spec.sample_rate;
    const double f0 = speaker_f0(speaker);
    const double tilt = speaker_tilt(speaker);
    const double jitter = rng.uniform(0.97, 1.03);
    const double gain = rng.uniform(0.7, 1.3);
    const Formants fm = class_formants(cls, spec.sample_rate);
    const double f1 = fm.f1 * jitter;
    const double f2 = fm.f2 * jitter;

    std::vector<double> freqs;
    std::vector<double> amps;
    for (int n = 1; n * f0 < 0.45 * sr; ++n) {
        const double f = n * f0;
        const double env = std::exp(-0.5 * std::pow((f - f1) / 120.0, 2)) +
                           0.8 * std::exp(-0.5 * std::pow((f - f2) / 180.0, 2)) + 0.02;
        freqs.push_back(f);
        amps.push_back(env * std::pow(10.0, -tilt * (f / 1000.0) / 20.0));
    }
    double total = 0.0;
    for (double a : amps) {
        total += a;
    }
    const double scale = spec.speech_level * gain / total;

    for (std::size_t i = begin; i < end; ++i) {
        const double t = static_cast<double>(i) / sr;
        double v = 0.0;
        for (std::size_t h = 0; h < freqs.size(); ++h) {
            v += amps[h] * std::sin(2.0 * M_PI * freqs[h] * t);
        }
        out[i] = static_cast<float>(scale * v + spec.noise_level * rng.normal());
    }
}

} // namespace

std::vector<std::vector<int>> successor_table(const SynthCorpusSpec &spec) {
    std::vector<std::vector<int>> table;
    if (spec.successors <= 0) {
        return table;
    }
    Rng rng(derive_seed(spec.seed, "phonotactics"));
    table.resize(static_cast<std::size_t>(spec.num_phoneme_classes));
    for (int c = 0; c < spec.num_phoneme_classes; ++c) {
        std::vector<int> others;
        for (int k = 0; k < spec.num_phoneme_classes; ++k) {
            if (k != c) {
                others.push_back(k);
            }
        }
        rng.shuffle(others);
        others.resize(static_cast<std::size_t>(spec.successors));
        table[static_cast<std::size_t>(c)] = std::move(others);
    }
    return table;
}

namespace {

SynthUtterance make_utterance(const SynthCorpusSpec &spec, int index) {
    Rng rng(derive_seed(spec.seed, "synth-utterance", static_cast<std::uint64_t>(index)));
    const int speaker = index % spec.num_speakers;
    const auto table = successor_table(spec);

    std::vector<PlannedSpan> plan;
    auto gap = [&] { plan.push_back({-1, rng.uniform_int(spec.silence_gap.lo, spec.silence_gap.hi)}); };
    gap();
    const int segments =
        rng.uniform_int(spec.segments_per_utterance.lo, spec.segments_per_utterance.hi);
    for (int seg = 0; seg < segments; ++seg) {
        if (seg > 0) {
            gap();
        }
        const int count = rng.uniform_int(spec.phonemes_per_segment.lo, spec.phonemes_per_segment.hi);
        int prev = -1;
        for (int p = 0; p < count; ++p) {
            int cls = 0;
            if (prev < 0) {
                cls = static_cast<int>(rng.index(static_cast<std::uint64_t>(spec.num_phoneme_classes)));
            } else if (!table.empty()) {
                const auto &next = table[static_cast<std::size_t>(prev)];
                cls = next[rng.index(next.size())];
            } else {
                // skip the previous class so neighbours always differ
                cls = static_cast<int>(rng.index(static_cast<std::uint64_t>(spec.num_phoneme_classes - 1)));
                if (cls >= prev) {
                    ++cls;
                }
            }
            plan.push_back({cls, rng.uniform_int(spec.phoneme_duration.lo, spec.phoneme_duration.hi)});
            prev = cls;
        }
    }
    gap();

    SynthUtterance utt;
    char id[32];
    std::snprintf(id, sizeof(id), "u%04d_s%02d", index, speaker);
    utt.utt_id = id;
    utt.speaker_id = speaker;
    utt.alignment.utt_id = utt.utt_id;

    int frame = 0;
    for (const auto &p : plan) {
        PhonemeSpan span;
        span.label = p.cls < 0 ? kSilence : phoneme_label(p.cls);
        span.begin = frame;
        span.end = frame + p.frames - 1;
        span.is_silence = p.cls < 0;
        utt.alignment.spans.push_back(span);
        frame += p.frames;
    }
    const int total_frames = frame;
    utt.alignment.frames = total_frames;

    const std::size_t hop = static_cast<std::size_t>(spec.hop);
    const std::size_t len = static_cast<std::size_t>(spec.frame_length);
    const std::size_t num_samples = len + static_cast<std::size_t>(total_frames - 1) * hop;

    std::vector<float> samples(num_samples);
    for (auto &s : samples) {
        s = static_cast<float>(0.1 * spec.noise_level * rng.normal());
    }

    // A speech span [b, e] is rendered into exactly the samples that only
    // frames b..e see: [b*hop + len - hop, e*hop + hop). Neighbouring
    // phonemes inside a segment switch at the midpoint of their frame centers.
    const auto &spans = utt.alignment.spans;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (spans[i].is_silence) {
            continue;
        }
        const bool seg_start = i == 0 || spans[i - 1].is_silence;
        const bool seg_end = i + 1 == spans.size() || spans[i + 1].is_silence;
        const std::size_t b = static_cast<std::size_t>(spans[i].begin);
        const std::size_t e = static_cast<std::size_t>(spans[i].end);
        const std::size_t lo = seg_start ? b * hop + len - hop : (b - 1) * hop + (len + hop) / 2;
        const std::size_t hi = seg_end ? e * hop + hop : e * hop + (len + hop) / 2;
        const int cls = std::stoi(spans[i].label.substr(2));
        render_phoneme(samples, lo, std::min(hi, num_samples), cls, speaker, spec, rng);
    }

    for (auto &s : samples) {
        s = std::clamp(s, -1.0f, 1.0f);
    }
    utt.waveform.samples = std::move(samples);
    utt.waveform.sample_rate = spec.sample_rate;
    quantize_pcm16(utt.waveform);

    utt.vad_truth.labels.assign(static_cast<std::size_t>(total_frames), false);
    for (const auto &s : spans) {
        if (!s.is_silence) {
            for (int t = s.begin; t <= s.end; ++t) {
                utt.vad_truth.labels[static_cast<std::size_t>(t)] = true;
            }
        }
    }
    return utt;
}

} // namespace

void SynthCorpusSpec::validate() const {
    if (num_utterances < 0) {
        throw Error(ErrorKind::InvalidSpec, "num_utterances must be >= 0");
    }
    if (num_phoneme_classes < 2 || num_speakers < 2) {
        throw Error(ErrorKind::InvalidSpec, "need at least 2 phoneme classes and 2 speakers");
    }
    if (!phoneme_duration.valid() || !silence_gap.valid() || !segments_per_utterance.valid() ||
        !phonemes_per_segment.valid()) {
        throw Error(ErrorKind::InvalidSpec, "ranges must be nonempty with positive lower bounds");
    }
    if (successors < 0 || successors >= num_phoneme_classes) {
        throw Error(ErrorKind::InvalidSpec, "successors must be in [0, num_phoneme_classes)");
    }
    if (!(noise_level >= 0.0) || noise_level > 0.1) {
        throw Error(ErrorKind::InvalidSpec, "noise_level must be in [0, 0.1]");
    }
    if (sample_rate <= 0 || hop <= 0 || frame_length < hop) {
        throw Error(ErrorKind::InvalidSpec, "invalid framing");
    }
}

std::string phoneme_label(int phoneme_class) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "ph%02d", phoneme_class);
    return buf;
}

std::vector<SynthUtterance> synth_corpus(const SynthCorpusSpec &spec) {
    spec.validate();
    std::vector<SynthUtterance> corpus;
    corpus.reserve(static_cast<std::size_t>(spec.num_utterances));
    for (int i = 0; i < spec.num_utterances; ++i) {
        corpus.push_back(make_utterance(spec, i));
    }
    return corpus;
}

FeatureConfig corpus_feature_config(const SynthCorpusSpec &spec) {
    FeatureConfig cfg;
    cfg.frame_length = spec.frame_length;
    cfg.hop = spec.hop;
    return cfg;
}

void write_corpus(const std::vector<SynthUtterance> &corpus, const std::filesystem::path &dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw Error(ErrorKind::IoError, "cannot create " + dir.string());
    }
    std::ofstream manifest(dir / kManifestName, std::ios::trunc);
    if (!manifest) {
        throw Error(ErrorKind::IoError, "cannot write manifest in " + dir.string());
    }
    manifest << "utt_id\tspeaker_id\tframe_count\n";
    for (const auto &u : corpus) {
        write_wav(u.waveform, dir / (u.utt_id + ".wav"));
        write_alignment(u.alignment, dir / (u.utt_id + ".align.tsv"));
        write_vad_labels(u.vad_truth, dir / (u.utt_id + ".vad.txt"));
        manifest << u.utt_id << '\t' << u.speaker_id << '\t' << u.alignment.frames << '\n';
    }
}

std::vector<CorpusEntry> read_manifest(const std::filesystem::path &dir) {
    std::ifstream in(dir / kManifestName);
    if (!in) {
        throw Error(ErrorKind::IoError, "no " + std::string(kManifestName) + " in " + dir.string());
    }
    std::vector<CorpusEntry> entries;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        CorpusEntry e;
        if (!(row >> e.utt_id >> e.speaker_id >> e.frames)) {
            throw Error(ErrorKind::IoError, "malformed manifest line: " + line);
        }
        entries.push_back(e);
    }
    return entries;
}

} // namespace masklab
