// Acceptance checks A1-A8. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Criteria can be selected by name: `acceptance A2 A7`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "corpus_util.hpp"
#include "grad_check.hpp"
#include "helpers.hpp"
#include "mask_audit.hpp"
#include "masklab/analysis.hpp"
#include "masklab/audio_io.hpp"
#include "masklab/pipeline.hpp"
#include "masklab/probes.hpp"
#include "masklab/random.hpp"
#include "masklab/trainer.hpp"

using namespace masklab;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_params(const EncoderParams &a, const EncoderParams &b) {
    std::vector<Eigen::MatrixXd> xs, ys;
    a.visit([&](const std::string &, const Eigen::MatrixXd &m) { xs.push_back(m); });
    b.visit([&](const std::string &, const Eigen::MatrixXd &m) { ys.push_back(m); });
    if (xs.size() != ys.size()) {
        return false;
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].rows() != ys[i].rows() || xs[i].cols() != ys[i].cols() || !(xs[i].array() == ys[i].array()).all()) {
            return false;
        }
    }
    return true;
}

bool same_mask(const MaskSequence &a, const MaskSequence &b) {
    if (a.frames != b.frames || a.runs.size() != b.runs.size() || a.warnings != b.warnings) {
        return false;
    }
    for (int t = 0; t < a.frames; ++t) {
        const auto &x = a.states[static_cast<std::size_t>(t)];
        const auto &y = b.states[static_cast<std::size_t>(t)];
        if (x.kind != y.kind || x.source != y.source) {
            return false;
        }
    }
    for (std::size_t i = 0; i < a.runs.size(); ++i) {
        if (a.runs[i].start != b.runs[i].start || a.runs[i].end != b.runs[i].end ||
            a.runs[i].origin != b.runs[i].origin || a.runs[i].label != b.runs[i].label) {
            return false;
        }
    }
    return true;
}

// Alternating silence/phoneme spans with random lengths, covering T frames.
PhonemeAlignment random_alignment(Rng &rng, int T) {
    PhonemeAlignment a;
    a.utt_id = "rand";
    a.frames = T;
    int t = 0;
    bool silence = rng.uniform() < 0.5;
    while (t < T) {
        const int len = std::min(T - t, rng.uniform_int(1, silence ? 12 : 25));
        PhonemeSpan s;
        s.is_silence = silence;
        s.label = silence ? "sil" : "ph" + std::to_string(rng.index(12));
        s.begin = t;
        s.end = t + len - 1;
        a.spans.push_back(s);
        t += len;
        silence = rng.uniform() < (silence ? 0.2 : 0.4);
    }
    return a;
}

// Ground-truth VAD from the alignment with a fraction of frames flipped.
VadLabels noisy_vad(Rng &rng, const PhonemeAlignment &a, double flip) {
    VadLabels v;
    v.labels.assign(static_cast<std::size_t>(a.frames), false);
    for (const auto &s : a.spans) {
        for (int t = s.begin; t <= s.end; ++t) {
            v.labels[static_cast<std::size_t>(t)] = !s.is_silence;
        }
    }
    for (auto &&l : v.labels) {
        if (rng.uniform() < flip) {
            l = !l;
        }
    }
    return v;
}

Verdict a1_masking() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(20240601);
    const MaskPolicy policies[] = {MaskPolicy::Random, MaskPolicy::SpeechLevel, MaskPolicy::PhonemeLevel,
                                   MaskPolicy::Combined};
    int configs = 0, refused = 0, violations = 0, nondeterministic = 0;
    std::string first_problem;
    for (int i = 0; i < 1200; ++i) {
        const int T = rng.uniform_int(20, 600);
        const PhonemeAlignment a = random_alignment(rng, T);
        const SpeechLists lists = speech_lists(noisy_vad(rng, a, rng.uniform(0.0, 0.2)));
        MaskPolicyConfig cfg;
        cfg.policy = policies[i % 4];
        cfg.span = rng.uniform_int(1, 15);
        cfg.budget = rng.uniform(0.0, 0.6);
        cfg.rho = rng.uniform() < 0.2 ? (rng.uniform() < 0.5 ? 0.0 : 1.0) : rng.uniform();
        cfg.include_silence_phones = rng.uniform() < 0.1;
        cfg.seed = rng.next();
        ++configs;

        MaskSequence m;
        try {
            m = generate_mask(a, lists, cfg);
        } catch (const Error &e) {
            // generators may refuse only when nothing is eligible
            bool any = false;
            for (const auto &s : a.spans) {
                any = any || audit::is_eligible(s, cfg);
            }
            if (e.kind() == ErrorKind::NoEligiblePhonemes && !any) {
                ++refused;
                continue;
            }
            ++violations;
            if (first_problem.empty()) {
                first_problem = std::string("unexpected error: ") + e.what();
            }
            continue;
        }
        auto bad = audit::check(m, cfg, lists, a);
        if (cfg.policy == MaskPolicy::PhonemeLevel && audit::whole_phoneme_rate(m, a) != 1.0) {
            bad.push_back("whole_phoneme_rate");
        }
        if (!bad.empty()) {
            ++violations;
            if (first_problem.empty()) {
                first_problem = to_string(cfg.policy) + ": " + bad.front();
            }
        }
        if (!same_mask(m, generate_mask(a, lists, cfg))) {
            ++nondeterministic;
        }
    }
    const double secs = seconds_since(t0);
    Verdict v;
    v.pass = configs >= 1000 && violations == 0 && nondeterministic == 0 && secs < 30.0;
    v.detail = std::to_string(configs) + " configs, " + std::to_string(refused) + " refused, " +
               std::to_string(violations) + " violations, " + std::to_string(nondeterministic) + " nondeterministic" +
               (first_problem.empty() ? "" : " (" + first_problem + ")") + fmt(", %.1f s (limit 30)", secs);
    return v;
}

Verdict a2_vad() {
    const auto t0 = std::chrono::steady_clock::now();
    SynthCorpusSpec spec;
    spec.num_utterances = 50;
    const FeatureConfig fc = corpus_feature_config(spec);
    const auto corpus = synth_corpus(spec);
    const VadConfig vc;
    double acc = 0.0;
    bool monotone = true;
    for (const auto &u : corpus) {
        acc += frame_accuracy(vad_labels(u.waveform, fc, vc), u.vad_truth);
        // raising the threshold may only remove speech frames
        std::optional<VadLabels> prev;
        for (int k = 0; k < 10; ++k) {
            VadConfig grid = vc;
            grid.theta = -70.0 + 5.0 * k;
            VadLabels cur = vad_labels(u.waveform, fc, grid);
            if (prev) {
                for (std::size_t t = 0; t < cur.labels.size(); ++t) {
                    monotone = monotone && (!cur.labels[t] || prev->labels[t]);
                }
            }
            prev = std::move(cur);
        }
    }
    acc /= static_cast<double>(corpus.size());
    const double secs = seconds_since(t0);
    Verdict v;
    v.pass = acc >= 0.95 && monotone && secs < 10.0;
    v.detail = fmt("mean frame accuracy %.4f at theta=%.0f dB (need >= 0.95), ", acc, vc.theta) +
               (monotone ? "monotone" : "NOT monotone") + " on 10-point grid" + fmt(", %.1f s (limit 10)", secs);
    return v;
}

Verdict a3_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    int checked = 0;
    double worst = 0.0;
    bool covered = true;
    std::string failure;
    for (auto scope : {LossScope::MaskedOnly, LossScope::AllFrames}) {
        gradcheck::Problem p = gradcheck::make_problem(3);
        const gradcheck::Report r = gradcheck::run(p, scope, 4, 17);
        int tensors = 0;
        p.model.params.visit([&](const std::string &, const Eigen::MatrixXd &) { ++tensors; });
        covered = covered && r.tensors == tensors;
        checked += r.checked;
        worst = std::max(worst, r.worst_rel);
        if (failure.empty() && !r.failures.empty()) {
            failure = r.failures.front();
        }
    }
    const double secs = seconds_since(t0);
    Verdict v;
    v.pass = checked >= 100 && covered && failure.empty() && worst <= 1e-3 && secs < 60.0;
    v.detail = std::to_string(checked) + " parameters, worst relative error " + fmt("%.2e", worst) +
               (covered ? ", every tensor sampled" : ", some tensors unsampled") +
               (failure.empty() ? "" : " (" + failure + ")") + fmt(", %.1f s (limit 60)", secs);
    return v;
}

// The 2000-step run is shared by A4 and A5.
struct Pretrained {
    RunConfig cfg;
    std::vector<TrainingUtterance> corpus;
    PretrainResult result;
    double seconds = 0.0;
};

const Pretrained &pretrained() {
    static const Pretrained p = [] {
        Pretrained out;
        out.cfg.corpus.num_utterances = 50;
        out.cfg.mask.policy = MaskPolicy::Combined;
        out.cfg.train.num_steps = 2000;
        out.cfg.resolve();
        out.cfg.validate();
        const auto t0 = std::chrono::steady_clock::now();
        out.corpus = testutil::training_corpus(out.cfg.corpus, out.cfg.vad);
        out.result = pretrain(out.corpus, out.cfg.mask, out.cfg.encoder, out.cfg.train);
        out.seconds = seconds_since(t0);
        return out;
    }();
    return p;
}

double window_mean(const std::vector<double> &v, std::size_t begin, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = begin; i < begin + n; ++i) {
        s += v[i];
    }
    return s / static_cast<double>(n);
}

Verdict a4_descent() {
    const Pretrained &p = pretrained();
    const auto &losses = p.result.losses;
    const double first = window_mean(losses, 0, 100);
    const double last = window_mean(losses, losses.size() - 100, 100);
    const double ratio = last / first;

    // one utterance, one fixed mask, 500 full-batch steps
    const auto t0 = std::chrono::steady_clock::now();
    const TrainingUtterance &u = p.corpus.front();
    const MaskSequence mask = generate_mask(u.alignment, u.lists, p.cfg.mask);
    std::vector<TrainingExample> batch(1);
    batch[0].target = &u.features;
    MaskedFeatures masked = apply_mask(u.features, mask, p.cfg.mask);
    batch[0].input = std::move(masked.features);
    batch[0].mask = std::move(masked.mask);
    EncoderModel model = init_encoder(p.cfg.encoder, p.cfg.train.seed);
    AdamState opt = init_adam(model.config);
    double initial = 0.0, final_loss = 0.0;
    for (int s = 0; s < 500; ++s) {
        const BatchGradient g = compute_gradients(model, batch, p.cfg.train.loss_scope);
        if (s == 0) {
            initial = g.loss;
        }
        final_loss = g.loss;
        adam_update(model.params, g.grads, opt, p.cfg.train);
    }
    const double overfit = final_loss / initial;
    const double secs = p.seconds + seconds_since(t0);

    Verdict v;
    v.pass = ratio <= 0.5 && overfit < 0.1 && secs < 300.0;
    v.detail = fmt("final/first 100-step mean loss %.3f/%.3f = %.3f (need <= 0.5); ", last, first, ratio) +
               fmt("single-utterance overfit %.3f of initial after 500 steps (need < 0.1); %.0f s (limit 300)",
                   overfit, secs);
    return v;
}

Verdict a5_probes() {
    const Pretrained &p = pretrained();
    const auto t0 = std::chrono::steady_clock::now();
    const EncoderModel random_model = init_encoder(p.cfg.encoder, p.cfg.train.seed);
    const double trained_ph = run_probe(p.result.model, p.corpus, ProbeTask::PhonemeL, p.cfg).accuracy;
    const double random_ph = run_probe(random_model, p.corpus, ProbeTask::PhonemeL, p.cfg).accuracy;
    const double trained_spk = run_probe(p.result.model, p.corpus, ProbeTask::SpeakerF, p.cfg).accuracy;
    const double chance = 1.0 / p.cfg.corpus.num_speakers;
    const double secs = p.seconds + seconds_since(t0);

    const bool phoneme_ok = trained_ph - random_ph >= 0.05;
    const bool speaker_ok = trained_spk - chance >= 0.20;
    Verdict v;
    v.pass = phoneme_ok && speaker_ok && secs < 600.0;
    v.detail = fmt("Phoneme-L trained %.3f vs random %.3f, gap %+.3f (need >= 0.05); ", trained_ph, random_ph,
                   trained_ph - random_ph) +
               fmt("Speaker-F %.3f vs chance %.3f (need +0.20); %.0f s incl. pretraining (limit 600)", trained_spk,
                   chance, secs);
    return v;
}

Verdict a6_sweep() {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg;
    cfg.out_dir = testutil::scratch("acceptance_sweep");
    cfg.corpus.num_utterances = 50;
    cfg.sweep.parameter = "rho";
    cfg.sweep.values = {0.80, 0.85, 0.90, 0.95, 1.00};
    cfg.sweep.pretrain_steps = 100;
    cfg.sweep.probe_steps = 200;
    cfg.resolve();
    cfg.validate();
    std::ostringstream log;
    Pipeline pipe(cfg, log);
    const SweepTable table = pipe.sweep();

    std::vector<std::string> problems;
    const std::string top = slurp(cfg.out_dir / "sweep" / "table.csv");
    if (top.rfind("# config_hash=", 0) != 0 || top.find("# seed=") == std::string::npos ||
        top.find("# tool_version=") == std::string::npos) {
        problems.push_back("table.csv lacks provenance header");
    }
    if (!read_provenance(cfg.out_dir / "sweep" / "provenance.txt")) {
        problems.push_back("sweep provenance missing");
    }
    for (MaskPolicy policy : cfg.sweep.policies) {
        const std::string name = to_string(policy);
        std::istringstream csv(slurp(cfg.out_dir / "sweep" / (name + ".csv")));
        std::string line;
        std::getline(csv, line);
        int rows = 0;
        while (std::getline(csv, line)) {
            std::istringstream row(line);
            std::string cell;
            std::getline(row, cell, ',');
            while (std::getline(row, cell, ',')) {
                char *end = nullptr;
                const double acc = std::strtod(cell.c_str(), &end);
                if (end == cell.c_str() || *end != '\0' || !std::isfinite(acc)) {
                    problems.push_back(name + " cell '" + cell + "'");
                }
            }
            ++rows;
        }
        if (rows != 5) {
            problems.push_back(name + " has " + std::to_string(rows) + " rows");
        }
        int stamped = 0;
        for (const auto &e : fs::directory_iterator(cfg.out_dir / "sweep" / name)) {
            const auto prov = read_provenance(e.path() / "provenance.txt");
            stamped += prov && prov->config_hash.size() == 16 && prov->tool_version == kToolVersion &&
                       fs::exists(e.path() / "result.csv") && fs::exists(e.path() / "model.ckpt");
        }
        if (stamped != 5) {
            problems.push_back(name + " has " + std::to_string(stamped) + " stamped cells");
        }
    }
    std::string at90;
    for (const auto &c : table.cells) {
        if (c.value == 0.90 && !c.failed) {
            at90 += " " + to_string(c.policy) + fmt(":%.3f", c.accuracy.begin()->second);
        }
    }
    const double secs = seconds_since(t0);
    Verdict v;
    v.pass = problems.empty() && table.cells.size() == 5 * cfg.sweep.policies.size();
    v.detail = std::to_string(table.cells.size()) + " cells over " + std::to_string(cfg.sweep.policies.size()) +
               " policies, " + (problems.empty() ? "complete with provenance" : problems.front()) +
               "; rho=0.9" + at90 + " (reference 61.0/68.0 not asserted)" + fmt("; %.0f s", secs);
    return v;
}

Verdict a7_round_trips() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = testutil::scratch("acceptance_formats");
    std::vector<std::string> problems;

    Waveform w;
    w.sample_rate = 16000;
    for (int i = 0; i < 16000; ++i) {
        w.samples.push_back(static_cast<float>(std::sin(2.0 * M_PI * 440.0 * i / 16000.0)));
    }
    write_wav(w, dir / "sine.wav");
    const Waveform r = read_wav(dir / "sine.wav");
    double worst = 0.0;
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(w.samples[i]) - r.samples[i]));
    }
    if (r.samples.size() != w.samples.size() || worst > 1.0 / 32768.0) {
        problems.push_back(fmt("wav error %.3g", worst));
    }

    SynthCorpusSpec spec;
    spec.num_utterances = 4;
    const auto corpus = testutil::training_corpus(spec);
    EncoderConfig ec;
    ec.d_model = 16;
    ec.num_heads = 2;
    ec.ff_dim = 32;
    ec.num_layers = 2;
    ec.dropout = 0.1;
    MaskPolicyConfig mc;
    mc.policy = MaskPolicy::Combined;
    mc.seed = 5;
    TrainConfig tc;
    tc.seed = 6;
    tc.batch_size = 2;
    tc.num_steps = 40;
    const PretrainResult straight = pretrain(corpus, mc, ec, tc);
    tc.num_steps = 20;
    const PretrainResult half = pretrain(corpus, mc, ec, tc);
    save_checkpoint(dir / "half.ckpt", half.model, &half.optimizer);
    const LoadedCheckpoint ck = load_checkpoint(dir / "half.ckpt");
    if (!same_params(ck.model.params, half.model.params) || !ck.optimizer ||
        !same_params(ck.optimizer->m, half.optimizer.m) || !same_params(ck.optimizer->v, half.optimizer.v)) {
        problems.push_back("checkpoint not bit exact");
    } else {
        Trainer resumed(ck.model, *ck.optimizer, mc, tc);
        std::vector<double> losses = half.losses;
        resumed.run(corpus, 20, losses);
        if (losses != straight.losses || !same_params(resumed.model().params, straight.model.params)) {
            problems.push_back("resume differs from uninterrupted run");
        }
    }

    const FeatureMatrix &x = corpus.front().features;
    write_features(x, dir / "x.feat");
    if (!(read_features(dir / "x.feat").values.array() == x.values.array()).all()) {
        problems.push_back("feature file not exact");
    }
    dump_spectrogram(x, nullptr, dir / "x");
    const FeatureMatrix y = read_matrix_csv(dir / "x.csv");
    double rel = 0.0;
    for (Eigen::Index i = 0; i < x.values.size(); ++i) {
        const double a = x.values.data()[i];
        rel = std::max(rel, std::abs(a - y.values.data()[i]) / std::max(std::abs(a), 1e-300));
    }
    if (y.values.rows() != x.values.rows() || y.values.cols() != x.values.cols() || rel > 5e-6) {
        problems.push_back(fmt("csv relative error %.2e", rel));
    }

    const double secs = seconds_since(t0);
    Verdict v;
    v.pass = problems.empty();
    v.detail = problems.empty() ? fmt("wav max error %.2e, checkpoint and resume bit exact, csv relative error %.1e",
                                      worst, rel)
                                : problems.front();
    v.detail += fmt("; %.1f s", secs);
    return v;
}

MaskSequence one_run(int frames, int start, int end) {
    MaskSequence m;
    m.frames = frames;
    m.states.resize(static_cast<std::size_t>(frames));
    m.runs.push_back({start, end, SpanOrigin::RandomSpan, {}});
    for (int t = start; t <= end; ++t) {
        m.states[static_cast<std::size_t>(t)].kind = FrameState::Kind::MaskedZero;
    }
    return m;
}

Verdict a8_analysis() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> problems;
    FeatureMatrix c;
    c.values = Eigen::MatrixXd::Constant(20, 80, -3.5);
    const double flat = sharpness(c, one_run(20, 0, 19));
    FeatureMatrix alt;
    alt.values.resize(20, 80);
    for (int t = 0; t < 20; ++t) {
        alt.values.row(t).setConstant(t % 2 ? -1.0 : 1.0);
    }
    const double zigzag = sharpness(alt, one_run(20, 0, 19));
    if (flat != 0.0 || zigzag != 4.0) {
        problems.push_back(fmt("sharpness constant %.3g alternating %.3g", flat, zigzag));
    }

    SynthCorpusSpec spec;
    spec.num_utterances = 50;
    int decreased = 0, total = 0;
    const fs::path dir = testutil::scratch("acceptance_analysis");
    bool deterministic = true;
    for (const auto &u : testutil::training_corpus(spec)) {
        const int T = u.features.frames();
        const MaskSequence m = one_run(T, 0, T - 1);
        decreased += sharpness(moving_average3(u.features), m) < sharpness(u.features, m);
        ++total;
        if (total <= 3) {
            const MaskSequence part = one_run(T, T / 4, T / 2);
            deterministic = deterministic && spectrogram_pgm(u.features, &part) == spectrogram_pgm(u.features, &part);
            dump_spectrogram(u.features, &part, dir / "a");
            dump_spectrogram(u.features, &part, dir / "b");
            deterministic = deterministic && slurp(dir / "a.pgm") == slurp(dir / "b.pgm") &&
                            slurp(dir / "a.csv") == slurp(dir / "b.csv") && !slurp(dir / "a.csv").empty();
        }
    }
    if (decreased != total) {
        problems.push_back("smoothing lowered sharpness on only " + std::to_string(decreased) + "/" +
                           std::to_string(total));
    }
    if (!deterministic) {
        problems.push_back("spectrogram output not deterministic");
    }
    const double secs = seconds_since(t0);
    Verdict v;
    v.pass = problems.empty();
    v.detail = problems.empty() ? "sharpness 0 on constant, 4 on alternating, lowered by smoothing on " +
                                      std::to_string(total) + "/" + std::to_string(total) +
                                      " utterances, PGM/CSV deterministic"
                                : problems.front();
    v.detail += fmt("; %.1f s", secs);
    return v;
}

} // namespace

int main(int argc, char **argv) {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"A1", a1_masking},  {"A2", a2_vad},    {"A3", a3_gradients}, {"A4", a4_descent},
        {"A5", a5_probes},   {"A6", a6_sweep},  {"A7", a7_round_trips}, {"A8", a8_analysis},
    };
    const std::set<std::string> wanted(argv + 1, argv + argc);
    int failed = 0;
    for (const auto &[name, check] : criteria) {
        if (!wanted.empty() && !wanted.count(name)) {
            continue;
        }
        Verdict v;
        try {
            v = check();
        } catch (const std::exception &e) {
            v.detail = std::string("threw: ") + e.what();
        }
        failed += !v.pass;
        std::cout << name << " " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
