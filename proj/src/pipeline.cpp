#include "masklab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "masklab/analysis.hpp"
#include "masklab/audio_io.hpp"
#include "masklab/error.hpp"
#include "masklab/random.hpp"
#include "masklab/synth.hpp"

namespace fs = std::filesystem;

namespace masklab {

namespace {

const std::vector<std::string> kCorpusSections{"corpus", "features"};
const std::vector<std::string> kMaskSections{"corpus", "features", "vad", "mask"};
const std::vector<std::string> kTrainSections{"corpus", "features", "vad", "mask", "model", "train"};
const std::vector<std::string> kProbeSections{"features", "vad", "model", "probe"};

std::string combine(std::uint64_t a, std::uint64_t b) { return hex64(splitmix64(a ^ splitmix64(b))); }

std::string fmt_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string fmt_accuracy(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw Error(ErrorKind::IoError, "write failed: " + path.string());
    }
}

// Runs a stage body; anything but a config error or an already wrapped
// failure becomes StageFailure naming the stage.
template <typename F> auto guarded(const std::string &stage, F &&body) {
    try {
        return body();
    } catch (const Error &e) {
        if (e.kind() == ErrorKind::ConfigError || e.kind() == ErrorKind::StageFailure) {
            throw;
        }
        throw Error(ErrorKind::StageFailure, stage + ": " + e.what());
    } catch (const std::exception &e) {
        throw Error(ErrorKind::StageFailure, stage + ": " + e.what());
    }
}

std::uint64_t corpus_digest(const fs::path &dir) {
    std::uint64_t h = file_digest(dir / "corpus.manifest.tsv");
    for (const auto &entry : read_manifest(dir)) {
        h = splitmix64(h ^ file_digest(dir / (entry.utt_id + ".wav")));
        h = splitmix64(h ^ file_digest(dir / (entry.utt_id + ".align.tsv")));
    }
    return h;
}

std::uint64_t mask_seed_for(const MaskPolicyConfig &cfg, const std::string &utt_id) {
    return derive_seed(cfg.seed, utt_id, 0);
}

const TrainingUtterance &find_utterance(const std::vector<TrainingUtterance> &corpus, const std::string &utt_id) {
    for (const auto &u : corpus) {
        if (u.utt_id == utt_id) {
            return u;
        }
    }
    throw Error(ErrorKind::IoError, "utterance '" + utt_id + "' not in corpus");
}

std::map<std::string, std::string> checkpoint_meta(const RunConfig &cfg, const std::string &hash) {
    return {{"config_hash", hash},
            {"seed", std::to_string(cfg.seed)},
            {"tool_version", kToolVersion},
            {"mask.policy", to_string(cfg.mask.policy)}};
}

std::vector<ResultRow> read_results_csv(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::vector<ResultRow> rows;
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string policy, task, acc, n;
        std::getline(ss, policy, ',');
        std::getline(ss, task, ',');
        std::getline(ss, acc, ',');
        std::getline(ss, n, ',');
        rows.push_back({policy, parse_probe_task(task), std::stod(acc), std::stoi(n)});
    }
    return rows;
}

} // namespace

void write_provenance(const fs::path &path, const Provenance &p, const std::string &config_dump) {
    std::ostringstream out;
    out << "stage=" << p.stage << "\n"
        << "config_hash=" << p.config_hash << "\n"
        << "seed=" << p.seed << "\n"
        << "tool_version=" << p.tool_version << "\n";
    std::istringstream lines(config_dump);
    std::string line;
    while (std::getline(lines, line)) {
        out << "config." << line << "\n";
    }
    write_text(path, out.str());
}

std::optional<Provenance> read_provenance(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        return std::nullopt;
    }
    Provenance p;
    p.tool_version.clear();
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            continue;
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "stage") {
            p.stage = value;
        } else if (key == "config_hash") {
            p.config_hash = value;
        } else if (key == "seed") {
            p.seed = std::stoull(value);
        } else if (key == "tool_version") {
            p.tool_version = value;
        }
    }
    if (p.config_hash.empty()) {
        return std::nullopt;
    }
    return p;
}

std::uint64_t file_digest(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return fnv1a(buf.str());
}

std::vector<TrainingUtterance> load_corpus(const fs::path &dir, const RunConfig &cfg) {
    std::vector<TrainingUtterance> out;
    for (const auto &entry : read_manifest(dir)) {
        const Waveform w = read_wav(dir / (entry.utt_id + ".wav"));
        TrainingUtterance u;
        u.utt_id = entry.utt_id;
        u.speaker_id = entry.speaker_id;
        u.features = fbank(w, cfg.features);
        if (u.features.frames() != entry.frames) {
            throw Error(ErrorKind::LengthMismatch, entry.utt_id + ": manifest says " + std::to_string(entry.frames) +
                                                       " frames, features have " +
                                                       std::to_string(u.features.frames()));
        }
        u.alignment = parse_alignment(dir / (entry.utt_id + ".align.tsv"), u.features.frames());
        u.lists = speech_lists(vad_labels(w, cfg.features, cfg.vad));
        out.push_back(std::move(u));
    }
    if (out.empty()) {
        throw Error(ErrorKind::IoError, "empty corpus in " + dir.string());
    }
    return out;
}

ProbeSplit probe_split(const EncoderModel &model, const std::vector<TrainingUtterance> &corpus, ProbeTask task,
                       std::uint64_t split_seed, double train_fraction) {
    std::vector<PhonemeAlignment> alignments;
    int num_speakers = 0;
    for (const auto &u : corpus) {
        alignments.push_back(u.alignment);
        num_speakers = std::max(num_speakers, u.speaker_id + 1);
    }
    const PhonemeInventory inventory(alignments);
    const bool phoneme = task == ProbeTask::PhonemeL || task == ProbeTask::Phoneme1H;
    const int classes = phoneme ? inventory.size() : num_speakers;

    std::vector<Eigen::MatrixXd> reps[2];
    std::vector<std::vector<int>> frame_labels[2];
    std::vector<int> utt_labels[2];
    for (const auto &u : corpus) {
        const int side = is_train_utterance(u.utt_id, split_seed, train_fraction) ? 0 : 1;
        reps[side].push_back(extract_representations(model, u.features));
        if (phoneme) {
            frame_labels[side].push_back(inventory.frame_labels(u.alignment));
        } else {
            frame_labels[side].emplace_back(static_cast<std::size_t>(u.features.frames()), u.speaker_id);
        }
        utt_labels[side].push_back(u.speaker_id);
    }
    ProbeSplit split;
    if (task == ProbeTask::SpeakerU) {
        split.train = pooled_dataset(reps[0], utt_labels[0], classes);
        split.eval = pooled_dataset(reps[1], utt_labels[1], classes);
    } else {
        split.train = frame_dataset(reps[0], frame_labels[0], classes);
        split.eval = frame_dataset(reps[1], frame_labels[1], classes);
    }
    return split;
}

ProbeResult run_probe(const EncoderModel &model, const std::vector<TrainingUtterance> &corpus, ProbeTask task,
                      const RunConfig &cfg) {
    const ProbeSplit split = probe_split(model, corpus, task, cfg.split_seed(), cfg.probe_train_fraction);
    ProbeConfig pc = cfg.probe;
    pc.task = task;
    const ProbeModel probe = train_probe(split.train, pc);
    return eval_probe(probe, split.eval);
}

void featurize_file(const fs::path &wav, const fs::path &out, const RunConfig &cfg) {
    guarded("featurize", [&] {
        const Waveform w = read_wav(wav);
        write_features(fbank(w, cfg.features), out);
        write_provenance(fs::path(out.string() + ".provenance.txt"),
                         {"featurize", hex64(cfg.hash({"features"})), cfg.seed}, cfg.dump({"features"}));
        return 0;
    });
}

void vad_file(const fs::path &wav, const fs::path &out, const RunConfig &cfg) {
    guarded("vad", [&] {
        const Waveform w = read_wav(wav);
        write_vad_labels(vad_labels(w, cfg.features, cfg.vad), out);
        write_provenance(fs::path(out.string() + ".provenance.txt"),
                         {"vad", hex64(cfg.hash({"features", "vad"})), cfg.seed}, cfg.dump({"features", "vad"}));
        return 0;
    });
}

Pipeline::Pipeline(RunConfig cfg, std::ostream &log) : cfg_(std::move(cfg)), log_(log) {
    cfg_.resolve();
    cfg_.validate();
}

fs::path Pipeline::corpus_dir() const { return cfg_.out_dir / "corpus"; }

bool Pipeline::fresh(const fs::path &stamp_path, const std::string &hash) const {
    if (cfg_.force) {
        return false;
    }
    const auto p = read_provenance(stamp_path);
    return p && p->config_hash == hash && p->tool_version == kToolVersion;
}

void Pipeline::stamp(const fs::path &path, const std::string &stage, const std::string &hash,
                     const std::vector<std::string> &sections) const {
    write_provenance(path, {stage, hash, cfg_.seed}, cfg_.dump(sections));
}

StageResult Pipeline::synth() {
    return guarded("synth", [&] {
        StageResult r{"synth"};
        const fs::path dir = corpus_dir();
        const std::string hash = hex64(cfg_.hash(kCorpusSections));
        if (fresh(dir / "provenance.txt", hash)) {
            r.skipped = true;
            return r;
        }
        fs::create_directories(dir);
        write_corpus(synth_corpus(cfg_.corpus), dir);
        stamp(dir / "provenance.txt", "synth", hash, kCorpusSections);
        r.artifacts.push_back(dir);
        log_ << "synth: " << cfg_.corpus.num_utterances << " utterances in " << dir.string() << "\n";
        return r;
    });
}

StageResult Pipeline::featurize() {
    synth();
    return guarded("featurize", [&] {
        StageResult r{"featurize"};
        const fs::path dir = cfg_.out_dir / "features";
        const std::string hash = combine(cfg_.hash(kCorpusSections), corpus_digest(corpus_dir()));
        if (fresh(dir / "provenance.txt", hash)) {
            r.skipped = true;
            return r;
        }
        fs::create_directories(dir);
        for (const auto &entry : read_manifest(corpus_dir())) {
            const Waveform w = read_wav(corpus_dir() / (entry.utt_id + ".wav"));
            const fs::path out = dir / (entry.utt_id + ".feat");
            write_features(fbank(w, cfg_.features), out);
            r.artifacts.push_back(out);
        }
        stamp(dir / "provenance.txt", "featurize", hash, kCorpusSections);
        log_ << "featurize: " << r.artifacts.size() << " feature files\n";
        return r;
    });
}

StageResult Pipeline::vad() {
    synth();
    return guarded("vad", [&] {
        StageResult r{"vad"};
        const fs::path dir = cfg_.out_dir / "vad";
        const std::vector<std::string> sections{"corpus", "features", "vad"};
        const std::string hash = combine(cfg_.hash(sections), corpus_digest(corpus_dir()));
        if (fresh(dir / "provenance.txt", hash)) {
            r.skipped = true;
            return r;
        }
        fs::create_directories(dir);
        double total_acc = 0.0;
        int with_truth = 0;
        for (const auto &entry : read_manifest(corpus_dir())) {
            const Waveform w = read_wav(corpus_dir() / (entry.utt_id + ".wav"));
            const VadLabels labels = vad_labels(w, cfg_.features, cfg_.vad);
            const fs::path out = dir / (entry.utt_id + ".vad.txt");
            write_vad_labels(labels, out);
            r.artifacts.push_back(out);
            const fs::path truth = corpus_dir() / (entry.utt_id + ".vad.txt");
            if (fs::exists(truth)) {
                total_acc += frame_accuracy(labels, read_vad_labels(truth));
                ++with_truth;
            }
        }
        std::ostringstream summary;
        summary << "utterances=" << r.artifacts.size() << "\n";
        if (with_truth > 0) {
            summary << "mean_frame_accuracy=" << fmt_accuracy(total_acc / with_truth) << "\n";
        }
        write_text(dir / "summary.txt", summary.str());
        stamp(dir / "provenance.txt", "vad", hash, sections);
        log_ << "vad: " << summary.str();
        return r;
    });
}

StageResult Pipeline::align_check() {
    synth();
    return guarded("align-check", [&] {
        StageResult r{"align-check"};
        const fs::path dir = cfg_.out_dir / "align";
        const std::string hash = combine(cfg_.hash(kCorpusSections), corpus_digest(corpus_dir()));
        if (fresh(dir / "provenance.txt", hash)) {
            r.skipped = true;
            return r;
        }
        fs::create_directories(dir);
        std::ostringstream report;
        int bad = 0;
        for (const auto &entry : read_manifest(corpus_dir())) {
            const Waveform w = read_wav(corpus_dir() / (entry.utt_id + ".wav"));
            const int frames = frame_count(w.samples.size(), cfg_.features);
            try {
                const auto a = parse_alignment(corpus_dir() / (entry.utt_id + ".align.tsv"), frames);
                report << entry.utt_id << "\tok\t" << a.spans.size() << "\n";
            } catch (const Error &e) {
                report << entry.utt_id << "\t" << to_string(e.kind()) << "\t" << e.what() << "\n";
                ++bad;
            }
        }
        write_text(dir / "report.txt", report.str());
        r.artifacts.push_back(dir / "report.txt");
        if (bad > 0) {
            throw Error(ErrorKind::StageFailure,
                        "align-check: " + std::to_string(bad) + " invalid alignments, see " +
                            (dir / "report.txt").string());
        }
        stamp(dir / "provenance.txt", "align-check", hash, kCorpusSections);
        log_ << "align-check: all alignments valid\n";
        return r;
    });
}

StageResult Pipeline::mask() {
    synth();
    return guarded("mask", [&] {
        StageResult r{"mask"};
        const fs::path dir = cfg_.out_dir / "masks" / to_string(cfg_.mask.policy);
        const std::string hash = combine(cfg_.hash(kMaskSections), corpus_digest(corpus_dir()));
        if (fresh(dir / "provenance.txt", hash)) {
            r.skipped = true;
            return r;
        }
        fs::create_directories(dir);
        const auto corpus = load_corpus(corpus_dir(), cfg_);
        long masked = 0;
        long frames = 0;
        for (const auto &u : corpus) {
            MaskPolicyConfig mc = cfg_.mask;
            mc.seed = mask_seed_for(cfg_.mask, u.utt_id);
            const MaskSequence m = generate_mask(u.alignment, u.lists, mc);
            for (const auto &w : m.warnings) {
                log_ << "mask: " << u.utt_id << ": " << w << "\n";
            }
            const fs::path out = dir / (u.utt_id + ".mask.tsv");
            write_mask_runs(m, out);
            write_mask_states(m, dir / (u.utt_id + ".states.txt"));
            write_text(dir / (u.utt_id + ".stats.txt"), format_mask_stats(mask_stats(m, u.lists, &u.alignment)));
            r.artifacts.push_back(out);
            masked += m.masked_count();
            frames += m.frames;
        }
        write_text(dir / "summary.txt", "utterances=" + std::to_string(corpus.size()) + "\nmasked_fraction=" +
                                            fmt_accuracy(static_cast<double>(masked) / frames) + "\n");
        stamp(dir / "provenance.txt", "mask", hash, kMaskSections);
        log_ << "mask: " << r.artifacts.size() << " mask files in " << dir.string() << "\n";
        return r;
    });
}

StageResult Pipeline::pretrain(const PretrainRequest &req) {
    auto corpus_dir_used = req.corpus_dir.empty() ? corpus_dir() : req.corpus_dir;
    if (req.corpus_dir.empty()) {
        synth();
    }
    return guarded("pretrain", [&] {
        StageResult r{"pretrain"};
        const fs::path ckpt =
            req.out.empty() ? cfg_.out_dir / "models" / (to_string(cfg_.mask.policy) + ".ckpt") : req.out;
        std::uint64_t h = splitmix64(cfg_.hash(kTrainSections) ^ corpus_digest(corpus_dir_used));
        if (!req.resume.empty()) {
            h = splitmix64(h ^ file_digest(req.resume));
        }
        const std::string hash = hex64(h);
        const fs::path stamp_path = ckpt.string() + ".provenance.txt";
        if (fresh(stamp_path, hash) && fs::exists(ckpt)) {
            r.skipped = true;
            return r;
        }
        const auto corpus = load_corpus(corpus_dir_used, cfg_);
        std::optional<Trainer> trainer;
        if (req.resume.empty()) {
            trainer.emplace(init_encoder(cfg_.encoder, cfg_.train.seed), cfg_.mask, cfg_.train);
        } else {
            LoadedCheckpoint loaded = load_checkpoint(req.resume);
            if (!loaded.optimizer) {
                throw Error(ErrorKind::CorruptBlob, "checkpoint has no optimizer state to resume from");
            }
            trainer.emplace(std::move(loaded.model), std::move(*loaded.optimizer), cfg_.mask, cfg_.train);
        }
        const long done = trainer->steps_done();
        std::vector<double> losses;
        if (done < cfg_.train.num_steps) {
            trainer->run(corpus, static_cast<int>(cfg_.train.num_steps - done), losses);
        }
        if (!ckpt.parent_path().empty()) {
            fs::create_directories(ckpt.parent_path());
        }
        save_checkpoint(ckpt, trainer->model(), &trainer->optimizer(), checkpoint_meta(cfg_, hash));
        fs::path curve = ckpt;
        curve.replace_extension(".loss.csv");
        write_loss_curve(losses, curve, done + 1);
        stamp(stamp_path, "pretrain", hash, kTrainSections);
        r.artifacts = {ckpt, curve};
        log_ << "pretrain: " << losses.size() << " steps";
        if (!losses.empty()) {
            log_ << ", final loss " << losses.back();
        }
        log_ << ", checkpoint " << ckpt.string() << "\n";
        return r;
    });
}

StageResult Pipeline::probe(const ProbeRequest &req) {
    if (req.corpus_dir.empty()) {
        synth();
    }
    return guarded("probe", [&] {
        StageResult r{"probe"};
        const fs::path cdir = req.corpus_dir.empty() ? corpus_dir() : req.corpus_dir;
        std::string name = "random-init";
        std::string policy = "random-init";
        std::uint64_t h = splitmix64(cfg_.hash(kProbeSections) ^ corpus_digest(cdir));
        h = splitmix64(h ^ fnv1a(to_string(cfg_.probe.task)));
        if (!req.checkpoint.empty()) {
            name = req.checkpoint.stem().string();
            h = splitmix64(h ^ file_digest(req.checkpoint));
        } else {
            h = splitmix64(h ^ cfg_.train.seed);
        }
        const fs::path dir = req.out.empty() ? cfg_.out_dir / "probes" / name : req.out;
        const std::string task = to_string(cfg_.probe.task);
        const std::string hash = hex64(h);
        const fs::path stamp_path = dir / (task + ".provenance.txt");
        if (fresh(stamp_path, hash)) {
            r.skipped = true;
            return r;
        }
        EncoderModel model;
        if (req.checkpoint.empty()) {
            model = init_encoder(cfg_.encoder, cfg_.train.seed);
        } else {
            LoadedCheckpoint loaded = load_checkpoint(req.checkpoint);
            model = std::move(loaded.model);
            const auto it = loaded.manifest.find("meta.mask.policy");
            policy = it != loaded.manifest.end() ? it->second : name;
        }
        const auto corpus = load_corpus(cdir, cfg_);
        const ProbeResult result = run_probe(model, corpus, cfg_.probe.task, cfg_);
        const std::vector<ResultRow> rows{{policy, cfg_.probe.task, result.accuracy, result.num_examples}};
        fs::create_directories(dir);
        write_results_csv(rows, dir / (task + ".csv"));
        write_text(dir / (task + ".txt"), format_results_table(rows));
        stamp(stamp_path, "probe", hash, kProbeSections);
        r.artifacts = {dir / (task + ".csv"), dir / (task + ".txt")};
        log_ << format_results_table(rows);
        return r;
    });
}

StageResult Pipeline::analyze(const AnalyzeRequest &req) {
    if (req.corpus_dir.empty()) {
        synth();
    }
    return guarded("analyze", [&] {
        StageResult r{"analyze"};
        const fs::path cdir = req.corpus_dir.empty() ? corpus_dir() : req.corpus_dir;
        const std::string policy = to_string(cfg_.mask.policy);
        const fs::path dir = req.out.empty() ? cfg_.out_dir / "analysis" / (req.utt_id + "_" + policy) : req.out;
        std::uint64_t h = splitmix64(cfg_.hash(kMaskSections) ^ corpus_digest(cdir));
        h = splitmix64(h ^ file_digest(req.checkpoint));
        h = splitmix64(h ^ fnv1a(req.utt_id));
        const std::string hash = hex64(h);
        if (fresh(dir / "provenance.txt", hash)) {
            r.skipped = true;
            return r;
        }
        const LoadedCheckpoint loaded = load_checkpoint(req.checkpoint);
        const auto corpus = load_corpus(cdir, cfg_);
        const TrainingUtterance &u = find_utterance(corpus, req.utt_id);

        MaskPolicyConfig mc = cfg_.mask;
        mc.seed = mask_seed_for(cfg_.mask, u.utt_id);
        const MaskSequence m = generate_mask(u.alignment, u.lists, mc);
        const MaskedFeatures masked = apply_mask(u.features, m, mc);
        const FeatureMatrix recon = forward(loaded.model, masked.features, false).output;

        fs::create_directories(dir);
        dump_spectrogram(u.features, &m, dir / "target");
        dump_spectrogram(masked.features, &m, dir / "input");
        dump_spectrogram(recon, &m, dir / "reconstruction");
        write_mask_runs(m, dir / "mask.tsv");
        write_text(dir / "stats.txt", format_mask_stats(mask_stats(m, u.lists, &u.alignment)));

        auto metric = [&](const FeatureMatrix &x) {
            try {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.9g", sharpness(x, m));
                return std::string(buf);
            } catch (const Error &e) {
                if (e.kind() != ErrorKind::NoInteriorFrames) {
                    throw;
                }
                return std::string("n/a");
            }
        };
        std::ostringstream report;
        report << "policy=" << policy << "\n"
               << "utt_id=" << u.utt_id << "\n"
               << "reconstruction_sharpness=" << metric(recon) << "\n"
               << "ground_truth_sharpness=" << metric(u.features) << "\n"
               << "ground_truth_smoothed_sharpness=" << metric(moving_average3(u.features)) << "\n"
               << "masked_l1=" << l1_loss(u.features, recon, m, LossScope::MaskedOnly) << "\n";
        write_text(dir / "sharpness.txt", report.str());
        stamp(dir / "provenance.txt", "analyze", hash, kMaskSections);
        r.artifacts = {dir / "target.pgm", dir / "input.pgm", dir / "reconstruction.pgm", dir / "sharpness.txt"};
        log_ << report.str();
        return r;
    });
}

SweepCell Pipeline::sweep_cell(const std::vector<TrainingUtterance> &corpus, MaskPolicy policy, double value) {
    SweepCell cell;
    cell.policy = policy;
    cell.value = value;

    RunConfig cc = cfg_;
    cc.mask.policy = policy;
    cc.train.num_steps = cfg_.sweep.pretrain_steps;
    cc.probe.num_steps = cfg_.sweep.probe_steps;
    const std::string &param = cfg_.sweep.parameter;
    if (param == "span") {
        cc.mask.span = static_cast<int>(std::lround(value));
    } else if (param == "rho") {
        cc.mask.rho = value;
    } else {
        cc.mask.budget = value;
    }

    const fs::path dir = cfg_.out_dir / "sweep" / to_string(policy) / (param + "_" + fmt_value(value));
    std::uint64_t h = splitmix64(cc.hash({"corpus", "features", "vad", "mask", "model", "train", "probe"}) ^
                                 corpus_digest(corpus_dir()));
    for (ProbeTask t : cfg_.sweep.tasks) {
        h = splitmix64(h ^ fnv1a(to_string(t)));
    }
    const std::string hash = hex64(h);
    if (fresh(dir / "provenance.txt", hash)) {
        try {
            for (const auto &row : read_results_csv(dir / "result.csv")) {
                cell.accuracy[row.task] = row.accuracy;
            }
            return cell;
        } catch (const std::exception &) {
            cell.accuracy.clear(); // stale cell, recompute
        }
    }
    try {
        cc.mask.validate();
        fs::create_directories(dir);
        const PretrainResult trained = masklab::pretrain(corpus, cc.mask, cc.encoder, cc.train);
        save_checkpoint(dir / "model.ckpt", trained.model, &trained.optimizer, checkpoint_meta(cc, hash));
        write_loss_curve(trained.losses, dir / "loss.csv");
        std::vector<ResultRow> rows;
        for (ProbeTask t : cfg_.sweep.tasks) {
            const ProbeResult res = run_probe(trained.model, corpus, t, cc);
            if (!std::isfinite(res.accuracy)) {
                throw Error(ErrorKind::StageFailure, "non-finite accuracy");
            }
            rows.push_back({to_string(policy), t, res.accuracy, res.num_examples});
            cell.accuracy[t] = res.accuracy;
        }
        write_results_csv(rows, dir / "result.csv");
        stamp(dir / "provenance.txt", "sweep-cell", hash, {"corpus", "features", "vad", "mask", "model", "train", "probe"});
    } catch (const std::exception &e) {
        cell.failed = true;
        cell.error = e.what();
        cell.accuracy.clear();
        write_text(dir / "error.txt", cell.error + "\n");
        log_ << "sweep: " << to_string(policy) << " " << param << "=" << fmt_value(value) << " failed: " << e.what()
             << "\n";
    }
    return cell;
}

SweepTable Pipeline::sweep() {
    synth();
    return guarded("sweep", [&] {
        const auto corpus = load_corpus(corpus_dir(), cfg_);
        SweepTable table;
        table.parameter = cfg_.sweep.parameter;
        table.tasks = cfg_.sweep.tasks;
        const fs::path root = cfg_.out_dir / "sweep";
        fs::create_directories(root);
        for (MaskPolicy policy : cfg_.sweep.policies) {
            SweepTable one{table.parameter, table.tasks, {}};
            for (double v : cfg_.sweep.values) {
                SweepCell cell = sweep_cell(corpus, policy, v);
                log_ << "sweep: " << to_string(policy) << " " << table.parameter << "=" << fmt_value(v)
                     << (cell.failed ? " FAILED" : " done") << "\n";
                one.cells.push_back(cell);
                table.cells.push_back(std::move(cell));
            }
            write_text(root / (to_string(policy) + ".csv"), format_sweep_csv(one, {policy}));
        }
        const std::string hash = hex64(cfg_.hash());
        std::string header = "# config_hash=" + hash + "\n# seed=" + std::to_string(cfg_.seed) +
                             "\n# tool_version=" + kToolVersion + "\n";
        write_text(root / "table.csv", header + format_sweep_csv(table, cfg_.sweep.policies));
        stamp(root / "provenance.txt", "sweep", hash, {});
        return table;
    });
}

std::string format_sweep_csv(const SweepTable &table, const std::vector<MaskPolicy> &policies) {
    std::ostringstream out;
    out << table.parameter;
    for (MaskPolicy p : policies) {
        for (ProbeTask t : table.tasks) {
            out << "," << (policies.size() > 1 ? to_string(p) + ":" : "") << to_string(t);
        }
    }
    out << "\n";
    std::vector<double> values;
    for (const auto &c : table.cells) {
        if (std::find(values.begin(), values.end(), c.value) == values.end()) {
            values.push_back(c.value);
        }
    }
    for (double v : values) {
        out << fmt_value(v);
        for (MaskPolicy p : policies) {
            const SweepCell *cell = nullptr;
            for (const auto &c : table.cells) {
                if (c.policy == p && c.value == v) {
                    cell = &c;
                }
            }
            for (ProbeTask t : table.tasks) {
                out << ",";
                if (!cell || cell->failed || !cell->accuracy.count(t)) {
                    out << "FAILED";
                } else {
                    out << fmt_accuracy(cell->accuracy.at(t));
                }
            }
        }
        out << "\n";
    }
    return out.str();
}

} // namespace masklab
