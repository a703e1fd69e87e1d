// masklab command-line entry point.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>

#include "masklab/error.hpp"
#include "masklab/pipeline.hpp"
#include "masklab/run_config.hpp"

using namespace masklab;

namespace {

constexpr int kExitStage = 1;
constexpr int kExitConfig = 2;

struct Overrides {
    std::vector<std::pair<std::string, std::string>> items;

    template <typename T> void add(const std::string &key, const std::optional<T> &v) {
        if (v) {
            if constexpr (std::is_same_v<T, std::string>) {
                items.emplace_back(key, *v);
            } else if constexpr (std::is_floating_point_v<T>) {
                char buf[40];
                std::snprintf(buf, sizeof(buf), "%.17g", *v);
                items.emplace_back(key, buf);
            } else {
                items.emplace_back(key, std::to_string(*v));
            }
        }
    }
};

void report(const StageResult &r) {
    if (r.skipped) {
        std::cout << r.stage << ": up to date\n";
    }
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Masked-prediction speech representation lab"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool force = false;
    std::vector<std::string> settings;
    app.add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "global seed");
    app.add_option("--out", out_dir, "output directory (default: $MASKLAB_OUT or masklab_out)");
    app.add_flag("--force", force, "rerun stages even when outputs are up to date");
    app.add_option("--set", settings, "override a setting, e.g. --set train.steps=500");

    Overrides ov;

    auto *synth = app.add_subcommand("synth", "write the synthetic corpus");
    std::optional<int> utterances;
    synth->add_option("--utterances", utterances, "number of utterances");

    auto *featurize = app.add_subcommand("featurize", "log-mel features for the corpus or one WAV");
    std::string feat_in, feat_out;
    featurize->add_option("--in", feat_in, "input WAV")->check(CLI::ExistingFile);
    featurize->add_option("--out", feat_out, "output feature file");

    auto *vad = app.add_subcommand("vad", "frame-level speech labels for the corpus or one WAV");
    std::string vad_in, vad_out;
    std::optional<double> theta;
    vad->add_option("--in", vad_in, "input WAV")->check(CLI::ExistingFile);
    vad->add_option("--out", vad_out, "output label file");
    vad->add_option("--theta", theta, "energy threshold in dBFS");

    auto *align = app.add_subcommand("align-check", "validate corpus alignments against frame counts");

    auto *mask = app.add_subcommand("mask", "generate masks for every corpus utterance");
    std::optional<std::string> policy, mode;
    std::optional<double> rho, budget;
    std::optional<int> span;
    mask->add_option("--policy", policy, "random, speech, phoneme or combined");
    mask->add_option("--rho", rho, "speech share of span starts");
    mask->add_option("--budget", budget, "masked fraction target");
    mask->add_option("--span", span, "span width in frames");
    mask->add_option("--mode", mode, "zero or stochastic");

    auto *pretrain = app.add_subcommand("pretrain", "masked-reconstruction pre-training");
    std::string corpus_dir, ckpt_out, resume;
    std::optional<int> steps;
    pretrain->add_option("--corpus", corpus_dir, "corpus directory (default: synthesize)");
    pretrain->add_option("--policy", policy, "mask policy");
    pretrain->add_option("--rho", rho, "speech share of span starts");
    pretrain->add_option("--steps", steps, "total training steps");
    pretrain->add_option("--out", ckpt_out, "checkpoint path");
    pretrain->add_option("--resume", resume, "continue from this checkpoint")->check(CLI::ExistingFile);

    auto *probe = app.add_subcommand("probe", "train a probe on frozen representations");
    std::string ckpt;
    std::optional<std::string> task;
    std::optional<int> probe_steps;
    probe->add_option("--ckpt", ckpt, "checkpoint (default: randomly initialized encoder)")
        ->check(CLI::ExistingFile);
    probe->add_option("--task", task, "Phoneme-L, Phoneme-1H, Speaker-F or Speaker-U");
    probe->add_option("--corpus", corpus_dir, "corpus directory");
    probe->add_option("--steps", probe_steps, "probe training steps");

    auto *analyze = app.add_subcommand("analyze", "spectrogram dumps and sharpness for one utterance");
    std::string utt;
    analyze->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    analyze->add_option("--utt", utt, "utterance id")->required();
    analyze->add_option("--policy", policy, "mask policy");
    analyze->add_option("--corpus", corpus_dir, "corpus directory");

    auto *sweep = app.add_subcommand("sweep", "pre-train and probe over a grid of mask settings");
    std::optional<std::string> param, values, policies, tasks;
    std::optional<int> sweep_pretrain, sweep_probe;
    sweep->add_option("--param", param, "rho, budget or span");
    sweep->add_option("--values", values, "comma-separated grid");
    sweep->add_option("--policies", policies, "comma-separated policies");
    sweep->add_option("--tasks", tasks, "comma-separated probe tasks");
    sweep->add_option("--pretrain-steps", sweep_pretrain, "pre-training steps per cell");
    sweep->add_option("--probe-steps", sweep_probe, "probe steps per cell");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        RunConfig cfg;
        if (const char *env = std::getenv("MASKLAB_OUT"); env && *env) {
            cfg.out_dir = env;
        }
        if (!config_path.empty()) {
            cfg.load_file(config_path);
        }
        for (const auto &s : settings) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) {
                throw Error(ErrorKind::ConfigError, "--set expects key=value, got '" + s + "'");
            }
            cfg.set(s.substr(0, eq), s.substr(eq + 1));
        }
        if (seed) {
            cfg.seed = *seed;
        }
        if (!out_dir.empty()) {
            cfg.out_dir = out_dir;
        }
        cfg.force = force;

        ov.add("corpus.num_utterances", utterances);
        ov.add("vad.theta", theta);
        ov.add("mask.policy", policy);
        ov.add("mask.mode", mode);
        ov.add("mask.rho", rho);
        ov.add("mask.budget", budget);
        ov.add("mask.span", span);
        ov.add("train.steps", steps);
        ov.add("probe.task", task);
        ov.add("probe.steps", probe_steps);
        ov.add("sweep.parameter", param);
        ov.add("sweep.values", values);
        ov.add("sweep.policies", policies);
        ov.add("sweep.tasks", tasks);
        ov.add("sweep.pretrain_steps", sweep_pretrain);
        ov.add("sweep.probe_steps", sweep_probe);
        for (const auto &[k, v] : ov.items) {
            cfg.set(k, v);
        }

        if (featurize->parsed() && !feat_in.empty()) {
            if (feat_out.empty()) {
                throw Error(ErrorKind::ConfigError, "featurize --in needs --out");
            }
            cfg.resolve();
            cfg.validate();
            featurize_file(feat_in, feat_out, cfg);
            return 0;
        }
        if (vad->parsed() && !vad_in.empty()) {
            if (vad_out.empty()) {
                throw Error(ErrorKind::ConfigError, "vad --in needs --out");
            }
            cfg.resolve();
            cfg.validate();
            vad_file(vad_in, vad_out, cfg);
            return 0;
        }

        Pipeline pipeline(cfg, std::cerr);
        if (synth->parsed()) {
            report(pipeline.synth());
        } else if (featurize->parsed()) {
            report(pipeline.featurize());
        } else if (vad->parsed()) {
            report(pipeline.vad());
        } else if (align->parsed()) {
            report(pipeline.align_check());
        } else if (mask->parsed()) {
            report(pipeline.mask());
        } else if (pretrain->parsed()) {
            report(pipeline.pretrain({corpus_dir, ckpt_out, resume}));
        } else if (probe->parsed()) {
            report(pipeline.probe({ckpt, corpus_dir, {}}));
        } else if (analyze->parsed()) {
            report(pipeline.analyze({ckpt, utt, corpus_dir, {}}));
        } else if (sweep->parsed()) {
            const SweepTable table = pipeline.sweep();
            std::cout << format_sweep_csv(table, pipeline.config().sweep.policies);
            for (const auto &cell : table.cells) {
                if (cell.failed) {
                    return kExitStage;
                }
            }
        }
        return 0;
    } catch (const Error &e) {
        const bool config = e.kind() == ErrorKind::ConfigError || e.kind() == ErrorKind::InvalidConfig;
        std::cerr << "masklab: " << e.what() << "\n";
        return config ? kExitConfig : kExitStage;
    } catch (const std::exception &e) {
        std::cerr << "masklab: stage failure: " << e.what() << "\n";
        return kExitStage;
    }
}
