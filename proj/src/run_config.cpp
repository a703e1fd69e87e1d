#include "masklab/run_config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "masklab/error.hpp"
#include "masklab/random.hpp"

namespace masklab {

namespace {

[[noreturn]] void bad_value(const std::string &key, const std::string &value, const std::string &why = "") {
    std::string msg = "bad value '" + value + "' for " + key;
    if (!why.empty()) {
        msg += ": " + why;
    }
    throw Error(ErrorKind::ConfigError, msg);
}

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T> T parse_integer(const std::string &key, const std::string &value) {
    T out{};
    const char *end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        bad_value(key, value, "expected an integer");
    }
    return out;
}

double parse_real(const std::string &key, const std::string &value) {
    errno = 0;
    char *end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size() || errno == ERANGE) {
        bad_value(key, value, "expected a number");
    }
    return v;
}

bool parse_flag(const std::string &key, const std::string &value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") {
        return true;
    }
    if (value == "false" || value == "0" || value == "no" || value == "off") {
        return false;
    }
    bad_value(key, value, "expected true or false");
}

std::vector<std::string> split_list(const std::string &value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::string real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string flag(bool v) { return v ? "true" : "false"; }

template <typename T, typename F> std::string join(const std::vector<T> &items, F fmt) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += (i ? "," : "") + fmt(items[i]);
    }
    return out;
}

struct Entry {
    std::function<void(RunConfig &, const std::string &, const std::string &)> set;
    std::function<std::string(const RunConfig &)> get;
};

template <typename Acc> Entry int_entry(Acc acc) {
    return {[acc](RunConfig &c, const std::string &k, const std::string &v) { acc(c) = parse_integer<int>(k, v); },
            [acc](const RunConfig &c) { return std::to_string(acc(const_cast<RunConfig &>(c))); }};
}

template <typename Acc> Entry real_entry(Acc acc) {
    return {[acc](RunConfig &c, const std::string &k, const std::string &v) { acc(c) = parse_real(k, v); },
            [acc](const RunConfig &c) { return real(acc(const_cast<RunConfig &>(c))); }};
}

template <typename Acc> Entry flag_entry(Acc acc) {
    return {[acc](RunConfig &c, const std::string &k, const std::string &v) { acc(c) = parse_flag(k, v); },
            [acc](const RunConfig &c) { return flag(acc(const_cast<RunConfig &>(c))); }};
}

#define FIELD(PATH) [](RunConfig &c) -> auto & { return c.PATH; }

// Enum parsers throw InvalidConfig; rethrown as ConfigError by set().
const std::map<std::string, Entry> &registry() {
    static const std::map<std::string, Entry> table = {
        {"corpus.num_utterances", int_entry(FIELD(corpus.num_utterances))},
        {"corpus.num_phoneme_classes", int_entry(FIELD(corpus.num_phoneme_classes))},
        {"corpus.num_speakers", int_entry(FIELD(corpus.num_speakers))},
        {"corpus.phoneme_duration_min", int_entry(FIELD(corpus.phoneme_duration.lo))},
        {"corpus.phoneme_duration_max", int_entry(FIELD(corpus.phoneme_duration.hi))},
        {"corpus.silence_gap_min", int_entry(FIELD(corpus.silence_gap.lo))},
        {"corpus.silence_gap_max", int_entry(FIELD(corpus.silence_gap.hi))},
        {"corpus.segments_min", int_entry(FIELD(corpus.segments_per_utterance.lo))},
        {"corpus.segments_max", int_entry(FIELD(corpus.segments_per_utterance.hi))},
        {"corpus.phonemes_per_segment_min", int_entry(FIELD(corpus.phonemes_per_segment.lo))},
        {"corpus.phonemes_per_segment_max", int_entry(FIELD(corpus.phonemes_per_segment.hi))},
        {"corpus.successors", int_entry(FIELD(corpus.successors))},
        {"corpus.noise_level", real_entry(FIELD(corpus.noise_level))},
        {"corpus.speech_level", real_entry(FIELD(corpus.speech_level))},
        {"corpus.sample_rate", int_entry(FIELD(corpus.sample_rate))},

        {"features.frame_length", int_entry(FIELD(features.frame_length))},
        {"features.hop", int_entry(FIELD(features.hop))},
        {"features.fft_size", int_entry(FIELD(features.fft_size))},
        {"features.num_mel", int_entry(FIELD(features.num_mel))},
        {"features.mel_low", real_entry(FIELD(features.mel_low))},
        {"features.mel_high", real_entry(FIELD(features.mel_high))},
        {"features.log_floor", real_entry(FIELD(features.log_floor))},
        {"features.normalize", flag_entry(FIELD(features.normalize))},

        {"vad.theta", real_entry(FIELD(vad.theta))},
        {"vad.hangover", int_entry(FIELD(vad.hangover))},
        {"vad.min_speech_run", int_entry(FIELD(vad.min_speech_run))},

        {"mask.policy",
         {[](RunConfig &c, const std::string &, const std::string &v) { c.mask.policy = parse_mask_policy(v); },
          [](const RunConfig &c) { return to_string(c.mask.policy); }}},
        {"mask.span", int_entry(FIELD(mask.span))},
        {"mask.budget", real_entry(FIELD(mask.budget))},
        {"mask.rho", real_entry(FIELD(mask.rho))},
        {"mask.mode",
         {[](RunConfig &c, const std::string &, const std::string &v) { c.mask.mode = parse_mask_mode(v); },
          [](const RunConfig &c) { return to_string(c.mask.mode); }}},
        {"mask.include_silence_phones", flag_entry(FIELD(mask.include_silence_phones))},

        {"model.d_model", int_entry(FIELD(encoder.d_model))},
        {"model.num_layers", int_entry(FIELD(encoder.num_layers))},
        {"model.num_heads", int_entry(FIELD(encoder.num_heads))},
        {"model.ff_dim", int_entry(FIELD(encoder.ff_dim))},
        {"model.dropout", real_entry(FIELD(encoder.dropout))},
        {"model.max_frames", int_entry(FIELD(encoder.max_frames))},

        {"train.learning_rate", real_entry(FIELD(train.learning_rate))},
        {"train.adam_beta1", real_entry(FIELD(train.adam_beta1))},
        {"train.adam_beta2", real_entry(FIELD(train.adam_beta2))},
        {"train.adam_eps", real_entry(FIELD(train.adam_eps))},
        {"train.batch_size", int_entry(FIELD(train.batch_size))},
        {"train.steps", int_entry(FIELD(train.num_steps))},
        {"train.loss_scope",
         {[](RunConfig &c, const std::string &, const std::string &v) { c.train.loss_scope = parse_loss_scope(v); },
          [](const RunConfig &c) { return to_string(c.train.loss_scope); }}},

        {"probe.task",
         {[](RunConfig &c, const std::string &, const std::string &v) { c.probe.task = parse_probe_task(v); },
          [](const RunConfig &c) { return to_string(c.probe.task); }}},
        {"probe.hidden_dim", int_entry(FIELD(probe.hidden_dim))},
        {"probe.learning_rate", real_entry(FIELD(probe.learning_rate))},
        {"probe.steps", int_entry(FIELD(probe.num_steps))},
        {"probe.batch_size", int_entry(FIELD(probe.batch_size))},
        {"probe.train_fraction", real_entry(FIELD(probe_train_fraction))},

        {"sweep.parameter",
         {[](RunConfig &c, const std::string &, const std::string &v) { c.sweep.parameter = v; },
          [](const RunConfig &c) { return c.sweep.parameter; }}},
        {"sweep.values",
         {[](RunConfig &c, const std::string &k, const std::string &v) {
              c.sweep.values.clear();
              for (const auto &item : split_list(v)) {
                  c.sweep.values.push_back(parse_real(k, item));
              }
          },
          [](const RunConfig &c) { return join(c.sweep.values, real); }}},
        {"sweep.policies",
         {[](RunConfig &c, const std::string &, const std::string &v) {
              c.sweep.policies.clear();
              for (const auto &item : split_list(v)) {
                  c.sweep.policies.push_back(parse_mask_policy(item));
              }
          },
          [](const RunConfig &c) {
              return join(c.sweep.policies, [](MaskPolicy p) { return to_string(p); });
          }}},
        {"sweep.tasks",
         {[](RunConfig &c, const std::string &, const std::string &v) {
              c.sweep.tasks.clear();
              for (const auto &item : split_list(v)) {
                  c.sweep.tasks.push_back(parse_probe_task(item));
              }
          },
          [](const RunConfig &c) {
              return join(c.sweep.tasks, [](ProbeTask t) { return to_string(t); });
          }}},
        {"sweep.pretrain_steps", int_entry(FIELD(sweep.pretrain_steps))},
        {"sweep.probe_steps", int_entry(FIELD(sweep.probe_steps))},
    };
    return table;
}

#undef FIELD

} // namespace

void SweepSpec::validate() const {
    if (parameter != "rho" && parameter != "budget" && parameter != "span") {
        throw Error(ErrorKind::ConfigError, "sweep.parameter must be rho, budget or span");
    }
    if (values.empty() || policies.empty() || tasks.empty()) {
        throw Error(ErrorKind::ConfigError, "sweep needs at least one value, policy and task");
    }
    for (double v : values) {
        const bool ok = parameter == "span" ? (v >= 1.0 && v == std::floor(v)) : (v >= 0.0 && v <= 1.0);
        if (!ok) {
            throw Error(ErrorKind::ConfigError, "sweep value " + real(v) + " is not a valid " + parameter);
        }
    }
    if (pretrain_steps < 1 || probe_steps < 1) {
        throw Error(ErrorKind::ConfigError, "sweep step counts must be >= 1");
    }
}

void RunConfig::set(const std::string &key, const std::string &value) {
    const std::string k = trim(key);
    const std::string v = trim(value);
    if (k == "seed") {
        seed = parse_integer<std::uint64_t>(k, v);
        return;
    }
    if (k == "out") {
        out_dir = v;
        return;
    }
    const auto &table = registry();
    const auto it = table.find(k);
    if (it == table.end()) {
        throw Error(ErrorKind::ConfigError, "unknown config key '" + k + "'");
    }
    try {
        it->second.set(*this, k, v);
    } catch (const Error &e) {
        if (e.kind() == ErrorKind::ConfigError) {
            throw;
        }
        bad_value(k, v, e.what());
    }
}

void RunConfig::load_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::ConfigError, "cannot open config " + path.string());
    }
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) {
            line.resize(hash_pos);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::ConfigError,
                        path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        }
        set(line.substr(0, eq), line.substr(eq + 1));
    }
}

void RunConfig::resolve() {
    corpus.seed = derive_seed(seed, "corpus");
    corpus.frame_length = features.frame_length;
    corpus.hop = features.hop;
    mask.seed = derive_seed(seed, "mask");
    train.seed = derive_seed(seed, "train");
    probe.seed = derive_seed(seed, "probe");
    encoder.input_dim = features.num_mel;
}

void RunConfig::validate() const {
    try {
        corpus.validate();
        features.validate(corpus.sample_rate);
        vad.validate();
        mask.validate();
        encoder.validate();
        train.validate();
        probe.validate();
    } catch (const Error &e) {
        throw Error(ErrorKind::ConfigError, e.what());
    }
    if (!(probe_train_fraction > 0.0 && probe_train_fraction < 1.0)) {
        throw Error(ErrorKind::ConfigError, "probe.train_fraction must be in (0, 1)");
    }
    sweep.validate();
}

std::string RunConfig::dump(const std::vector<std::string> &sections) const {
    std::string out;
    for (const auto &[key, entry] : registry()) {
        const std::string section = key.substr(0, key.find('.'));
        if (!sections.empty() && std::find(sections.begin(), sections.end(), section) == sections.end()) {
            continue;
        }
        out += key + "=" + entry.get(*this) + "\n";
    }
    return out;
}

std::uint64_t RunConfig::hash(const std::vector<std::string> &sections) const {
    return fnv1a("seed=" + std::to_string(seed) + "\n" + dump(sections));
}

std::uint64_t RunConfig::split_seed() const { return derive_seed(seed, "split"); }

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out{"seed", "out"};
    for (const auto &[key, entry] : registry()) {
        out.push_back(key);
    }
    return out;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace masklab
