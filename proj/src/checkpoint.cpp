#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "masklab/error.hpp"
#include "masklab/trainer.hpp"

namespace masklab {

namespace {

struct NamedTensor {
    std::string name;
    Eigen::MatrixXd *value;
};

std::vector<NamedTensor> collect(EncoderModel &model, std::optional<AdamState> &opt) {
    std::vector<NamedTensor> out;
    model.params.visit([&](const std::string &n, Eigen::MatrixXd &m) { out.push_back({n, &m}); });
    if (opt) {
        opt->m.visit([&](const std::string &n, Eigen::MatrixXd &m) { out.push_back({"adam_m." + n, &m}); });
        opt->v.visit([&](const std::string &n, Eigen::MatrixXd &m) { out.push_back({"adam_v." + n, &m}); });
    }
    return out;
}

template <typename T>
T parse_field(const std::map<std::string, std::string> &kv, const std::string &key, T (*conv)(const std::string &,
                                                                                               std::size_t *)) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw Error(ErrorKind::CorruptBlob, "manifest lacks '" + key + "'");
    }
    try {
        std::size_t used = 0;
        const T v = conv(it->second, &used);
        if (used == it->second.size()) {
            return v;
        }
    } catch (const std::logic_error &) {
    }
    throw Error(ErrorKind::CorruptBlob, "bad manifest value " + key + "='" + it->second + "'");
}

int parse_int(const std::map<std::string, std::string> &kv, const std::string &key) {
    return parse_field<int>(kv, key, [](const std::string &s, std::size_t *n) { return std::stoi(s, n); });
}

long parse_long(const std::map<std::string, std::string> &kv, const std::string &key) {
    return parse_field<long>(kv, key, [](const std::string &s, std::size_t *n) { return std::stol(s, n); });
}

double parse_real(const std::map<std::string, std::string> &kv, const std::string &key) {
    return parse_field<double>(kv, key, [](const std::string &s, std::size_t *n) { return std::stod(s, n); });
}

} // namespace

void save_checkpoint(const std::filesystem::path &path, const EncoderModel &model, const AdamState *optimizer,
                     const std::map<std::string, std::string> &extra) {
    EncoderModel copy = model;
    std::optional<AdamState> opt;
    if (optimizer) {
        opt = *optimizer;
    }
    const auto tensors = collect(copy, opt);

    std::ostringstream manifest;
    manifest.precision(17);
    const auto &c = model.config;
    manifest << "format_version=" << kCheckpointFormatVersion << '\n'
             << "encoder.input_dim=" << c.input_dim << '\n'
             << "encoder.d_model=" << c.d_model << '\n'
             << "encoder.num_layers=" << c.num_layers << '\n'
             << "encoder.num_heads=" << c.num_heads << '\n'
             << "encoder.ff_dim=" << c.ff_dim << '\n'
             << "encoder.dropout=" << c.dropout << '\n'
             << "encoder.max_frames=" << c.max_frames << '\n'
             << "optimizer=" << (opt ? "adam" : "none") << '\n'
             << "optimizer.step=" << (opt ? opt->step : 0) << '\n';
    for (const auto &[key, value] : extra) {
        if (key.find('=') != std::string::npos || value.find('\n') != std::string::npos) {
            throw Error(ErrorKind::InvalidConfig, "checkpoint metadata may not contain '=' in keys or newlines");
        }
        manifest << "meta." << key << '=' << value << '\n';
    }
    manifest << "tensor_count=" << tensors.size() << '\n';
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        manifest << "tensor." << i << '=' << tensors[i].name << ',' << tensors[i].value->rows() << ','
                 << tensors[i].value->cols() << '\n';
    }

    std::string blob;
    for (const auto &t : tensors) {
        const Eigen::MatrixXd &m = *t.value;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index col = 0; col < m.cols(); ++col) {
                const float v = static_cast<float>(m(r, col));
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                for (int b = 0; b < 4; ++b) {
                    blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
                }
            }
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    const std::string text = manifest.str();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.put('\0');
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) {
        throw Error(ErrorKind::IoError, "write failed for " + path.string());
    }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto sentinel = bytes.find('\0');
    if (sentinel == std::string::npos) {
        throw Error(ErrorKind::CorruptBlob, "no manifest sentinel in " + path.string());
    }

    LoadedCheckpoint ck;
    std::istringstream manifest(bytes.substr(0, sentinel));
    std::string line;
    while (std::getline(manifest, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            continue;
        }
        ck.manifest[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto version = ck.manifest.find("format_version");
    if (version == ck.manifest.end() || version->second != std::to_string(kCheckpointFormatVersion)) {
        throw Error(ErrorKind::VersionMismatch,
                    "unsupported checkpoint format_version '" +
                        (version == ck.manifest.end() ? std::string("<missing>") : version->second) + "'");
    }

    EncoderConfig cfg;
    cfg.input_dim = parse_int(ck.manifest, "encoder.input_dim");
    cfg.d_model = parse_int(ck.manifest, "encoder.d_model");
    cfg.num_layers = parse_int(ck.manifest, "encoder.num_layers");
    cfg.num_heads = parse_int(ck.manifest, "encoder.num_heads");
    cfg.ff_dim = parse_int(ck.manifest, "encoder.ff_dim");
    cfg.max_frames = parse_int(ck.manifest, "encoder.max_frames");
    cfg.dropout = parse_real(ck.manifest, "encoder.dropout");
    try {
        cfg.validate();
    } catch (const Error &e) {
        throw Error(ErrorKind::CorruptBlob, std::string("manifest encoder config: ") + e.what());
    }
    ck.model = {cfg, zero_params(cfg)};
    if (ck.manifest["optimizer"] == "adam") {
        ck.optimizer = init_adam(cfg);
        ck.optimizer->step = parse_long(ck.manifest, "optimizer.step");
    }

    auto tensors = collect(ck.model, ck.optimizer);
    if (parse_int(ck.manifest, "tensor_count") != static_cast<int>(tensors.size())) {
        throw Error(ErrorKind::CorruptBlob, "tensor count does not match encoder config");
    }
    std::size_t expected = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        std::ostringstream want;
        want << tensors[i].name << ',' << tensors[i].value->rows() << ',' << tensors[i].value->cols();
        const auto it = ck.manifest.find("tensor." + std::to_string(i));
        if (it == ck.manifest.end() || it->second != want.str()) {
            throw Error(ErrorKind::CorruptBlob, "tensor " + std::to_string(i) + " declaration mismatch");
        }
        expected += static_cast<std::size_t>(tensors[i].value->size()) * 4;
    }
    const std::size_t blob_size = bytes.size() - sentinel - 1;
    if (blob_size != expected) {
        throw Error(ErrorKind::CorruptBlob, "blob has " + std::to_string(blob_size) + " bytes, manifest declares " +
                                                std::to_string(expected));
    }

    const auto *p = reinterpret_cast<const unsigned char *>(bytes.data() + sentinel + 1);
    for (const auto &t : tensors) {
        Eigen::MatrixXd &m = *t.value;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                           (static_cast<std::uint32_t>(p[2]) << 16) |
                                           (static_cast<std::uint32_t>(p[3]) << 24);
                float v;
                std::memcpy(&v, &bits, 4);
                m(r, c) = v;
                p += 4;
            }
        }
    }
    return ck;
}

} // namespace masklab
