#include "masklab/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "masklab/error.hpp"

namespace masklab {

namespace {

std::uint32_t le32(const unsigned char *p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char *p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::string &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put16(std::string &out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::int16_t to_pcm16(float x) {
    const double scaled = std::nearbyint(static_cast<double>(x) * 32768.0);
    return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

} // namespace

void Waveform::validate() const {
    if (sample_rate <= 0) {
        throw Error(ErrorKind::InvalidSpec, "sample_rate must be positive");
    }
    for (float s : samples) {
        if (!std::isfinite(s) || s < -1.0f || s > 1.0f) {
            throw Error(ErrorKind::InvalidSpec, "sample outside [-1, 1]");
        }
    }
}

void quantize_pcm16(Waveform &w) {
    for (float &s : w.samples) {
        s = static_cast<float>(to_pcm16(s)) / 32768.0f;
    }
}

Waveform read_wav(const std::filesystem::path &path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    const auto *data = reinterpret_cast<const unsigned char *>(bytes.data());
    const std::size_t size = bytes.size();

    if (size < 12 || std::memcmp(data, "RIFF", 4) != 0 || std::memcmp(data + 8, "WAVE", 4) != 0) {
        throw Error(ErrorKind::MalformedWav, "missing RIFF/WAVE header in " + path.string());
    }

    bool have_fmt = false;
    bool have_data = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    Waveform w;

    // Chunks are word aligned; don't assume the canonical 44-byte layout.
    std::size_t pos = 12;
    while (pos + 8 <= size) {
        const unsigned char *chunk = data + pos;
        const std::uint32_t chunk_size = le32(chunk + 4);
        const std::size_t body = pos + 8;
        if (body + chunk_size > size) {
            throw Error(ErrorKind::MalformedWav, "truncated chunk in " + path.string());
        }
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (chunk_size < 16) {
                throw Error(ErrorKind::MalformedWav, "fmt chunk too small");
            }
            format = le16(data + body);
            channels = le16(data + body + 2);
            sample_rate = le32(data + body + 4);
            bits = le16(data + body + 14);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) {
                throw Error(ErrorKind::MalformedWav, "data chunk before fmt chunk");
            }
            if (format != 1 || bits != 16) {
                throw Error(ErrorKind::UnsupportedFormat,
                            "only 16-bit PCM is supported (format=" + std::to_string(format) +
                                ", bits=" + std::to_string(bits) + ")");
            }
            if (channels != 1) {
                throw Error(ErrorKind::UnsupportedFormat,
                            "only mono is supported (channels=" + std::to_string(channels) + ")");
            }
            if (chunk_size % 2 != 0) {
                throw Error(ErrorKind::MalformedWav, "odd-sized 16-bit data chunk");
            }
            w.samples.resize(chunk_size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                const auto v = static_cast<std::int16_t>(le16(data + body + 2 * i));
                w.samples[i] = static_cast<float>(v) / 32768.0f;
            }
            have_data = true;
        }
        pos = body + chunk_size + (chunk_size & 1u);
    }

    if (!have_fmt || !have_data) {
        throw Error(ErrorKind::MalformedWav, "missing fmt or data chunk in " + path.string());
    }
    if (sample_rate == 0) {
        throw Error(ErrorKind::MalformedWav, "zero sample rate");
    }
    w.sample_rate = static_cast<int>(sample_rate);
    return w;
}

void write_wav(const Waveform &w, const std::filesystem::path &path) {
    w.validate();
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);

    std::string out;
    out.reserve(44 + data_bytes);
    out.append("RIFF");
    put32(out, 36 + data_bytes);
    out.append("WAVE");
    out.append("fmt ");
    put32(out, 16);
    put16(out, 1); // PCM
    put16(out, 1); // mono
    put32(out, static_cast<std::uint32_t>(w.sample_rate));
    put32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
    put16(out, 2);
    put16(out, 16);
    out.append("data");
    put32(out, data_bytes);
    for (float s : w.samples) {
        put16(out, static_cast<std::uint16_t>(to_pcm16(s)));
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) {
        throw Error(ErrorKind::IoError, "write failed for " + path.string());
    }
}

} // namespace masklab
