#pragma once

// WAV decoding/encoding and the dataset manifest.
//
// Supported input: RIFF WAV, PCM 16/24/32-bit or IEEE float 32-bit, mono or
// stereo (stereo is averaged to mono). Output is always 16-bit PCM.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "custnetgc/common.hpp"

namespace custnetgc {

enum class Label { HC = 0, PD = 1, Unknown = 2 };

inline const char* label_name(Label l) {
    switch (l) {
        case Label::HC: return "HC";
        case Label::PD: return "PD";
        default: return "Unknown";
    }
}

struct AudioClip {
    std::string id;
    std::vector<double> samples;  // nominally in [-1, 1]
    int sample_rate_hz = 0;
    Label label = Label::Unknown;

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate_hz;
    }
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32le(std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>(v & 0xFF));
    s.push_back(static_cast<char>((v >> 8) & 0xFF));
    s.push_back(static_cast<char>((v >> 16) & 0xFF));
    s.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void put_u16le(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xFF));
    s.push_back(static_cast<char>((v >> 8) & 0xFF));
}

}  // namespace detail

// Decodes a WAV file to a mono clip. Integer samples are scaled by
// 1/2^(bits-1), so int16 32767 maps to 32767/32768.
inline AudioClip load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open audio file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw DataError("not a RIFF WAV file: " + path);
    }

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    bool have_fmt = false;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
        std::uint32_t chunk_len = detail::read_u32le(bytes.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + chunk_len > bytes.size()) chunk_len = static_cast<std::uint32_t>(bytes.size() - body);
        if (std::memcmp(tag, "fmt ", 4) == 0 && chunk_len >= 16) {
            format = detail::read_u16le(bytes.data() + body);
            channels = detail::read_u16le(bytes.data() + body + 2);
            sample_rate = detail::read_u32le(bytes.data() + body + 4);
            bits = detail::read_u16le(bytes.data() + body + 14);
            if (format == 0xFFFE && chunk_len >= 26) {
                // WAVE_FORMAT_EXTENSIBLE: first two bytes of the SubFormat
                // GUID carry the real format tag
                format = detail::read_u16le(bytes.data() + body + 24);
            }
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data = bytes.data() + body;
            data_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }

    if (!have_fmt) throw DataError("missing fmt chunk: " + path);
    if (data == nullptr) throw DataError("missing data chunk: " + path);
    if (channels < 1 || channels > 2) {
        throw DataError("unsupported channel count (" + std::to_string(channels) + "): " + path);
    }
    if (sample_rate == 0) throw DataError("zero sample rate: " + path);

    const bool is_float = (format == 3);
    if (format != 1 && !is_float) {
        throw DataError("unsupported WAV encoding (format tag " + std::to_string(format) + "): " + path);
    }
    if (is_float && bits != 32) {
        throw DataError("unsupported float bit depth (" + std::to_string(bits) + "): " + path);
    }
    if (!is_float && bits != 16 && bits != 24 && bits != 32) {
        throw DataError("unsupported PCM bit depth (" + std::to_string(bits) + "): " + path);
    }

    const std::size_t bytes_per_sample = bits / 8;
    const std::size_t frame_size = bytes_per_sample * channels;
    const std::size_t n_frames = data_len / frame_size;
    if (n_frames == 0) throw DataError("zero-length audio: " + path);

    AudioClip clip;
    clip.sample_rate_hz = static_cast<int>(sample_rate);
    clip.samples.resize(n_frames);
    for (std::size_t f = 0; f < n_frames; ++f) {
        double acc = 0.0;
        for (int ch = 0; ch < channels; ++ch) {
            const unsigned char* p = data + f * frame_size + ch * bytes_per_sample;
            double v = 0.0;
            if (is_float) {
                float fl;
                std::memcpy(&fl, p, 4);
                v = fl;
            } else if (bits == 16) {
                auto s = static_cast<std::int16_t>(detail::read_u16le(p));
                v = s / 32768.0;
            } else if (bits == 24) {
                std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
                if (s & 0x800000) s |= ~0xFFFFFF;  // sign extend
                v = s / 8388608.0;
            } else {
                auto s = static_cast<std::int32_t>(detail::read_u32le(p));
                v = s / 2147483648.0;
            }
            acc += v;
        }
        clip.samples[f] = acc / channels;
    }
    return clip;
}

// Writes a mono clip as 16-bit PCM. Samples are clamped to [-1, 1] and
// rounded with round-half-away scaling by 32767.
inline void write_wav_pcm16(const std::string& path, const AudioClip& clip) {
    if (clip.sample_rate_hz <= 0) throw DataError("invalid sample rate writing " + path);
    std::string out;
    out.reserve(44 + clip.samples.size() * 2);
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
    out += "RIFF";
    detail::put_u32le(out, 36 + data_bytes);
    out += "WAVEfmt ";
    detail::put_u32le(out, 16);
    detail::put_u16le(out, 1);  // PCM
    detail::put_u16le(out, 1);  // mono
    detail::put_u32le(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
    detail::put_u32le(out, static_cast<std::uint32_t>(clip.sample_rate_hz * 2));
    detail::put_u16le(out, 2);
    detail::put_u16le(out, 16);
    out += "data";
    detail::put_u32le(out, data_bytes);
    for (double s : clip.samples) {
        double v = std::clamp(s, -1.0, 1.0) * 32767.0;
        auto q = static_cast<std::int16_t>(std::lround(v));
        detail::put_u16le(out, static_cast<std::uint16_t>(q));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write to " + path);
}

enum class Sex { M, F };

struct ManifestEntry {
    std::string sample_id;
    Label label = Label::Unknown;
    int age = 0;
    Sex sex = Sex::M;
    std::string path;
};

namespace detail {

// Minimal CSV: comma-separated, optional double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

// Reads `sample_id,label,age,sex,path`. Labels must be PD or HC; the
// dataset's original PwPD spelling maps to PD.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty manifest: " + path);
    auto header = detail::split_csv_line(line);
    const std::vector<std::string> expected = {"sample_id", "label", "age", "sex", "path"};
    if (header.size() != expected.size() ||
        !std::equal(header.begin(), header.end(), expected.begin())) {
        throw DataError("bad manifest header in " + path +
                        " (want sample_id,label,age,sex,path)");
    }

    std::vector<ManifestEntry> entries;
    std::vector<std::string> seen_ids;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != 5) {
            throw DataError("manifest " + path + " line " + std::to_string(line_no) +
                            ": expected 5 fields, got " + std::to_string(f.size()));
        }
        ManifestEntry e;
        e.sample_id = f[0];
        if (f[1] == "PD" || f[1] == "PwPD") {
            e.label = Label::PD;
        } else if (f[1] == "HC") {
            e.label = Label::HC;
        } else {
            throw DataError("manifest " + path + " line " + std::to_string(line_no) +
                            ": label must be PD or HC, got '" + f[1] + "'");
        }
        e.age = std::atoi(f[2].c_str());
        if (f[3] == "M") {
            e.sex = Sex::M;
        } else if (f[3] == "F") {
            e.sex = Sex::F;
        } else {
            throw DataError("manifest " + path + " line " + std::to_string(line_no) +
                            ": sex must be M or F, got '" + f[3] + "'");
        }
        e.path = f[4];
        if (std::find(seen_ids.begin(), seen_ids.end(), e.sample_id) != seen_ids.end()) {
            throw DataError("duplicate sample_id '" + e.sample_id + "' in " + path);
        }
        seen_ids.push_back(e.sample_id);
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw DataError("manifest has no entries: " + path);
    return entries;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << "sample_id,label,age,sex,path\n";
    for (const auto& e : entries) {
        out << e.sample_id << ',' << label_name(e.label) << ',' << e.age << ','
            << (e.sex == Sex::M ? 'M' : 'F') << ',' << e.path << '\n';
    }
}

}  // namespace custnetgc
