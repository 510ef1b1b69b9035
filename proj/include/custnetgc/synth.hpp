#pragma once

// Synthetic benchmark voices. HC clips are a steady harmonic tone with a
// constant envelope that fades near the end; PD clips carry a mid-utterance
// amplitude dip plus a 4-7 Hz amplitude tremor. The patterns mirror the
// energy-envelope signatures the classifier is built to separate.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "custnetgc/audio.hpp"
#include "custnetgc/common.hpp"

namespace custnetgc {

struct SynthSpec {
    int n_clips = 200;          // split evenly between the classes
    int sample_rate_hz = 8000;
    double duration_s = 3.0;
    std::uint64_t seed = 7;
    double noise_level = 0.01;
};

inline AudioClip make_synthetic_clip(const SynthSpec& spec, int index, Label label) {
    Rng rng(spec.seed ^ fnv1a64(&index, sizeof(index)) ^ fnv1a64(label_name(label)));
    const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate_hz));

    const double f0 = rng.uniform(120.0, 180.0);
    const double h2 = rng.uniform(0.4, 0.6);
    const double h3 = rng.uniform(0.2, 0.3);
    const double p1 = rng.uniform(0.0, 6.283185307179586);
    const double p2 = rng.uniform(0.0, 6.283185307179586);
    const double p3 = rng.uniform(0.0, 6.283185307179586);

    // PD-only modulation parameters
    const double dip_center = rng.uniform(1.2, 1.8);
    const double dip_width = rng.uniform(0.25, 0.45);
    const double dip_depth = rng.uniform(0.6, 0.9);
    const double tremor_hz = rng.uniform(4.0, 7.0);
    const double tremor_depth = rng.uniform(0.3, 0.5);
    const double tremor_phase = rng.uniform(0.0, 6.283185307179586);

    AudioClip clip;
    clip.id = std::string(label_name(label)) + "_" + std::to_string(index);
    clip.sample_rate_hz = spec.sample_rate_hz;
    clip.label = label;
    clip.samples.resize(n);

    constexpr double kTwoPi = 6.283185307179586476925286766559;
    const double fade_start = 0.9 * spec.duration_s;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / spec.sample_rate_hz;
        double env = 1.0;
        if (t > fade_start) {
            env *= 1.0 - 0.5 * (t - fade_start) / (spec.duration_s - fade_start);
        }
        if (label == Label::PD) {
            const double d = (t - dip_center) / dip_width;
            env *= 1.0 - dip_depth * std::exp(-0.5 * d * d);
            env *= 1.0 - tremor_depth * 0.5 * (1.0 + std::sin(kTwoPi * tremor_hz * t + tremor_phase));
        }
        const double tone = std::sin(kTwoPi * f0 * t + p1) + h2 * std::sin(kTwoPi * 2 * f0 * t + p2) +
                            h3 * std::sin(kTwoPi * 3 * f0 * t + p3);
        clip.samples[i] = env * tone * 0.5 + spec.noise_level * rng.normal();
    }
    return clip;
}

// Writes n_clips WAVs plus a manifest; returns the manifest path.
inline std::string make_synthetic_dataset(const std::string& dir, const SynthSpec& spec) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir)) throw DataError("cannot create dataset directory " + dir);

    std::vector<ManifestEntry> entries;
    for (int i = 0; i < spec.n_clips; ++i) {
        const Label label = i % 2 == 0 ? Label::HC : Label::PD;
        AudioClip clip = make_synthetic_clip(spec, i, label);
        const std::string path = dir + "/" + clip.id + ".wav";
        write_wav_pcm16(path, clip);
        ManifestEntry e;
        e.sample_id = clip.id;
        e.label = label;
        Rng meta(spec.seed ^ fnv1a64(&i, sizeof(i)) ^ 0x5eedULL);
        e.age = 40 + static_cast<int>(meta.uniform_int(40));
        e.sex = meta.uniform() < 0.5 ? Sex::M : Sex::F;
        e.path = path;
        entries.push_back(std::move(e));
    }
    const std::string manifest_path = dir + "/manifest.csv";
    write_manifest(manifest_path, entries);
    return manifest_path;
}

}  // namespace custnetgc
