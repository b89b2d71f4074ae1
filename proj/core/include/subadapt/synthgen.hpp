#pragma once

#include <cstdint>
#include <vector>

#include "subadapt/dataio.hpp"

namespace subadapt {

struct SynthConfig {
    std::size_t n_subjects = 4;
    std::size_t n_classes = 5;
    std::size_t per_class = 30;
    std::size_t n_channels = 16;
    std::size_t n_timesteps = 500;
    double shift_strength = 1.0;
    double noise_std = 0.5;
    std::uint64_t seed = 0;
};

/// Deterministic multi-subject dataset. Each class owns a latent template
/// (sum of 3 seeded sinusoids with class-specific frequencies and per-channel
/// phases); each subject owns a mixing map M_s = I + shift*R_s with random
/// R_s entries scaled by 1/sqrt(D), plus per-channel gain and offset scaled
/// by shift. A record is gain * (M_s template) + offset + Gaussian noise.
Dataset generate(const SynthConfig& config);

struct ShiftProbeEntry {
    int subject_a = 0;
    int subject_b = 0;
    double mean_distance = 0.0;  // mean over classes of class-mean signal distance
};

/// Mean Euclidean distance between per-subject class-mean raw signals, for
/// every subject pair in ascending order. Single-subject datasets produce an
/// empty report.
std::vector<ShiftProbeEntry> shift_probe(const Dataset& dataset);

}  // namespace subadapt
