#include "subadapt/synthgen.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "subadapt/error.hpp"
#include "subadapt/rng.hpp"

namespace subadapt {

namespace {

constexpr std::uint64_t kTagTemplate = 0x74706c74u;  // "tplt"
constexpr std::uint64_t kTagSubject = 0x73756266u;   // "subf"
constexpr std::uint64_t kTagNoise = 0x6e6f6973u;     // "nois"
constexpr int kSinusoids = 3;

void validate_config(const SynthConfig& c) {
    if (c.n_subjects == 0 || c.n_classes == 0 || c.per_class == 0 || c.n_channels == 0 ||
        c.n_timesteps == 0) {
        throw ContractError("synthetic generator counts must all be positive");
    }
    if (!(c.shift_strength >= 0.0) || !(c.noise_std >= 0.0)) {
        throw ContractError("shift strength and noise level must be non-negative");
    }
}

// Sum of kSinusoids seeded sine waves, scaled so the template stays within
// [-1, 1]; noise_std is then expressed on the template's own scale.
// Frequencies are cycles per record so any crop window still sees
// fractional-to-multiple periods.
Tensor class_template(const SynthConfig& c, std::size_t cls) {
    Rng rng(mix_seed(c.seed, kTagTemplate, cls));
    double freq[kSinusoids];
    for (double& f : freq) f = rng.uniform(2.0, 12.0);
    Tensor phase({static_cast<std::size_t>(kSinusoids), c.n_channels});
    for (std::size_t i = 0; i < phase.numel(); ++i) {
        phase.flat()[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    Tensor tpl({c.n_channels, c.n_timesteps});
    for (std::size_t d = 0; d < c.n_channels; ++d) {
        for (std::size_t t = 0; t < c.n_timesteps; ++t) {
            const double tau = static_cast<double>(t) / static_cast<double>(c.n_timesteps);
            double v = 0.0;
            for (int j = 0; j < kSinusoids; ++j) {
                v += std::sin(2.0 * std::numbers::pi * freq[j] * tau +
                              phase.at(static_cast<std::size_t>(j), d));
            }
            tpl.at(d, t) = v / static_cast<double>(kSinusoids);
        }
    }
    return tpl;
}

struct SubjectMap {
    Tensor mix;     // [D x D], identity plus scaled random matrix
    Tensor gain;    // [D]
    Tensor offset;  // [D]
};

SubjectMap subject_map(const SynthConfig& c, std::size_t subject) {
    Rng rng(mix_seed(c.seed, kTagSubject, subject));
    const std::size_t d = c.n_channels;
    SubjectMap m;
    m.mix = Tensor({d, d});
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            m.mix.at(i, j) = (i == j ? 1.0 : 0.0) + c.shift_strength * scale * rng.normal();
        }
    }
    m.gain = Tensor({d});
    for (std::size_t i = 0; i < d; ++i) {
        m.gain.flat()[i] = 1.0 + c.shift_strength * 0.2 * rng.normal();
    }
    m.offset = Tensor({d});
    for (std::size_t i = 0; i < d; ++i) {
        m.offset.flat()[i] = c.shift_strength * 0.5 * rng.normal();
    }
    return m;
}

}  // namespace

Dataset generate(const SynthConfig& config) {
    validate_config(config);
    const std::size_t s_count = config.n_subjects, k_count = config.n_classes;
    const std::size_t d = config.n_channels, t_len = config.n_timesteps;

    std::vector<Tensor> templates;
    templates.reserve(k_count);
    for (std::size_t c = 0; c < k_count; ++c) templates.push_back(class_template(config, c));

    Dataset ds;
    ds.header.n_samples = s_count * k_count * config.per_class;
    ds.header.n_channels = static_cast<std::uint32_t>(d);
    ds.header.n_timesteps = static_cast<std::uint32_t>(t_len);
    ds.header.n_classes = static_cast<std::uint32_t>(k_count);
    ds.header.n_subjects = static_cast<std::uint32_t>(s_count);
    ds.header.sampling_rate_hz = 1000;
    ds.records.reserve(static_cast<std::size_t>(ds.header.n_samples));

    for (std::size_t s = 0; s < s_count; ++s) {
        const SubjectMap map = subject_map(config, s);
        for (std::size_t c = 0; c < k_count; ++c) {
            // Mixed template is shared by every record of this (subject, class).
            Tensor mixed({d, t_len});
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t t = 0; t < t_len; ++t) {
                    double v = 0.0;
                    for (std::size_t e = 0; e < d; ++e) {
                        v += map.mix.data()[i * d + e] * templates[c].data()[e * t_len + t];
                    }
                    mixed.at(i, t) = map.gain.data()[i] * v + map.offset.data()[i];
                }
            }
            for (std::size_t inst = 0; inst < config.per_class; ++inst) {
                Rng noise(mix_seed(mix_seed(config.seed, kTagNoise, s, c), inst));
                EEGRecord rec;
                rec.subject_id = static_cast<int>(s);
                rec.label = static_cast<int>(c);
                rec.signal = Tensor({d, t_len});
                for (std::size_t i = 0; i < rec.signal.numel(); ++i) {
                    rec.signal.flat()[i] = mixed.data()[i] + config.noise_std * noise.normal();
                }
                ds.records.push_back(std::move(rec));
            }
        }
    }
    return ds;
}

std::vector<ShiftProbeEntry> shift_probe(const Dataset& dataset) {
    const std::size_t s_count = dataset.header.n_subjects;
    const std::size_t k_count = dataset.header.n_classes;
    const std::size_t numel = static_cast<std::size_t>(dataset.header.n_channels) *
                              dataset.header.n_timesteps;

    // Class-mean raw signal per (subject, class) cell.
    std::vector<std::vector<std::vector<double>>> sums(
        s_count, std::vector<std::vector<double>>(k_count));
    std::vector<std::vector<std::size_t>> counts(s_count, std::vector<std::size_t>(k_count, 0));
    for (const EEGRecord& rec : dataset.records) {
        const auto s = static_cast<std::size_t>(rec.subject_id);
        const auto c = static_cast<std::size_t>(rec.label);
        if (sums[s][c].empty()) sums[s][c].assign(numel, 0.0);
        for (std::size_t i = 0; i < numel; ++i) sums[s][c][i] += rec.signal.data()[i];
        ++counts[s][c];
    }

    std::vector<ShiftProbeEntry> report;
    for (std::size_t a = 0; a < s_count; ++a) {
        for (std::size_t b = a + 1; b < s_count; ++b) {
            double total = 0.0;
            std::size_t shared = 0;
            for (std::size_t c = 0; c < k_count; ++c) {
                if (counts[a][c] == 0 || counts[b][c] == 0) continue;
                double sq = 0.0;
                for (std::size_t i = 0; i < numel; ++i) {
                    const double diff = sums[a][c][i] / static_cast<double>(counts[a][c]) -
                                        sums[b][c][i] / static_cast<double>(counts[b][c]);
                    sq += diff * diff;
                }
                total += std::sqrt(sq);
                ++shared;
            }
            report.push_back({static_cast<int>(a), static_cast<int>(b),
                              shared == 0 ? 0.0 : total / static_cast<double>(shared)});
        }
    }
    return report;
}

}  // namespace subadapt
