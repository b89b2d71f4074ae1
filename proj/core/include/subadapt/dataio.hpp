#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subadapt/rng.hpp"
#include "subadapt/tensor.hpp"

namespace subadapt {

struct DatasetHeader {
    std::uint32_t version = 1;
    std::uint64_t n_samples = 0;
    std::uint32_t n_channels = 0;
    std::uint32_t n_timesteps = 0;
    std::uint32_t n_classes = 0;
    std::uint32_t n_subjects = 0;
    std::uint32_t sampling_rate_hz = 1000;
};

struct EEGRecord {
    int subject_id = 0;
    int label = 0;
    Tensor signal;  // [channels x timesteps], channel rows contiguous
};

struct Dataset {
    DatasetHeader header;
    std::vector<EEGRecord> records;
};

/// Writes the "EEGS" binary format: magic, header fields as little-endian
/// unsigned integers in declared order, then per record subject_id (u16),
/// label (u16), and the signal as IEEE-754 32-bit little-endian values in
/// channel-major order. Signals are quantized to 32-bit on write.
void write_dataset(const std::string& path, const Dataset& dataset);

/// Reads "EEGS". Bad magic or version: FormatError. Truncated or oversized
/// payload: LengthError. Subject or label outside the header ranges:
/// ValidationError naming the record index.
Dataset load_dataset(const std::string& path);

/// Cuts the half-open index window [start_ms*rate/1000, end_ms*rate/1000)
/// out of the record's time axis. A window reaching past the recording
/// raises RangeError naming required vs available timesteps.
EEGRecord crop_interval(const EEGRecord& record, double start_ms, double end_ms,
                        std::uint32_t sampling_rate_hz);

/// crop_interval over every record, with the header timestep count updated.
Dataset crop_dataset(const Dataset& dataset, double start_ms, double end_ms);

/// One concrete train/evaluate partition. Holds indices into the dataset's
/// record vector, never copies of the records.
struct EpisodeSplit {
    int target_subject = 0;
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<int> source_subjects;                      // ascending ids
    std::vector<std::vector<std::size_t>> source_records;  // aligned with source_subjects
    std::vector<std::size_t> target_train;                 // k per class
    std::vector<std::size_t> target_val;
    std::vector<std::size_t> target_test;
};

/// Partitions the target subject's records per class: k into the train set
/// (seeded uniform choice), then floor(pool*val_fraction) validation and
/// floor(pool*test_fraction) test samples; the remainder is discarded. Every
/// non-target record lands in its subject's source set. Insufficient
/// per-class capacity raises CapacityError naming the class and counts.
EpisodeSplit build_episode(const Dataset& dataset, int target_subject, int k,
                           std::uint64_t seed, double val_fraction = 1.0 / 6.0,
                           double test_fraction = 1.0 / 6.0);

struct BatchSpec {
    std::size_t per_source_count = 200;
    bool include_all_target = true;
    std::uint64_t seed = 0;
};

/// Draws min(per_source_count, available) records without replacement from
/// each source subject in ascending subject order, then appends the whole
/// target train set. Returns record indices. The rng evolves across calls,
/// so each step sees a fresh draw.
std::vector<std::size_t> compose_batch(const EpisodeSplit& split, const BatchSpec& spec,
                                       Rng& rng);

/// Converts a manifest of delimited-text signal matrices into a Dataset.
/// Each manifest line reads "subject,label,path" with the path taken
/// relative to the manifest's directory; each matrix file holds one channel
/// per row. Subject and class counts are inferred from the highest ids seen.
Dataset import_text_dataset(const std::string& manifest_path,
                            std::uint32_t sampling_rate_hz = 1000);

}  // namespace subadapt
