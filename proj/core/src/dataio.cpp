#include "subadapt/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "binio.hpp"
#include "subadapt/error.hpp"

namespace subadapt {

namespace {

constexpr char kMagic[4] = {'E', 'E', 'G', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kTagEpisode = 0x65706973u;  // "epis"

void validate_header(const DatasetHeader& h) {
    if (h.n_channels == 0 || h.n_timesteps == 0 || h.n_classes == 0 || h.n_subjects == 0 ||
        h.sampling_rate_hz == 0) {
        throw ValidationError("dataset header counts must all be positive");
    }
}

void validate_record(const DatasetHeader& h, const EEGRecord& rec, std::size_t index) {
    if (rec.subject_id < 0 || static_cast<std::uint32_t>(rec.subject_id) >= h.n_subjects) {
        throw ValidationError("record " + std::to_string(index) + ": subject id " +
                              std::to_string(rec.subject_id) + " outside [0, " +
                              std::to_string(h.n_subjects) + ")");
    }
    if (rec.label < 0 || static_cast<std::uint32_t>(rec.label) >= h.n_classes) {
        throw ValidationError("record " + std::to_string(index) + ": label " +
                              std::to_string(rec.label) + " outside [0, " +
                              std::to_string(h.n_classes) + ")");
    }
    if (rec.signal.ndim() != 2 || rec.signal.rows() != h.n_channels ||
        rec.signal.cols() != h.n_timesteps) {
        throw ValidationError("record " + std::to_string(index) + ": signal " +
                              shape_str(rec.signal.shape()) + " does not match header [" +
                              std::to_string(h.n_channels) + "x" +
                              std::to_string(h.n_timesteps) + "]");
    }
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& dataset) {
    const DatasetHeader& h = dataset.header;
    validate_header(h);
    if (h.n_samples != dataset.records.size()) {
        throw ValidationError("header declares " + std::to_string(h.n_samples) +
                              " samples but " + std::to_string(dataset.records.size()) +
                              " records were provided");
    }
    if (dataset.records.empty()) {
        throw ValidationError("refusing to write a dataset with no records");
    }
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        validate_record(h, dataset.records[i], i);
    }
    std::string out;
    out.append(kMagic, 4);
    binio::put_u32(out, kVersion);
    binio::put_u64(out, h.n_samples);
    binio::put_u32(out, h.n_channels);
    binio::put_u32(out, h.n_timesteps);
    binio::put_u32(out, h.n_classes);
    binio::put_u32(out, h.n_subjects);
    binio::put_u32(out, h.sampling_rate_hz);
    for (const EEGRecord& rec : dataset.records) {
        binio::put_u16(out, static_cast<std::uint16_t>(rec.subject_id));
        binio::put_u16(out, static_cast<std::uint16_t>(rec.label));
        for (double v : rec.signal.data()) binio::put_f32(out, static_cast<float>(v));
    }
    binio::write_file(path, out);
}

Dataset load_dataset(const std::string& path) {
    binio::Reader r(binio::read_file(path));
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8("dataset magic"));
    if (magic[0] != kMagic[0] || magic[1] != kMagic[1] || magic[2] != kMagic[2] ||
        magic[3] != kMagic[3]) {
        throw FormatError(std::string("bad dataset magic \"") + std::string(magic, 4) +
                          "\", expected \"EEGS\"");
    }
    Dataset ds;
    DatasetHeader& h = ds.header;
    h.version = r.u32("dataset format version");
    if (h.version != kVersion) {
        throw FormatError("unsupported dataset format version " + std::to_string(h.version));
    }
    h.n_samples = r.u64("n_samples");
    h.n_channels = r.u32("n_channels");
    h.n_timesteps = r.u32("n_timesteps");
    h.n_classes = r.u32("n_classes");
    h.n_subjects = r.u32("n_subjects");
    h.sampling_rate_hz = r.u32("sampling_rate_hz");
    if (h.n_channels == 0 || h.n_timesteps == 0 || h.n_classes == 0 || h.n_subjects == 0 ||
        h.sampling_rate_hz == 0) {
        throw FormatError("dataset header declares a zero count");
    }
    ds.records.reserve(static_cast<std::size_t>(h.n_samples));
    const std::size_t d = h.n_channels, t = h.n_timesteps;
    for (std::uint64_t i = 0; i < h.n_samples; ++i) {
        EEGRecord rec;
        rec.subject_id = static_cast<int>(r.u16("record subject id"));
        rec.label = static_cast<int>(r.u16("record label"));
        if (static_cast<std::uint32_t>(rec.subject_id) >= h.n_subjects) {
            throw ValidationError("record " + std::to_string(i) + ": subject id " +
                                  std::to_string(rec.subject_id) + " outside [0, " +
                                  std::to_string(h.n_subjects) + ")");
        }
        if (static_cast<std::uint32_t>(rec.label) >= h.n_classes) {
            throw ValidationError("record " + std::to_string(i) + ": label " +
                                  std::to_string(rec.label) + " outside [0, " +
                                  std::to_string(h.n_classes) + ")");
        }
        rec.signal = Tensor({d, t});
        for (std::size_t e = 0; e < d * t; ++e) {
            rec.signal.flat()[e] = static_cast<double>(r.f32("record signal"));
        }
        ds.records.push_back(std::move(rec));
    }
    r.expect_end("dataset");
    return ds;
}

EEGRecord crop_interval(const EEGRecord& record, double start_ms, double end_ms,
                        std::uint32_t sampling_rate_hz) {
    if (sampling_rate_hz == 0) {
        throw ContractError("sampling rate must be positive");
    }
    if (!(start_ms >= 0.0) || !(end_ms > start_ms)) {
        throw ContractError("crop needs 0 <= start < end, got [" + std::to_string(start_ms) +
                            ", " + std::to_string(end_ms) + ") ms");
    }
    const double rate = static_cast<double>(sampling_rate_hz);
    const auto start_idx = static_cast<std::size_t>(std::llround(start_ms * rate / 1000.0));
    const auto end_idx = static_cast<std::size_t>(std::llround(end_ms * rate / 1000.0));
    const std::size_t have = record.signal.cols();
    if (end_idx > have) {
        throw RangeError("crop window needs timesteps [" + std::to_string(start_idx) + ", " +
                         std::to_string(end_idx) + ") but the record has only " +
                         std::to_string(have));
    }
    if (start_idx >= end_idx) {
        throw ContractError("crop window is empty at this sampling rate");
    }
    const std::size_t d = record.signal.rows(), t = end_idx - start_idx;
    EEGRecord out;
    out.subject_id = record.subject_id;
    out.label = record.label;
    out.signal = Tensor({d, t});
    for (std::size_t c = 0; c < d; ++c) {
        const double* src = record.signal.data().data() + c * have + start_idx;
        std::copy(src, src + t, out.signal.flat().begin() + static_cast<std::ptrdiff_t>(c * t));
    }
    return out;
}

Dataset crop_dataset(const Dataset& dataset, double start_ms, double end_ms) {
    Dataset out;
    out.header = dataset.header;
    out.records.reserve(dataset.records.size());
    for (const EEGRecord& rec : dataset.records) {
        out.records.push_back(
            crop_interval(rec, start_ms, end_ms, dataset.header.sampling_rate_hz));
    }
    if (!out.records.empty()) {
        out.header.n_timesteps = static_cast<std::uint32_t>(out.records.front().signal.cols());
    }
    return out;
}

EpisodeSplit build_episode(const Dataset& dataset, int target_subject, int k,
                           std::uint64_t seed, double val_fraction, double test_fraction) {
    const DatasetHeader& h = dataset.header;
    validate_header(h);
    if (target_subject < 0 || static_cast<std::uint32_t>(target_subject) >= h.n_subjects) {
        throw IndexError("target subject " + std::to_string(target_subject) +
                         " outside [0, " + std::to_string(h.n_subjects) + ")");
    }
    if (k < 1) {
        throw ContractError("k must be at least 1, got " + std::to_string(k));
    }
    if (!(val_fraction >= 0.0 && val_fraction <= 1.0) ||
        !(test_fraction >= 0.0 && test_fraction <= 1.0)) {
        throw ContractError("validation and test fractions must lie in [0, 1]");
    }

    EpisodeSplit split;
    split.target_subject = target_subject;
    split.k = k;
    split.seed = seed;

    std::vector<std::vector<std::size_t>> per_class(h.n_classes);
    std::vector<std::vector<std::size_t>> per_subject(h.n_subjects);
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        const EEGRecord& rec = dataset.records[i];
        validate_record(h, rec, i);
        if (rec.subject_id == target_subject) {
            per_class[static_cast<std::size_t>(rec.label)].push_back(i);
        } else {
            per_subject[static_cast<std::size_t>(rec.subject_id)].push_back(i);
        }
    }

    for (std::uint32_t c = 0; c < h.n_classes; ++c) {
        std::vector<std::size_t>& pool = per_class[c];
        const std::size_t avail = pool.size();
        const auto n_val = static_cast<std::size_t>(
            std::floor(static_cast<double>(avail) * val_fraction));
        const auto n_test = static_cast<std::size_t>(
            std::floor(static_cast<double>(avail) * test_fraction));
        if (static_cast<std::size_t>(k) + n_val + n_test > avail) {
            throw CapacityError("target class " + std::to_string(c) + ": need k=" +
                                std::to_string(k) + " + " + std::to_string(n_val) + " val + " +
                                std::to_string(n_test) + " test but only " +
                                std::to_string(avail) + " samples are available");
        }
        Rng rng(mix_seed(seed, kTagEpisode, static_cast<std::uint64_t>(target_subject), c));
        rng.shuffle(pool);
        std::size_t at = 0;
        for (int i = 0; i < k; ++i) split.target_train.push_back(pool[at++]);
        for (std::size_t i = 0; i < n_val; ++i) split.target_val.push_back(pool[at++]);
        for (std::size_t i = 0; i < n_test; ++i) split.target_test.push_back(pool[at++]);
    }

    for (std::uint32_t s = 0; s < h.n_subjects; ++s) {
        if (static_cast<int>(s) == target_subject || per_subject[s].empty()) continue;
        split.source_subjects.push_back(static_cast<int>(s));
        split.source_records.push_back(std::move(per_subject[s]));
    }
    return split;
}

std::vector<std::size_t> compose_batch(const EpisodeSplit& split, const BatchSpec& spec,
                                       Rng& rng) {
    if (spec.per_source_count < 1) {
        throw ContractError("per-source sample count must be at least 1");
    }
    std::vector<std::size_t> batch;
    for (std::size_t s = 0; s < split.source_subjects.size(); ++s) {
        const std::vector<std::size_t>& pool = split.source_records[s];
        if (pool.empty()) {
            throw CapacityError("source subject " + std::to_string(split.source_subjects[s]) +
                                " has no records");
        }
        const std::size_t take = std::min(spec.per_source_count, pool.size());
        std::vector<std::size_t> draw(pool);
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(
                                          rng.bounded(static_cast<std::uint64_t>(draw.size() - i)));
            std::swap(draw[i], draw[j]);
            batch.push_back(draw[i]);
        }
    }
    if (spec.include_all_target) {
        batch.insert(batch.end(), split.target_train.begin(), split.target_train.end());
    }
    return batch;
}

Dataset import_text_dataset(const std::string& manifest_path, std::uint32_t sampling_rate_hz) {
    std::ifstream manifest(manifest_path);
    if (!manifest) {
        throw Error("cannot open manifest " + manifest_path);
    }
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

    Dataset ds;
    int max_subject = -1, max_label = -1;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream fields(line);
        std::string subject_str, label_str, rel_path;
        if (!std::getline(fields, subject_str, ',') || !std::getline(fields, label_str, ',') ||
            !std::getline(fields, rel_path)) {
            throw FormatError("manifest line " + std::to_string(line_no) +
                              " is not \"subject,label,path\"");
        }
        auto trim = [](std::string& s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        trim(subject_str);
        trim(label_str);
        trim(rel_path);
        int subject = 0, label = 0;
        try {
            subject = std::stoi(subject_str);
            label = std::stoi(label_str);
        } catch (const std::exception&) {
            throw FormatError("manifest line " + std::to_string(line_no) +
                              ": subject and label must be integers");
        }
        if (subject < 0 || label < 0) {
            throw ValidationError("manifest line " + std::to_string(line_no) +
                                  ": subject and label must be non-negative");
        }

        const std::filesystem::path full = base / rel_path;
        std::ifstream mat(full);
        if (!mat) {
            throw Error("cannot open signal file " + full.string());
        }
        std::vector<std::vector<double>> rows;
        std::string mat_line;
        while (std::getline(mat, mat_line)) {
            for (char& ch : mat_line) {
                if (ch == ',' || ch == '\t') ch = ' ';
            }
            std::istringstream vals(mat_line);
            std::vector<double> row;
            double v = 0.0;
            while (vals >> v) row.push_back(v);
            if (!vals.eof()) {
                throw FormatError("malformed number in " + full.string());
            }
            if (!row.empty()) rows.push_back(std::move(row));
        }
        if (rows.empty()) {
            throw FormatError("signal file " + full.string() + " holds no values");
        }
        const std::size_t width = rows.front().size();
        for (std::size_t rix = 1; rix < rows.size(); ++rix) {
            if (rows[rix].size() != width) {
                throw FormatError("signal file " + full.string() + " row " +
                                  std::to_string(rix) + " has " +
                                  std::to_string(rows[rix].size()) + " values, expected " +
                                  std::to_string(width));
            }
        }
        EEGRecord rec;
        rec.subject_id = subject;
        rec.label = label;
        rec.signal = Tensor({rows.size(), width});
        for (std::size_t rix = 0; rix < rows.size(); ++rix) {
            std::copy(rows[rix].begin(), rows[rix].end(),
                      rec.signal.flat().begin() + static_cast<std::ptrdiff_t>(rix * width));
        }
        if (!ds.records.empty() && !rec.signal.same_shape(ds.records.front().signal)) {
            throw ValidationError("record " + std::to_string(ds.records.size()) + " (" +
                                  full.string() + "): signal " +
                                  shape_str(rec.signal.shape()) +
                                  " differs from the first record's " +
                                  shape_str(ds.records.front().signal.shape()));
        }
        max_subject = std::max(max_subject, subject);
        max_label = std::max(max_label, label);
        ds.records.push_back(std::move(rec));
    }
    if (ds.records.empty()) {
        throw ContractError("manifest " + manifest_path + " lists no records");
    }
    ds.header.n_samples = ds.records.size();
    ds.header.n_channels = static_cast<std::uint32_t>(ds.records.front().signal.rows());
    ds.header.n_timesteps = static_cast<std::uint32_t>(ds.records.front().signal.cols());
    ds.header.n_subjects = static_cast<std::uint32_t>(max_subject + 1);
    ds.header.n_classes = static_cast<std::uint32_t>(max_label + 1);
    ds.header.sampling_rate_hz = sampling_rate_hz;
    return ds;
}

}  // namespace subadapt
