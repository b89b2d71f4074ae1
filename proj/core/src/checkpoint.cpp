#include "subadapt/checkpoint.hpp"

#include <cstdint>
#include <string>

#include "binio.hpp"
#include "subadapt/error.hpp"

namespace subadapt {

namespace {
constexpr char kMagic[4] = {'M', 'A', 'D', 'P'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
    validate_dims(params.dims);
    std::string out;
    out.append(kMagic, 4);
    binio::put_u32(out, kVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(params.dims.d_in));
    binio::put_u32(out, static_cast<std::uint32_t>(params.dims.t_len));
    binio::put_u32(out, static_cast<std::uint32_t>(params.dims.d_seq));
    binio::put_u32(out, static_cast<std::uint32_t>(params.dims.d_emb));
    binio::put_u32(out, static_cast<std::uint32_t>(params.dims.n_classes));
    params.for_each_tensor([&](const char*, const Tensor& t) {
        for (double v : t.data()) binio::put_f64(out, v);
    });
    binio::write_file(path, out);
}

ModelParams load_checkpoint(const std::string& path) {
    binio::Reader r(binio::read_file(path));
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8("checkpoint magic"));
    if (magic[0] != kMagic[0] || magic[1] != kMagic[1] || magic[2] != kMagic[2] ||
        magic[3] != kMagic[3]) {
        throw FormatError(std::string("bad checkpoint magic \"") + std::string(magic, 4) +
                          "\", expected \"MADP\"");
    }
    const std::uint32_t version = r.u32("checkpoint format version");
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint format version " + std::to_string(version));
    }
    ModelDims dims;
    dims.d_in = r.u32("d_in");
    dims.t_len = r.u32("t_len");
    dims.d_seq = r.u32("d_seq");
    dims.d_emb = r.u32("d_emb");
    dims.n_classes = r.u32("n_classes");
    if (dims.d_in == 0 || dims.t_len == 0 || dims.d_seq == 0 || dims.d_emb == 0 ||
        dims.n_classes == 0) {
        throw FormatError("checkpoint declares a zero model dimension");
    }
    ModelParams p = zero_params(dims);
    p.for_each_tensor([&](const char* name, Tensor& t) {
        for (std::size_t i = 0; i < t.numel(); ++i) t.flat()[i] = r.f64(name);
    });
    r.expect_end("checkpoint");
    return p;
}

}  // namespace subadapt
