#include "rmnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "byte_io.hpp"

namespace rmnet {

using detail::ByteReader;
using detail::put_le;

std::string encode_checkpoint(const ModelParams& params) {
    std::string out = "RMNT";
    put_le<std::uint32_t>(out, kCheckpointVersion);
    for (const auto& r : params.records()) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.path.size()));
        out += r.path;
        out.push_back(static_cast<char>(r.dtype));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
        for (Index e : r.shape) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e));
        for (double v : r.values) {
            switch (r.dtype) {
                case DType::f32: put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
                case DType::f64: put_le(out, std::bit_cast<std::uint64_t>(v)); break;
                case DType::u64: put_le(out, static_cast<std::uint64_t>(v)); break;
            }
        }
    }
    return out;
}

ModelParams decode_checkpoint(const std::string& bytes) {
    ByteReader in(bytes, "checkpoint");
    if (in.take(4, "magic") != "RMNT") throw LoadError("not a checkpoint: bad magic bytes");
    const auto version = in.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) throw LoadError("unsupported checkpoint version " + std::to_string(version));
    ModelParams params;
    while (!in.done()) {
        ParamRecord r;
        const auto len = in.get<std::uint32_t>("path length");
        r.path = in.take(len, "path");
        const auto tag = in.get<std::uint8_t>("dtype of '" + r.path + "'");
        if (tag < 1 || tag > 3) throw LoadError("layer '" + r.path + "': unknown dtype tag " + std::to_string(tag));
        r.dtype = static_cast<DType>(tag);
        const auto rank = in.get<std::uint32_t>("rank of '" + r.path + "'");
        if (rank > 8) throw LoadError("layer '" + r.path + "': implausible rank " + std::to_string(rank));
        std::uint64_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto e = in.get<std::uint64_t>("extents of '" + r.path + "'");
            if (e == 0 || e > (1ULL << 32)) throw LoadError("layer '" + r.path + "': bad extent");
            r.shape.push_back(static_cast<Index>(e));
            count *= e;
        }
        const std::size_t width = r.dtype == DType::f32 ? 4 : 8;
        if (count > (bytes.size() / width) + 1) throw LoadError("checkpoint truncated in values of '" + r.path + "'");
        r.values.resize(count);
        const std::string what = "values of '" + r.path + "'";
        for (auto& v : r.values) {
            switch (r.dtype) {
                case DType::f32: v = std::bit_cast<float>(in.get<std::uint32_t>(what)); break;
                case DType::f64: v = std::bit_cast<double>(in.get<std::uint64_t>(what)); break;
                case DType::u64: v = static_cast<double>(in.get<std::uint64_t>(what)); break;
            }
        }
        params.set(std::move(r));
    }
    return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    const std::string bytes = encode_checkpoint(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

}  // namespace rmnet
