#include "cola/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cola {

namespace {

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw parse_error("checkpoint truncated");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

float read_f32(std::istream& is) {
    const uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet<float>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw error("cannot write checkpoint: " + path);
    os.write("COLA", 4);
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<uint32_t>(params.names().size()));
    params.for_each([&](const std::string& name, const Parameter<float>& p) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(p.value.shape.size()));
        for (int d : p.value.shape) write_u32(os, static_cast<uint32_t>(d));
        for (float v : p.value.data) write_f32(os, v);
    });
    if (!os) throw error("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor<float>>> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw error("cannot read checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "COLA", 4) != 0)
        throw parse_error("not a COLA checkpoint: " + path);
    const uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw parse_error("unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = read_u32(is);
    std::vector<std::pair<std::string, Tensor<float>>> entries;
    entries.reserve(count);
    for (uint32_t e = 0; e < count; ++e) {
        const uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw parse_error("checkpoint truncated");
        const uint32_t ndim = read_u32(is);
        std::vector<int> shape(ndim);
        for (uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<int>(read_u32(is));
        Tensor<float> t(shape);
        for (float& v : t.data) v = read_f32(is);
        entries.emplace_back(std::move(name), std::move(t));
    }
    return entries;
}

void load_checkpoint(const std::string& path, ParamSet<float>& params) {
    auto entries = read_checkpoint(path);
    if (entries.size() != params.names().size())
        throw parse_error("checkpoint entry count " + std::to_string(entries.size()) +
                          " does not match model (" + std::to_string(params.names().size()) + ")");
    for (auto& [name, tensor] : entries) {
        if (!params.contains(name))
            throw parse_error("checkpoint parameter '" + name + "' does not exist in model");
        Parameter<float>& p = params.get(name);
        if (p.value.shape != tensor.shape)
            throw parse_error("checkpoint shape mismatch for '" + name + "': file " +
                              shape_str(tensor.shape) + " vs model " + shape_str(p.value.shape));
        p.value = std::move(tensor);
    }
}

}  // namespace cola
