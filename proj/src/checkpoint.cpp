#include "lshg/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace lshg {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'L', 'S', 'H', 'G'};
constexpr uint8_t kVersion = 1;
constexpr uint64_t kAlign = 64;

template <typename T>
const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>)
        return "f32";
    else
        return "f64";
}

json config_json(const NetworkConfig& c) {
    return json{{"num_stacks", c.num_stacks},
                {"variant", variant_name(c.variant)},
                {"hg_depth", c.hg_depth},
                {"stem0", c.stem_channels[0]},
                {"stem1", c.stem_channels[1]},
                {"hg_channels", c.hg_channels},
                {"num_joints", c.num_joints},
                {"input_res", c.input_res},
                {"heatmap_res", c.heatmap_res},
                {"reduced_stem", c.reduced_stem},
                {"blocks_per_scale", c.blocks_per_scale},
                {"multidilated_merge",
                 c.multidilated_merge == MergeMode::concat ? "concat" : "sum"}};
}

void check_config(const json& file_cfg, const NetworkConfig& want) {
    const json expect = config_json(want);
    for (auto it = expect.begin(); it != expect.end(); ++it) {
        if (!file_cfg.contains(it.key()))
            throw CompatError("checkpoint: manifest missing config key '" + it.key() + "'");
        if (file_cfg.at(it.key()) != it.value())
            throw CompatError("checkpoint: config mismatch at key '" + it.key() + "': file " +
                              file_cfg.at(it.key()).dump() + " vs requested " +
                              it.value().dump());
    }
}

template <typename T>
struct Entry {
    std::string name;
    bool is_buffer = false;
    const Tensor4<T>* tensor = nullptr;
    uint64_t offset = 0;
};

}  // namespace

template <typename T>
void save_checkpoint(const StackedHourglass<T>& net, const std::string& path) {
    std::vector<Entry<T>> entries;
    for (const auto& p : net.graph.params) entries.push_back({p.name, false, &p.value, 0});
    for (const auto& p : net.graph.buffers) entries.push_back({p.name, true, &p.value, 0});
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.name < b.name; });

    uint64_t offset = 0;
    json tensors = json::array();
    for (auto& e : entries) {
        e.offset = offset;
        const uint64_t bytes = uint64_t(e.tensor->numel()) * sizeof(T);
        tensors.push_back({{"name", e.name},
                           {"kind", e.is_buffer ? "buffer" : "param"},
                           {"shape", {e.tensor->shape.n, e.tensor->shape.c, e.tensor->shape.h,
                                      e.tensor->shape.w}},
                           {"dtype", dtype_name<T>()},
                           {"offset", e.offset},
                           {"bytes", bytes}});
        offset = (offset + bytes + kAlign - 1) / kAlign * kAlign;
    }

    json manifest{{"format", kVersion},
                  {"config", config_json(net.config)},
                  {"seed", net.seed},
                  {"dtype", dtype_name<T>()},
                  {"tensors", tensors}};
    const std::string mtext = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    f.write(kMagic, 4);
    f.put(char(kVersion));
    const uint64_t mlen = mtext.size();
    char lenbuf[8];
    for (int i = 0; i < 8; i++) lenbuf[i] = char((mlen >> (8 * i)) & 0xff);
    f.write(lenbuf, 8);
    f.write(mtext.data(), std::streamsize(mtext.size()));

    uint64_t pos = 0;
    const char zeros[kAlign] = {};
    for (const auto& e : entries) {
        if (e.offset > pos) {
            f.write(zeros, std::streamsize(e.offset - pos));
            pos = e.offset;
        }
        const uint64_t bytes = uint64_t(e.tensor->numel()) * sizeof(T);
        f.write(reinterpret_cast<const char*>(e.tensor->ptr()), std::streamsize(bytes));
        pos += bytes;
    }
    if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
}

template <typename T>
StackedHourglass<T> load_checkpoint(const std::string& path, const NetworkConfig& config) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic in '" + path + "'");
    const int version = f.get();
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
    char lenbuf[8];
    f.read(lenbuf, 8);
    if (!f) throw FormatError("checkpoint: truncated header");
    uint64_t mlen = 0;
    for (int i = 0; i < 8; i++) mlen |= uint64_t(uint8_t(lenbuf[i])) << (8 * i);
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), std::streamsize(mlen));
    if (!f) throw FormatError("checkpoint: truncated manifest");

    json manifest;
    try {
        manifest = json::parse(mtext);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: manifest parse error: ") + e.what());
    }
    check_config(manifest.at("config"), config);
    if (manifest.at("dtype").get<std::string>() != dtype_name<T>())
        throw CompatError("checkpoint: config mismatch at key 'dtype': file " +
                          manifest.at("dtype").get<std::string>() + " vs requested " +
                          dtype_name<T>());

    StackedHourglass<T> net =
        build_network<T>(config, manifest.value("seed", uint64_t(0)));

    const uint64_t data_start = 4 + 1 + 8 + mlen;
    size_t loaded = 0;
    for (const auto& t : manifest.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const bool is_buffer = t.at("kind").get<std::string>() == "buffer";
        Tensor4<T>* dst = nullptr;
        auto& list = is_buffer ? net.graph.buffers : net.graph.params;
        for (auto& p : list)
            if (p.name == name) dst = &p.value;
        if (!dst)
            throw CompatError("checkpoint: tensor '" + name +
                              "' does not exist in the requested network");
        const auto sh = t.at("shape");
        const Shape4 fshape{sh[0].get<int64_t>(), sh[1].get<int64_t>(), sh[2].get<int64_t>(),
                            sh[3].get<int64_t>()};
        if (!(fshape == dst->shape))
            throw CompatError("checkpoint: tensor '" + name + "' shape " + fshape.str() +
                              " != expected " + dst->shape.str());
        const uint64_t bytes = t.at("bytes").get<uint64_t>();
        if (bytes != uint64_t(dst->numel()) * sizeof(T))
            throw FormatError("checkpoint: tensor '" + name + "' byte count mismatch");
        f.seekg(std::streamoff(data_start + t.at("offset").get<uint64_t>()));
        f.read(reinterpret_cast<char*>(dst->ptr()), std::streamsize(bytes));
        if (!f) throw FormatError("checkpoint: truncated data for tensor '" + name + "'");
        loaded++;
    }
    if (loaded != net.graph.params.size() + net.graph.buffers.size())
        throw CompatError("checkpoint: file lists " + std::to_string(loaded) +
                          " tensors, network has " +
                          std::to_string(net.graph.params.size() + net.graph.buffers.size()));
    return net;
}

template void save_checkpoint<float>(const StackedHourglass<float>&, const std::string&);
template void save_checkpoint<double>(const StackedHourglass<double>&, const std::string&);
template StackedHourglass<float> load_checkpoint<float>(const std::string&,
                                                        const NetworkConfig&);
template StackedHourglass<double> load_checkpoint<double>(const std::string&,
                                                          const NetworkConfig&);

}  // namespace lshg
