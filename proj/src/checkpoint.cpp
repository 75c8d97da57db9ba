#include "mirrorseg/checkpoint.hpp"
#include "mirrorseg/error.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace mirrorseg {

using nlohmann::json;

namespace {

std::string strip_extension(const std::string& path) {
    if (path.size() > 5 && path.compare(path.size() - 5, 5, ".json") == 0)
        return path.substr(0, path.size() - 5);
    if (path.size() > 4 && path.compare(path.size() - 4, 4, ".raw") == 0)
        return path.substr(0, path.size() - 4);
    return path;
}

} // namespace

std::string config_hash_of(const std::string& description) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : description) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params,
                     int epoch, const std::string& config_hash) {
    const std::string base = strip_extension(path);

    json manifest;
    manifest["epoch"] = epoch;
    manifest["config_hash"] = config_hash;
    json plist = json::array();
    int64_t offset = 0;
    for (const auto& p : params) {
        const Shape5& s = p.tensor.shape();
        plist.push_back({{"name", p.name},
                         {"shape", std::array<int64_t, 5>{s.n, s.c, s.d, s.h, s.w}},
                         {"offset", offset}});
        offset += p.tensor.numel() * static_cast<int64_t>(sizeof(float));
    }
    manifest["params"] = plist;

    std::ofstream jf(base + ".json");
    if (!jf) throw Error("io", "cannot open for writing: " + base + ".json");
    jf << manifest.dump(2) << "\n";

    std::ofstream rf(base + ".raw", std::ios::binary);
    if (!rf) throw Error("io", "cannot open for writing: " + base + ".raw");
    for (const auto& p : params) {
        const auto data = p.tensor.data();
        rf.write(reinterpret_cast<const char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    if (!rf) throw Error("io", "short write: " + base + ".raw");
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string base = strip_extension(path);

    std::ifstream jf(base + ".json");
    if (!jf) throw Error("io", "missing checkpoint manifest: " + base + ".json");
    json manifest;
    try {
        jf >> manifest;
    } catch (const json::exception& e) {
        throw Error("data", "malformed checkpoint manifest " + base + ".json: " + e.what());
    }

    std::ifstream rf(base + ".raw", std::ios::binary | std::ios::ate);
    if (!rf) throw Error("io", "missing checkpoint blob: " + base + ".raw");
    const auto blob_size = static_cast<int64_t>(rf.tellg());
    rf.seekg(0);
    std::vector<char> blob(blob_size);
    rf.read(blob.data(), blob_size);
    if (!rf) throw Error("io", "short read: " + base + ".raw");

    Checkpoint ckpt;
    ckpt.epoch = manifest.value("epoch", 0);
    ckpt.config_hash = manifest.value("config_hash", "");
    for (const auto& item : manifest.at("params")) {
        const auto sh = item.at("shape").get<std::array<int64_t, 5>>();
        const Shape5 shape{sh[0], sh[1], sh[2], sh[3], sh[4]};
        const auto offset = item.at("offset").get<int64_t>();
        const int64_t bytes = shape.numel() * static_cast<int64_t>(sizeof(float));
        if (offset < 0 || offset + bytes > blob_size)
            throw Error("data", "checkpoint blob out of range for parameter " +
                                    item.at("name").get<std::string>());
        std::vector<float> data(shape.numel());
        std::memcpy(data.data(), blob.data() + offset, bytes);
        ckpt.params.push_back(
            {item.at("name").get<std::string>(), Tensor::from_data(shape, std::move(data))});
    }
    return ckpt;
}

} // namespace mirrorseg
