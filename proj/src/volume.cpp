#include "mirrorseg/volume.hpp"
#include "mirrorseg/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

static_assert(std::endian::native == std::endian::little,
              "raw payloads are little-endian; big-endian hosts are unsupported");

namespace mirrorseg {

using nlohmann::json;

Volume Volume::filled(Shape3 shape, Spacing3 spacing, Modality m, float value) {
    Volume v;
    v.shape = shape;
    v.spacing = spacing;
    v.modality = m;
    v.data.assign(voxel_count(shape), value);
    return v;
}

LabelMap LabelMap::filled(Shape3 shape, Spacing3 spacing, LabelSemantics s, uint32_t value) {
    LabelMap m;
    m.shape = shape;
    m.spacing = spacing;
    m.semantics = s;
    m.data.assign(voxel_count(shape), value);
    return m;
}

// --- File I/O ---------------------------------------------------------------

namespace {

std::string strip_extension(const std::string& path) {
    if (path.size() > 5 && path.compare(path.size() - 5, 5, ".json") == 0)
        return path.substr(0, path.size() - 5);
    if (path.size() > 4 && path.compare(path.size() - 4, 4, ".raw") == 0)
        return path.substr(0, path.size() - 4);
    return path;
}

void check_finite(const std::vector<float>& data, const std::string& context) {
    for (size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i]))
            throw Error("data", context + ": non-finite value at voxel index " +
                                     std::to_string(i));
    }
}

void write_raw(const std::string& path, const void* bytes, size_t n) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("io", "cannot open for writing: " + path);
    f.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
    if (!f) throw Error("io", "short write: " + path);
}

std::vector<char> read_raw(const std::string& path, size_t expected) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw Error("io", "missing raw payload: " + path);
    const auto actual = static_cast<size_t>(f.tellg());
    if (actual != expected)
        throw Error("data", "raw payload size mismatch for " + path + ": expected " +
                                std::to_string(expected) + " bytes, found " +
                                std::to_string(actual));
    f.seekg(0);
    std::vector<char> buf(expected);
    f.read(buf.data(), static_cast<std::streamsize>(expected));
    if (!f) throw Error("io", "short read: " + path);
    return buf;
}

json read_sidecar(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("io", "missing sidecar: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw Error("data", "malformed sidecar " + path + ": " + e.what());
    }
    return j;
}

Shape3 shape_from_json(const json& j) {
    auto v = j.at("shape").get<std::vector<int64_t>>();
    if (v.size() != 3 || v[0] <= 0 || v[1] <= 0 || v[2] <= 0)
        throw Error("data", "sidecar shape must be three positive integers");
    return {v[0], v[1], v[2]};
}

Spacing3 spacing_from_json(const json& j) {
    auto v = j.at("spacing_mm").get<std::vector<double>>();
    if (v.size() != 3 || v[0] <= 0 || v[1] <= 0 || v[2] <= 0)
        throw Error("data", "sidecar spacing_mm must be three positive numbers");
    return {v[0], v[1], v[2]};
}

} // namespace

void write_volume(const Volume& vol, const std::string& path) {
    if (static_cast<int64_t>(vol.data.size()) != voxel_count(vol.shape))
        throw Error("data", "volume data length does not match shape");
    check_finite(vol.data, "write_volume");

    const std::string base = strip_extension(path);
    json j{{"shape", vol.shape},
           {"spacing_mm", vol.spacing},
           {"dtype", "f32"},
           {"modality", vol.modality == Modality::PET_SUV ? "PET_SUV" : "CT_HU"},
           {"order", "DHW-row-major"}};
    std::ofstream f(base + ".json");
    if (!f) throw Error("io", "cannot open for writing: " + base + ".json");
    f << j.dump(2) << "\n";
    if (!f) throw Error("io", "short write: " + base + ".json");

    write_raw(base + ".raw", vol.data.data(), vol.data.size() * sizeof(float));
}

Volume read_volume(const std::string& path) {
    const std::string base = strip_extension(path);
    const json j = read_sidecar(base + ".json");

    const std::string dtype = j.at("dtype").get<std::string>();
    if (dtype != "f32")
        throw Error("data", "read_volume expects dtype f32, got \"" + dtype +
                                "\" (label maps are read with read_labelmap)");
    const std::string modality = j.at("modality").get<std::string>();

    Volume vol;
    vol.shape = shape_from_json(j);
    vol.spacing = spacing_from_json(j);
    if (modality == "PET_SUV")
        vol.modality = Modality::PET_SUV;
    else if (modality == "CT_HU")
        vol.modality = Modality::CT_HU;
    else
        throw Error("data", "unknown modality \"" + modality + "\" in " + base + ".json");

    const auto n = static_cast<size_t>(voxel_count(vol.shape));
    const auto buf = read_raw(base + ".raw", n * sizeof(float));
    vol.data.resize(n);
    std::memcpy(vol.data.data(), buf.data(), buf.size());
    check_finite(vol.data, "read_volume " + base);
    return vol;
}

void write_labelmap(const LabelMap& map, const std::string& path) {
    if (static_cast<int64_t>(map.data.size()) != voxel_count(map.shape))
        throw Error("data", "label map data length does not match shape");

    uint32_t maxv = 0;
    for (uint32_t v : map.data) maxv = std::max(maxv, v);

    const std::string base = strip_extension(path);
    const bool narrow = maxv <= 0xFF;
    if (!narrow && maxv > 0xFFFF)
        throw Error("data", "label value " + std::to_string(maxv) + " exceeds u16 file range");

    json j{{"shape", map.shape},
           {"spacing_mm", map.spacing},
           {"dtype", narrow ? "u8" : "u16"},
           {"modality", "LABEL"},
           {"order", "DHW-row-major"}};
    std::ofstream f(base + ".json");
    if (!f) throw Error("io", "cannot open for writing: " + base + ".json");
    f << j.dump(2) << "\n";
    if (!f) throw Error("io", "short write: " + base + ".json");

    if (narrow) {
        std::vector<uint8_t> packed(map.data.begin(), map.data.end());
        write_raw(base + ".raw", packed.data(), packed.size());
    } else {
        std::vector<uint16_t> packed(map.data.begin(), map.data.end());
        write_raw(base + ".raw", packed.data(), packed.size() * 2);
    }
}

LabelMap read_labelmap(const std::string& path, LabelSemantics semantics) {
    const std::string base = strip_extension(path);
    const json j = read_sidecar(base + ".json");

    if (j.at("modality").get<std::string>() != "LABEL")
        throw Error("data", base + ".json is not a label map (modality != LABEL)");
    const std::string dtype = j.at("dtype").get<std::string>();
    if (dtype != "u8" && dtype != "u16")
        throw Error("data", "unknown label dtype \"" + dtype + "\" in " + base + ".json");

    LabelMap map;
    map.shape = shape_from_json(j);
    map.spacing = spacing_from_json(j);
    map.semantics = semantics;

    const auto n = static_cast<size_t>(voxel_count(map.shape));
    map.data.resize(n);
    if (dtype == "u8") {
        const auto buf = read_raw(base + ".raw", n);
        for (size_t i = 0; i < n; ++i) map.data[i] = static_cast<uint8_t>(buf[i]);
    } else {
        const auto buf = read_raw(base + ".raw", n * 2);
        std::vector<uint16_t> packed(n);
        std::memcpy(packed.data(), buf.data(), buf.size());
        for (size_t i = 0; i < n; ++i) map.data[i] = packed[i];
    }
    return map;
}

// --- Geometry ---------------------------------------------------------------

namespace {

// 26-connected neighbor offsets.
std::vector<std::array<int, 3>> neighbors26() {
    std::vector<std::array<int, 3>> offs;
    for (int dd = -1; dd <= 1; ++dd)
        for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw)
                if (dd || dh || dw) offs.push_back({dd, dh, dw});
    return offs;
}

constexpr std::array<std::array<int, 3>, 6> kNeighbors6 = {
    {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};

} // namespace

LabelMap body_mask(const Volume& ct, float hu_threshold) {
    if (ct.modality != Modality::CT_HU)
        throw Error("data", "body_mask requires a CT_HU volume");

    const auto [D, H, W] = ct.shape;
    const int64_t n = voxel_count(ct.shape);
    std::vector<uint8_t> fg(n);
    int64_t fg_count = 0;
    for (int64_t i = 0; i < n; ++i) {
        fg[i] = ct.data[i] > hu_threshold;
        fg_count += fg[i];
    }
    if (fg_count == 0)
        throw Error("data", "empty body: no voxel above HU threshold " +
                                std::to_string(hu_threshold));

    // Largest 26-connected foreground component, BFS in scan order.
    const auto offs = neighbors26();
    std::vector<int32_t> comp(n, -1);
    std::vector<int64_t> sizes;
    std::vector<int64_t> queue;
    for (int64_t start = 0; start < n; ++start) {
        if (!fg[start] || comp[start] >= 0) continue;
        const auto id = static_cast<int32_t>(sizes.size());
        int64_t size = 0;
        queue.clear();
        queue.push_back(start);
        comp[start] = id;
        while (!queue.empty()) {
            const int64_t cur = queue.back();
            queue.pop_back();
            ++size;
            const int64_t d = cur / (H * W), h = (cur / W) % H, w = cur % W;
            for (const auto& o : offs) {
                const int64_t nd = d + o[0], nh = h + o[1], nw = w + o[2];
                if (nd < 0 || nd >= D || nh < 0 || nh >= H || nw < 0 || nw >= W) continue;
                const int64_t ni = (nd * H + nh) * W + nw;
                if (fg[ni] && comp[ni] < 0) {
                    comp[ni] = id;
                    queue.push_back(ni);
                }
            }
        }
        sizes.push_back(size);
    }
    const auto largest = static_cast<int32_t>(
        std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

    LabelMap mask = LabelMap::filled(ct.shape, ct.spacing, LabelSemantics::BinaryMask, 0);
    for (int64_t i = 0; i < n; ++i) mask.data[i] = comp[i] == largest;

    // Fill enclosed cavities: exterior zeros are the ones 6-reachable from the
    // border; everything else becomes body.
    std::vector<uint8_t> exterior(n, 0);
    queue.clear();
    auto seed = [&](int64_t d, int64_t h, int64_t w) {
        const int64_t i = (d * H + h) * W + w;
        if (!mask.data[i] && !exterior[i]) {
            exterior[i] = 1;
            queue.push_back(i);
        }
    };
    for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h) {
            seed(d, h, 0);
            seed(d, h, W - 1);
        }
    for (int64_t d = 0; d < D; ++d)
        for (int64_t w = 0; w < W; ++w) {
            seed(d, 0, w);
            seed(d, H - 1, w);
        }
    for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
            seed(0, h, w);
            seed(D - 1, h, w);
        }
    while (!queue.empty()) {
        const int64_t cur = queue.back();
        queue.pop_back();
        const int64_t d = cur / (H * W), h = (cur / W) % H, w = cur % W;
        for (const auto& o : kNeighbors6) {
            const int64_t nd = d + o[0], nh = h + o[1], nw = w + o[2];
            if (nd < 0 || nd >= D || nh < 0 || nh >= H || nw < 0 || nw >= W) continue;
            const int64_t ni = (nd * H + nh) * W + nw;
            if (!mask.data[ni] && !exterior[ni]) {
                exterior[ni] = 1;
                queue.push_back(ni);
            }
        }
    }
    for (int64_t i = 0; i < n; ++i)
        if (!mask.data[i] && !exterior[i]) mask.data[i] = 1;
    return mask;
}

BoundingBox mask_bounding_box(const LabelMap& mask, int64_t margin_vox) {
    const auto [D, H, W] = mask.shape;
    Shape3 lo{D, H, W};
    Shape3 hi{0, 0, 0};
    for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w)
                if (mask.at(d, h, w) >= 1) {
                    lo = {std::min(lo[0], d), std::min(lo[1], h), std::min(lo[2], w)};
                    hi = {std::max(hi[0], d + 1), std::max(hi[1], h + 1), std::max(hi[2], w + 1)};
                }
    if (hi[0] == 0) throw Error("data", "mask is empty");
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max<int64_t>(0, lo[a] - margin_vox);
        hi[a] = std::min(mask.shape[a], hi[a] + margin_vox);
    }
    return {lo, hi};
}

std::pair<Volume, BoundingBox> crop_to_mask(const Volume& vol, const LabelMap& mask,
                                            int64_t margin_vox) {
    if (vol.shape != mask.shape)
        throw Error("data", "crop_to_mask: volume and mask shapes differ");
    const BoundingBox box = mask_bounding_box(mask, margin_vox);
    return {crop_to_box(vol, box), box};
}

namespace {

template <typename Grid>
Grid crop_impl(const Grid& g, const BoundingBox& box) {
    for (int a = 0; a < 3; ++a)
        if (box.lo[a] < 0 || box.hi[a] > g.shape[a] || box.lo[a] >= box.hi[a])
            throw Error("data", "crop box out of range");
    Grid out = g;
    out.shape = box.extent();
    out.data.resize(voxel_count(out.shape));
    const auto [D, H, W] = out.shape;
    for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h) {
            const auto* src = &g.data[g.index(box.lo[0] + d, box.lo[1] + h, box.lo[2])];
            std::copy(src, src + W, &out.data[out.index(d, h, 0)]);
        }
    return out;
}

template <typename Grid>
Grid pad_impl(const Grid& g, int64_t min_extent) {
    Shape3 target = g.shape;
    bool needed = false;
    for (int a = 0; a < 3; ++a)
        if (target[a] < min_extent) {
            target[a] = min_extent;
            needed = true;
        }
    if (!needed) return g;
    Grid out = g;
    out.shape = target;
    out.data.assign(voxel_count(target), {});
    const auto [D, H, W] = target;
    for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w)
                out.data[out.index(d, h, w)] = g.data[g.index(std::min(d, g.shape[0] - 1),
                                                              std::min(h, g.shape[1] - 1),
                                                              std::min(w, g.shape[2] - 1))];
    return out;
}

} // namespace

Volume crop_to_box(const Volume& vol, const BoundingBox& box) { return crop_impl(vol, box); }
LabelMap crop_to_box(const LabelMap& map, const BoundingBox& box) { return crop_impl(map, box); }

Volume pad_to_min(const Volume& vol, int64_t min_extent) { return pad_impl(vol, min_extent); }
LabelMap pad_to_min(const LabelMap& map, int64_t min_extent) { return pad_impl(map, min_extent); }

Volume resample_trilinear(const Volume& vol, Shape3 target_shape, Spacing3 target_spacing) {
    for (int a = 0; a < 3; ++a)
        if (target_shape[a] <= 0 || target_spacing[a] <= 0)
            throw Error("data", "resample target shape/spacing must be positive");

    Volume out;
    out.shape = target_shape;
    out.spacing = target_spacing;
    out.modality = vol.modality;
    out.data.resize(voxel_count(target_shape));

    const auto [D, H, W] = target_shape;
    const auto [SD, SH, SW] = vol.shape;
    auto src_coord = [&](int64_t i, int a) {
        // Voxel centers of both grids share the physical origin of the extent.
        const double phys = (static_cast<double>(i) + 0.5) * target_spacing[a];
        double u = phys / vol.spacing[a] - 0.5;
        return std::clamp(u, 0.0, static_cast<double>(vol.shape[a] - 1));
    };

    for (int64_t d = 0; d < D; ++d) {
        const double ud = src_coord(d, 0);
        const auto d0 = static_cast<int64_t>(ud);
        const int64_t d1 = std::min(d0 + 1, SD - 1);
        const double fd = ud - static_cast<double>(d0);
        for (int64_t h = 0; h < H; ++h) {
            const double uh = src_coord(h, 1);
            const auto h0 = static_cast<int64_t>(uh);
            const int64_t h1 = std::min(h0 + 1, SH - 1);
            const double fh = uh - static_cast<double>(h0);
            for (int64_t w = 0; w < W; ++w) {
                const double uw = src_coord(w, 2);
                const auto w0 = static_cast<int64_t>(uw);
                const int64_t w1 = std::min(w0 + 1, SW - 1);
                const double fw = uw - static_cast<double>(w0);

                const double c00 = vol.at(d0, h0, w0) * (1 - fw) + vol.at(d0, h0, w1) * fw;
                const double c01 = vol.at(d0, h1, w0) * (1 - fw) + vol.at(d0, h1, w1) * fw;
                const double c10 = vol.at(d1, h0, w0) * (1 - fw) + vol.at(d1, h0, w1) * fw;
                const double c11 = vol.at(d1, h1, w0) * (1 - fw) + vol.at(d1, h1, w1) * fw;
                const double c0 = c00 * (1 - fh) + c01 * fh;
                const double c1 = c10 * (1 - fh) + c11 * fh;
                out.at(d, h, w) = static_cast<float>(c0 * (1 - fd) + c1 * fd);
            }
        }
    }
    return out;
}

} // namespace mirrorseg
