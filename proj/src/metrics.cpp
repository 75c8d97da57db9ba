#include "mirrorseg/metrics.hpp"
#include "mirrorseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mirrorseg {

namespace {

std::vector<std::array<int, 3>> neighbor_offsets(Connectivity c) {
    std::vector<std::array<int, 3>> out;
    for (int dd = -1; dd <= 1; ++dd)
        for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw) {
                const int order = std::abs(dd) + std::abs(dh) + std::abs(dw);
                if (order == 0) continue;
                if (c == Connectivity::C6 && order > 1) continue;
                if (c == Connectivity::C18 && order > 2) continue;
                out.push_back({dd, dh, dw});
            }
    return out;
}

void check_binary_aligned(const LabelMap& pred, const LabelMap& gt, const char* op) {
    if (pred.shape != gt.shape)
        throw Error("eval", std::string(op) + ": mask shapes differ");
    for (uint32_t v : pred.data)
        if (v > 1) throw Error("eval", std::string(op) + ": pred mask is not binary");
    for (uint32_t v : gt.data)
        if (v > 1) throw Error("eval", std::string(op) + ": gt mask is not binary");
}

double voxel_ml(Spacing3 spacing) { return spacing[0] * spacing[1] * spacing[2] / 1000.0; }

// Per-component voxel counts and overlap flags of `mask` against `other`.
struct ComponentOverlap {
    std::vector<int64_t> sizes;       // index 0 unused
    std::vector<uint8_t> overlapped;  // any voxel of the component hits `other`
};

ComponentOverlap component_overlap(const LabelMap& mask, const LabelMap& other,
                                   Connectivity connectivity) {
    const ComponentLabels cc = connected_components(mask, connectivity);
    ComponentOverlap out;
    out.sizes.assign(cc.count + 1, 0);
    out.overlapped.assign(cc.count + 1, 0);
    for (size_t i = 0; i < cc.labels.data.size(); ++i) {
        const uint32_t lbl = cc.labels.data[i];
        if (lbl == 0) continue;
        ++out.sizes[lbl];
        if (other.data[i] != 0) out.overlapped[lbl] = 1;
    }
    return out;
}

} // namespace

ComponentLabels connected_components(const LabelMap& mask, Connectivity connectivity) {
    const auto [D, H, W] = mask.shape;
    const int64_t n = voxel_count(mask.shape);
    const auto offs = neighbor_offsets(connectivity);

    ComponentLabels out;
    out.labels = LabelMap::filled(mask.shape, mask.spacing, LabelSemantics::ComponentLabels, 0);

    std::vector<int64_t> queue;
    uint32_t next = 0;
    for (int64_t start = 0; start < n; ++start) {
        if (mask.data[start] == 0 || out.labels.data[start] != 0) continue;
        ++next;
        queue.clear();
        queue.push_back(start);
        out.labels.data[start] = next;
        while (!queue.empty()) {
            const int64_t cur = queue.back();
            queue.pop_back();
            const int64_t d = cur / (H * W), h = (cur / W) % H, w = cur % W;
            for (const auto& o : offs) {
                const int64_t nd = d + o[0], nh = h + o[1], nw = w + o[2];
                if (nd < 0 || nd >= D || nh < 0 || nh >= H || nw < 0 || nw >= W) continue;
                const int64_t ni = (nd * H + nh) * W + nw;
                if (mask.data[ni] != 0 && out.labels.data[ni] == 0) {
                    out.labels.data[ni] = next;
                    queue.push_back(ni);
                }
            }
        }
    }
    out.count = static_cast<int>(next);
    return out;
}

double dice(const LabelMap& pred, const LabelMap& gt) {
    check_binary_aligned(pred, gt, "dice");
    int64_t inter = 0, psum = 0, gsum = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        inter += pred.data[i] & gt.data[i];
        psum += pred.data[i];
        gsum += gt.data[i];
    }
    if (psum + gsum == 0) return 0.0;  // lesion-free convention
    return 2.0 * static_cast<double>(inter) / static_cast<double>(psum + gsum);
}

double false_positive_volume(const LabelMap& pred, const LabelMap& gt, Spacing3 spacing,
                             Connectivity connectivity) {
    check_binary_aligned(pred, gt, "false_positive_volume");
    const ComponentOverlap ov = component_overlap(pred, gt, connectivity);
    double vox = 0.0;
    for (size_t c = 1; c < ov.sizes.size(); ++c)
        if (!ov.overlapped[c]) vox += static_cast<double>(ov.sizes[c]);
    return vox * voxel_ml(spacing);
}

double false_negative_volume(const LabelMap& pred, const LabelMap& gt, Spacing3 spacing,
                             Connectivity connectivity) {
    return false_positive_volume(gt, pred, spacing, connectivity);
}

CohortReport aggregate_metrics(std::vector<StudyMetrics> studies) {
    if (studies.empty()) throw Error("eval", "empty cohort");
    CohortReport report;
    report.studies = std::move(studies);
    double d = 0, fn = 0, fp = 0;
    for (const auto& s : report.studies) {
        d += s.dice;
        fn += s.fnv_ml;
        fp += s.fpv_ml;
    }
    const auto n = static_cast<double>(report.studies.size());
    report.mean_dice = d / n;
    report.mean_fnv_ml = fn / n;
    report.mean_fpv_ml = fp / n;
    return report;
}

CohortReport evaluate_cohort(const std::vector<StudyEvalInput>& studies,
                             Connectivity connectivity) {
    if (studies.empty()) throw Error("eval", "empty cohort");
    std::vector<StudyMetrics> rows;
    for (const auto& s : studies) {
        try {
            StudyMetrics m;
            m.study_id = s.study_id;
            m.dice = dice(s.pred, s.gt);
            m.fnv_ml = false_negative_volume(s.pred, s.gt, s.gt.spacing, connectivity);
            m.fpv_ml = false_positive_volume(s.pred, s.gt, s.gt.spacing, connectivity);
            rows.push_back(std::move(m));
        } catch (const Error& e) {
            throw Error(e.category(), "study " + s.study_id + ": " + e.what());
        }
    }
    return aggregate_metrics(std::move(rows));
}

void write_cohort_csv(const CohortReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("io", "cannot open for writing: " + path);
    f << "study_id,dice,fnv_ml,fpv_ml\n";
    char buf[160];
    for (const auto& s : report.studies) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", s.study_id.c_str(), s.dice,
                      s.fnv_ml, s.fpv_ml);
        f << buf;
    }
    std::snprintf(buf, sizeof buf, "MEAN,%.6f,%.6f,%.6f\n", report.mean_dice,
                  report.mean_fnv_ml, report.mean_fpv_ml);
    f << buf;
}

CohortReport read_cohort_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("io", "missing report: " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("study_id,", 0) != 0)
        throw Error("data", "malformed report header in " + path);

    std::vector<StudyMetrics> rows;
    bool saw_mean = false;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, ds, fns, fps;
        if (!std::getline(ss, id, ',') || !std::getline(ss, ds, ',') ||
            !std::getline(ss, fns, ',') || !std::getline(ss, fps))
            throw Error("data", "malformed report row: " + line);
        if (id == "MEAN") {
            saw_mean = true;
            continue;
        }
        rows.push_back({id, std::stod(ds), std::stod(fns), std::stod(fps)});
    }
    if (!saw_mean) throw Error("data", "report missing MEAN row: " + path);
    return aggregate_metrics(std::move(rows));
}

} // namespace mirrorseg
