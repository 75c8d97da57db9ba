#pragma once

#include "mirrorseg/volume.hpp"

#include <string>
#include <vector>

namespace mirrorseg {

enum class Connectivity { C6 = 6, C18 = 18, C26 = 26 };

struct ComponentLabels {
    LabelMap labels;  // 0 = background, components numbered from 1 in scan order
    int count = 0;
};

ComponentLabels connected_components(const LabelMap& mask, Connectivity connectivity);

// 2|P∩G| / (|P|+|G|); both-empty pairs score 0.
double dice(const LabelMap& pred, const LabelMap& gt);

// Total volume (ml) of predicted components with zero ground-truth overlap.
double false_positive_volume(const LabelMap& pred, const LabelMap& gt, Spacing3 spacing,
                             Connectivity connectivity = Connectivity::C26);

// Total volume (ml) of ground-truth components with zero predicted overlap.
double false_negative_volume(const LabelMap& pred, const LabelMap& gt, Spacing3 spacing,
                             Connectivity connectivity = Connectivity::C26);

struct StudyMetrics {
    std::string study_id;
    double dice = 0.0;
    double fnv_ml = 0.0;
    double fpv_ml = 0.0;
};

struct CohortReport {
    std::vector<StudyMetrics> studies;
    double mean_dice = 0.0;
    double mean_fnv_ml = 0.0;
    double mean_fpv_ml = 0.0;
};

struct StudyEvalInput {
    std::string study_id;
    LabelMap pred;
    LabelMap gt;
};

CohortReport evaluate_cohort(const std::vector<StudyEvalInput>& studies,
                             Connectivity connectivity = Connectivity::C26);

CohortReport aggregate_metrics(std::vector<StudyMetrics> studies);

// CSV: study_id, dice, fnv_ml, fpv_ml rows with a trailing MEAN row.
void write_cohort_csv(const CohortReport& report, const std::string& path);
CohortReport read_cohort_csv(const std::string& path);

} // namespace mirrorseg
