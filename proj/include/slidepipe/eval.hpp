#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "slidepipe/scoremap.hpp"

namespace slidepipe {

// 2 * |A ∩ B| / (|A| + |B|) over foreground (nonzero) pixels. Both-empty is
// defined as 1.0; this convention is flagged in every report footer.
struct DiceScore {
    double value = 0.0;
    std::int64_t intersection = 0;
    std::int64_t pred_area = 0;
    std::int64_t truth_area = 0;
};

DiceScore dice(const LabelMask& pred, const LabelMask& truth);

struct DiceRow {
    std::string unit_id;
    std::string group;
    DiceScore score;
};

struct UnitError {
    std::string unit_id;
    std::string group;
    std::string message;
};

// Per-unit rows plus group means and the overall average. Scores are
// reported x100. The overall mean is the unweighted mean of group means;
// micro_average switches it to the unit-weighted mean across all rows.
struct DiceReport {
    std::vector<DiceRow> rows;
    std::vector<UnitError> errors;  // excluded from means, flagged in output
    std::map<std::string, double> group_means;
    double overall_mean = 0.0;
    bool micro_average = false;
};

DiceReport build_report(std::vector<DiceRow> rows, std::vector<UnitError> errors = {},
                        bool micro_average = false);

struct UnitJob {
    std::string unit_id;
    std::string group;
    std::filesystem::path pred_path;
    std::filesystem::path truth_path;
};

using MaskLoader = std::function<LabelMask(const std::filesystem::path&)>;

// Loads each pair and computes one row per unit. Load and shape failures
// are collected per unit; failed units are excluded from the means. Row
// order follows input order regardless of worker count.
DiceReport evaluate_units(const std::vector<UnitJob>& jobs, const MaskLoader& loader,
                          unsigned workers = 1, bool micro_average = false);

// Differences b - a in points (x100), per unit and per group.
struct CompareRow {
    std::string unit_id;
    std::string group;
    double a = 0.0;  // x100
    double b = 0.0;  // x100
    double delta = 0.0;
};

struct CompareTable {
    std::vector<CompareRow> rows;
    std::map<std::string, double> group_deltas;
    double overall_delta = 0.0;
};

// Requires identical unit id sets; rows follow a's order.
CompareTable compare_reports(const DiceReport& a, const DiceReport& b);

// Serialization. CSV columns: unit_id,group,dice,intersection,pred_area,truth_area.
std::string report_to_csv(const DiceReport& report);
std::string report_to_json(const DiceReport& report);
DiceReport report_from_json(const std::string& text);
std::string report_table(const DiceReport& report);

std::string compare_to_csv(const CompareTable& table);
std::string compare_to_json(const CompareTable& table);
std::string compare_table_text(const CompareTable& table);

}  // namespace slidepipe
