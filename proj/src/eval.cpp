#include "slidepipe/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "slidepipe/errors.hpp"
#include "slidepipe/parallel.hpp"

namespace slidepipe {

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

constexpr const char* kEmptyConventionNote =
    "dice(empty, empty) = 1.0; empty vs non-empty = 0.0";

}  // namespace

DiceScore dice(const LabelMask& pred, const LabelMask& truth) {
    if (!pred.same_shape(truth)) {
        throw ShapeMismatch("dice: mask shapes differ (" + std::to_string(pred.width) + "x" +
                            std::to_string(pred.height) + " vs " + std::to_string(truth.width) +
                            "x" + std::to_string(truth.height) + ")");
    }
    DiceScore s;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool p = pred.labels[i] != 0;
        const bool t = truth.labels[i] != 0;
        s.pred_area += p;
        s.truth_area += t;
        s.intersection += p && t;
    }
    const std::int64_t denom = s.pred_area + s.truth_area;
    s.value = denom > 0 ? 2.0 * static_cast<double>(s.intersection) / static_cast<double>(denom)
                        : 1.0;
    return s;
}

DiceReport build_report(std::vector<DiceRow> rows, std::vector<UnitError> errors,
                        bool micro_average) {
    DiceReport report;
    report.rows = std::move(rows);
    report.errors = std::move(errors);
    report.micro_average = micro_average;

    std::map<std::string, std::pair<double, std::int64_t>> acc;  // group -> (sum, count)
    for (const auto& row : report.rows) {
        auto& [sum, count] = acc[row.group];
        sum += row.score.value;
        ++count;
    }
    for (const auto& [group, sc] : acc) {
        report.group_means[group] = 100.0 * sc.first / static_cast<double>(sc.second);
    }

    if (micro_average) {
        double sum = 0.0;
        for (const auto& row : report.rows) sum += row.score.value;
        report.overall_mean =
            report.rows.empty() ? 0.0 : 100.0 * sum / static_cast<double>(report.rows.size());
    } else {
        double sum = 0.0;
        for (const auto& [group, mean] : report.group_means) sum += mean;
        report.overall_mean = report.group_means.empty()
                                  ? 0.0
                                  : sum / static_cast<double>(report.group_means.size());
    }
    return report;
}

DiceReport evaluate_units(const std::vector<UnitJob>& jobs, const MaskLoader& loader,
                          unsigned workers, bool micro_average) {
    struct Outcome {
        bool ok = false;
        DiceScore score;
        std::string message;
    };

    std::vector<Outcome> outcomes(jobs.size());
    ordered_parallel_for(
        jobs.size(), workers,
        [&](std::size_t i) -> Outcome {
            Outcome out;
            try {
                const LabelMask pred = loader(jobs[i].pred_path);
                const LabelMask truth = loader(jobs[i].truth_path);
                out.score = dice(pred, truth);
                out.ok = true;
            } catch (const std::exception& e) {
                out.message = e.what();
            }
            return out;
        },
        [&](std::size_t i, Outcome out) { outcomes[i] = std::move(out); });

    std::vector<DiceRow> rows;
    std::vector<UnitError> errors;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (outcomes[i].ok) {
            rows.push_back(DiceRow{jobs[i].unit_id, jobs[i].group, outcomes[i].score});
        } else {
            errors.push_back(UnitError{jobs[i].unit_id, jobs[i].group, outcomes[i].message});
        }
    }
    return build_report(std::move(rows), std::move(errors), micro_average);
}

CompareTable compare_reports(const DiceReport& a, const DiceReport& b) {
    std::set<std::string> ids_a, ids_b;
    for (const auto& r : a.rows) ids_a.insert(r.unit_id);
    for (const auto& r : b.rows) ids_b.insert(r.unit_id);
    if (ids_a != ids_b) {
        throw UnitSetMismatch("compare_reports: the two reports cover different unit sets");
    }

    std::map<std::string, const DiceRow*> by_id;
    for (const auto& r : b.rows) by_id[r.unit_id] = &r;

    CompareTable table;
    std::map<std::string, std::pair<double, std::int64_t>> group_acc;
    for (const auto& ra : a.rows) {
        const DiceRow* rb = by_id.at(ra.unit_id);
        CompareRow row;
        row.unit_id = ra.unit_id;
        row.group = ra.group;
        row.a = 100.0 * ra.score.value;
        row.b = 100.0 * rb->score.value;
        row.delta = row.b - row.a;
        table.rows.push_back(row);
        auto& [sum, count] = group_acc[ra.group];
        sum += row.delta;
        ++count;
    }
    double overall = 0.0;
    for (const auto& [group, sc] : group_acc) {
        table.group_deltas[group] = sc.first / static_cast<double>(sc.second);
        overall += table.group_deltas[group];
    }
    table.overall_delta =
        group_acc.empty() ? 0.0 : overall / static_cast<double>(group_acc.size());
    return table;
}

std::string report_to_csv(const DiceReport& report) {
    std::ostringstream out;
    out << "unit_id,group,dice,intersection,pred_area,truth_area\n";
    for (const auto& row : report.rows) {
        out << row.unit_id << ',' << row.group << ',' << fmt2(100.0 * row.score.value) << ','
            << row.score.intersection << ',' << row.score.pred_area << ','
            << row.score.truth_area << '\n';
    }
    return out.str();
}

std::string report_to_json(const DiceReport& report) {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const auto& row : report.rows) {
        j["rows"].push_back({{"unit_id", row.unit_id},
                             {"group", row.group},
                             {"dice", row.score.value},
                             {"intersection", row.score.intersection},
                             {"pred_area", row.score.pred_area},
                             {"truth_area", row.score.truth_area}});
    }
    j["errors"] = nlohmann::json::array();
    for (const auto& err : report.errors) {
        j["errors"].push_back(
            {{"unit_id", err.unit_id}, {"group", err.group}, {"message", err.message}});
    }
    j["group_means"] = report.group_means;
    j["overall_mean"] = report.overall_mean;
    j["micro_average"] = report.micro_average;
    j["conventions"] = kEmptyConventionNote;
    return j.dump(2) + "\n";
}

DiceReport report_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    std::vector<DiceRow> rows;
    for (const auto& r : j.at("rows")) {
        DiceRow row;
        row.unit_id = r.at("unit_id").get<std::string>();
        row.group = r.at("group").get<std::string>();
        row.score.value = r.at("dice").get<double>();
        row.score.intersection = r.value("intersection", std::int64_t{0});
        row.score.pred_area = r.value("pred_area", std::int64_t{0});
        row.score.truth_area = r.value("truth_area", std::int64_t{0});
        rows.push_back(std::move(row));
    }
    std::vector<UnitError> errors;
    if (j.contains("errors")) {
        for (const auto& e : j.at("errors")) {
            errors.push_back(UnitError{e.at("unit_id").get<std::string>(),
                                       e.value("group", std::string{}),
                                       e.value("message", std::string{})});
        }
    }
    return build_report(std::move(rows), std::move(errors), j.value("micro_average", false));
}

std::string report_table(const DiceReport& report) {
    std::size_t id_w = 7;
    for (const auto& row : report.rows) id_w = std::max(id_w, row.unit_id.size());
    std::size_t group_w = 5;
    for (const auto& row : report.rows) group_w = std::max(group_w, row.group.size());

    std::ostringstream out;
    auto pad = [&](const std::string& s, std::size_t w) {
        out << s;
        for (std::size_t i = s.size(); i < w + 2; ++i) out << ' ';
    };
    pad("unit_id", id_w);
    pad("group", group_w);
    out << "dice\n";
    for (const auto& row : report.rows) {
        pad(row.unit_id, id_w);
        pad(row.group, group_w);
        out << fmt2(100.0 * row.score.value) << '\n';
    }
    for (const auto& err : report.errors) {
        pad(err.unit_id, id_w);
        pad(err.group, group_w);
        out << "ERROR: " << err.message << '\n';
    }
    out << '\n';
    for (const auto& [group, mean] : report.group_means) {
        out << group << " mean: " << fmt2(mean) << '\n';
    }
    out << (report.micro_average ? "overall (unit-weighted): " : "overall (mean of groups): ")
        << fmt2(report.overall_mean) << '\n';
    out << "note: " << kEmptyConventionNote << '\n';
    return out.str();
}

std::string compare_to_csv(const CompareTable& table) {
    std::ostringstream out;
    out << "unit_id,group,a,b,delta\n";
    for (const auto& row : table.rows) {
        out << row.unit_id << ',' << row.group << ',' << fmt2(row.a) << ',' << fmt2(row.b) << ','
            << fmt2(row.delta) << '\n';
    }
    return out.str();
}

std::string compare_to_json(const CompareTable& table) {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const auto& row : table.rows) {
        j["rows"].push_back({{"unit_id", row.unit_id},
                             {"group", row.group},
                             {"a", row.a},
                             {"b", row.b},
                             {"delta", row.delta}});
    }
    j["group_deltas"] = table.group_deltas;
    j["overall_delta"] = table.overall_delta;
    return j.dump(2) + "\n";
}

std::string compare_table_text(const CompareTable& table) {
    std::size_t id_w = 7;
    for (const auto& row : table.rows) id_w = std::max(id_w, row.unit_id.size());
    std::ostringstream out;
    auto pad = [&](const std::string& s, std::size_t w) {
        out << s;
        for (std::size_t i = s.size(); i < w + 2; ++i) out << ' ';
    };
    pad("unit_id", id_w);
    out << "a       b       delta\n";
    for (const auto& row : table.rows) {
        pad(row.unit_id, id_w);
        pad(fmt2(row.a), 6);
        pad(fmt2(row.b), 6);
        out << (row.delta >= 0 ? "+" : "") << fmt2(row.delta) << '\n';
    }
    out << '\n';
    for (const auto& [group, delta] : table.group_deltas) {
        out << group << " delta: " << (delta >= 0 ? "+" : "") << fmt2(delta) << '\n';
    }
    out << "overall delta: " << (table.overall_delta >= 0 ? "+" : "") << fmt2(table.overall_delta)
        << '\n';
    return out.str();
}

}  // namespace slidepipe
