// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <json.hpp>

#include "hide_forge/errors.hpp"

namespace hide_forge {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kReportKind = "metrics-report";
constexpr int kReportVersion = 1;

ordered_json vector_json(const Vector& v) { return ordered_json(std::vector<double>(v.begin(), v.end())); }

ordered_json rows_json(const std::vector<Vector>& rows) {
    ordered_json out = ordered_json::array();
    for (const Vector& r : rows) {
        out.push_back(vector_json(r));
    }
    return out;
}

std::vector<Vector> rows_from(const json& j) {
    std::vector<Vector> rows;
    for (const json& r : j) {
        rows.push_back(r.get<std::vector<double>>());
    }
    return rows;
}

std::string csv_cell(double v) { return fmt::format("{:.6f}", v); }

std::string point_prefix(const MetricsReport& r) {
    return fmt::format("{},{},{},{},{}", r.config_hash, r.seed, r.strategy, r.point.parameter, r.point.value);
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
    const Metrics m = metrics(r.matrix);
    ordered_json j;
    j["kind"] = kReportKind;
    j["version"] = kReportVersion;
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    j["strategy"] = r.strategy;
    j["sweep"] = {{"parameter", r.point.parameter}, {"value", r.point.value}};
    j["task_order"] = r.task_order;
    j["accuracy_matrix"] = rows_json(r.matrix.rows());
    j["last"] = vector_json(m.last);
    j["last_mean"] = m.last_mean;
    j["avg"] = vector_json(m.avg);
    j["avg_mean"] = m.avg_mean;
    j["routing_accuracy"] = rows_json(r.routing);
    j["config"] = r.config_text;
    return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
    MetricsReport r;
    try {
        const json j = json::parse(text);
        if (j.at("kind").get<std::string>() != kReportKind || j.at("version").get<int>() != kReportVersion) {
            throw IngestionError("not a version-1 metrics report");
        }
        r.config_hash = j.at("config_hash").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.strategy = j.at("strategy").get<std::string>();
        r.point.parameter = j.at("sweep").at("parameter").get<std::string>();
        r.point.value = j.at("sweep").at("value").get<std::string>();
        r.task_order = j.at("task_order").get<std::vector<std::string>>();
        r.routing = rows_from(j.at("routing_accuracy"));
        r.config_text = j.at("config").get<std::string>();
        try {
            r.matrix = AccuracyMatrix::from_rows(rows_from(j.at("accuracy_matrix")));
        } catch (const ContractError& e) {
            throw IngestionError(std::string("metrics report: ") + e.what());
        }
        if (r.matrix.stages() != r.task_order.size()) {
            throw IngestionError("metrics report: task order and accuracy matrix disagree");
        }
        const Metrics m = metrics(r.matrix);
        if (std::abs(m.last_mean - j.at("last_mean").get<double>()) > 1e-9 ||
            std::abs(m.avg_mean - j.at("avg_mean").get<double>()) > 1e-9) {
            throw IngestionError("metrics report: stored means do not match its accuracy matrix");
        }
    } catch (const json::exception& e) {
        throw IngestionError(std::string("malformed metrics report: ") + e.what());
    }
    return r;
}

std::string report_file_name(const MetricsReport& r) {
    std::string name = r.point.parameter == "default" ? r.strategy
                                                      : fmt::format("{}__{}-{}", r.strategy, r.point.parameter,
                                                                    r.point.value);
    std::replace_if(name.begin(), name.end(), [](char c) { return c == '/' || c == '\\' || c == '>'; }, '_');
    return name + ".json";
}

std::string summary_csv(std::span<const MetricsReport> reports) {
    std::size_t width = 0;
    for (const MetricsReport& r : reports) {
        width = std::max(width, r.matrix.stages());
    }
    std::string out = "config_hash,seed,strategy,parameter,value,last_mean,avg_mean";
    for (std::size_t j = 0; j < width; ++j) {
        out += fmt::format(",last_{}", j);
    }
    out += '\n';
    for (const MetricsReport& r : reports) {
        const Metrics m = metrics(r.matrix);
        out += fmt::format("{},{},{}", point_prefix(r), csv_cell(m.last_mean), csv_cell(m.avg_mean));
        for (std::size_t j = 0; j < width; ++j) {
            out += ',';
            if (j < m.last.size()) {
                out += csv_cell(m.last[j]);
            }
        }
        out += '\n';
    }
    return out;
}

std::string accuracy_csv(std::span<const MetricsReport> reports) {
    std::string out = "config_hash,seed,strategy,parameter,value,stage,task,accuracy\n";
    for (const MetricsReport& r : reports) {
        for (std::size_t t = 0; t < r.matrix.stages(); ++t) {
            for (std::size_t j = 0; j <= t; ++j) {
                out += fmt::format("{},{},{},{}\n", point_prefix(r), t, r.task_order[j], csv_cell(r.matrix.at(t, j)));
            }
        }
    }
    return out;
}

std::string routing_csv(std::span<const MetricsReport> reports) {
    std::string out = "config_hash,seed,strategy,parameter,value,stage,task,routing_accuracy\n";
    for (const MetricsReport& r : reports) {
        for (std::size_t t = 0; t < r.routing.size(); ++t) {
            for (std::size_t j = 0; j < r.routing[t].size(); ++j) {
                out += fmt::format("{},{},{},{}\n", point_prefix(r), t, r.task_order[j], csv_cell(r.routing[t][j]));
            }
        }
    }
    return out;
}

std::vector<MetricsReport> collect_reports(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IngestionError("not a directory: " + dir.string());
    }
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            paths.push_back(entry.path());
        }
    }
    std::sort(paths.begin(), paths.end());
    std::vector<MetricsReport> out;
    for (const auto& p : paths) {
        const std::string text = read_text_file(p);
        json probe;
        try {
            probe = json::parse(text);
        } catch (const json::exception&) {
            throw IngestionError("malformed JSON in " + p.string());
        }
        if (probe.is_object() && probe.value("kind", "") == kReportKind) {
            out.push_back(report_from_json(text));
        }
    }
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw IngestionError("cannot write " + path.string());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IngestionError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace hide_forge
