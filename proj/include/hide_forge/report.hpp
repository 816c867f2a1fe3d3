// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Metrics reports: one JSON document per (strategy, sweep point) plus the
// CSV flattenings used for plotting.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hide_forge/continual.hpp"

namespace hide_forge {

struct SweepPoint {
    std::string parameter = "default";  // default, epsilon, temperature, modality or order
    std::string value = "default";

    friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

struct MetricsReport {
    std::string config_hash;
    std::string config_text;
    std::uint64_t seed = 0;
    std::string strategy;
    SweepPoint point;
    std::vector<std::string> task_order;
    AccuracyMatrix matrix;
    std::vector<Vector> routing;  // per stage, routed strategies only
};

// Stable key order and number formatting; equal reports give equal bytes.
std::string report_to_json(const MetricsReport& report);
// Throws IngestionError on malformed input or inconsistent metrics.
MetricsReport report_from_json(const std::string& text);

// "{strategy}__{parameter}-{value}.json", with path separators replaced.
std::string report_file_name(const MetricsReport& report);

// One row per report: hash, seed, strategy, sweep point, Last and Avg means
// and the per-task Last values.
std::string summary_csv(std::span<const MetricsReport> reports);
// One row per accuracy-matrix cell.
std::string accuracy_csv(std::span<const MetricsReport> reports);
// One row per routed (stage, task) cell.
std::string routing_csv(std::span<const MetricsReport> reports);

// Every metrics report below `dir`, sorted by path.
std::vector<MetricsReport> collect_reports(const std::filesystem::path& dir);

// Writes `text` verbatim; throws IngestionError when the file cannot be written.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace hide_forge
