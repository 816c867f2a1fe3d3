// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <string>

#include "hide_forge/errors.hpp"
#include "hide_forge/report.hpp"

using namespace hide_forge;
namespace fs = std::filesystem;

namespace {

MetricsReport sample_report() {
    MetricsReport r;
    r.config_hash = "abc";
    r.config_text = "run:\n  seed: 3\n";
    r.seed = 3;
    r.strategy = "hide";
    r.task_order = {"a", "b", "c"};
    r.matrix = AccuracyMatrix::from_rows({Vector{90}, Vector{80, 70}, Vector{75, 65, 60}});
    r.routing = {Vector{100}, Vector{99.5, 98}, Vector{97, 96, 95}};
    return r;
}

}  // namespace

TEST_CASE("a report survives a JSON round trip") {
    const MetricsReport r = sample_report();
    const std::string text = report_to_json(r);
    const MetricsReport back = report_from_json(text);
    CHECK(back.matrix == r.matrix);
    CHECK(back.routing.size() == 3);
    CHECK(back.routing[1][0] == 99.5);
    CHECK(back.task_order == r.task_order);
    CHECK(back.point == r.point);
    CHECK(back.config_text == r.config_text);
    CHECK(report_to_json(back) == text);
}

TEST_CASE("reports with inconsistent contents are rejected") {
    const std::string text = report_to_json(sample_report());
    std::string wrong_mean = text;
    wrong_mean.replace(wrong_mean.find("\"last_mean\": "), 13, "\"last_mean\": 1");
    CHECK_THROWS_AS(report_from_json(wrong_mean), IngestionError);
    CHECK_THROWS_AS(report_from_json("{"), IngestionError);
    CHECK_THROWS_AS(report_from_json("{\"kind\": \"other\", \"version\": 1}"), IngestionError);

    MetricsReport short_order = sample_report();
    short_order.task_order.pop_back();
    CHECK_THROWS_AS(report_from_json(report_to_json(short_order)), IngestionError);
}

TEST_CASE("report file names encode the sweep point") {
    MetricsReport r = sample_report();
    CHECK(report_file_name(r) == "hide.json");
    r.point = {"order", "b>a>c"};
    CHECK(report_file_name(r) == "hide__order-b_a_c.json");
}

TEST_CASE("summary CSV holds one row per report") {
    MetricsReport a = sample_report();
    MetricsReport b = sample_report();
    b.strategy = "merge-all";
    b.matrix = AccuracyMatrix::from_rows({Vector{50}});
    b.task_order = {"a"};
    b.routing.clear();
    const std::vector<MetricsReport> both{a, b};
    CHECK(summary_csv(both) ==
          "config_hash,seed,strategy,parameter,value,last_mean,avg_mean,last_0,last_1,last_2\n"
          "abc,3,hide,default,default,66.666667,69.722222,75.000000,65.000000,60.000000\n"
          "abc,3,merge-all,default,default,50.000000,50.000000,50.000000,,\n");
    CHECK(accuracy_csv(both).find("abc,3,hide,default,default,2,c,60.000000\n") != std::string::npos);
    CHECK(routing_csv(both).find("abc,3,hide,default,default,1,a,99.500000\n") != std::string::npos);
}

TEST_CASE("collect_reports finds reports and skips other JSON") {
    const fs::path dir = fs::temp_directory_path() / "hide_forge_test_report";
    fs::remove_all(dir);
    fs::create_directories(dir / "nested");
    MetricsReport r = sample_report();
    write_text_file(dir / "nested" / "hide.json", report_to_json(r));
    r.strategy = "expand-all";
    write_text_file(dir / "expand-all.json", report_to_json(r));
    write_text_file(dir / "manifest.json", "{\"command\": \"sweep\"}\n");
    const auto found = collect_reports(dir);
    REQUIRE(found.size() == 2);
    CHECK(found[0].strategy == "expand-all");
    CHECK(found[1].strategy == "hide");
    write_text_file(dir / "broken.json", "{");
    CHECK_THROWS_AS(collect_reports(dir), IngestionError);
    CHECK_THROWS_AS(collect_reports(dir / "absent"), IngestionError);
}
