// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>

#include "hide_forge/bench.hpp"
#include "hide_forge/errors.hpp"

using namespace hide_forge;
namespace fs = std::filesystem;

namespace {

BenchConfig small_bench(const std::string& preset = "confusable") {
    BenchConfig b;
    b.preset = preset;
    b.n_train = 60;
    b.n_test = 20;
    return b;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("hide_forge_test_bench_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("separability names round-trip") {
    for (Separability s : {Separability::separated, Separability::visual_confusable, Separability::text_confusable}) {
        CHECK(parse_separability(separability_name(s)) == s);
    }
    CHECK_THROWS_AS(parse_separability("blurry"), IngestionError);
}

TEST_CASE("bench configuration is validated against the model") {
    const ModelConfig model;
    CHECK_NOTHROW(BenchConfig{}.validate(model));
    BenchConfig b;
    b.preset = "mixed";
    CHECK_THROWS_AS(b.validate(model), ConfigurationError);
    b = BenchConfig{};
    b.answer_lengths = {1, 2};
    CHECK_THROWS_AS(b.validate(model), ConfigurationError);
    b = BenchConfig{};
    b.n_tasks = 3;
    CHECK_THROWS_AS(b.validate(model), ConfigurationError);
    b = BenchConfig{};
    b.n_slots = 60;
    CHECK_THROWS_AS(b.validate(model), ConfigurationError);
    b = BenchConfig{};
    b.template_len = 12;
    CHECK_THROWS_AS(b.validate(model), ConfigurationError);
}

TEST_CASE("generation is deterministic and splits are disjoint") {
    const ModelConfig model;
    const Suite a = generate_suite(model, small_bench(), 3);
    const Suite b = generate_suite(model, small_bench(), 3);
    REQUIRE(a.data.size() == 4);
    std::set<std::uint64_t> ids;
    for (std::size_t t = 0; t < a.data.size(); ++t) {
        CHECK(a.data[t].train.size() == 60);
        CHECK(a.data[t].test.size() == 20);
        for (std::size_t i = 0; i < a.data[t].train.size(); ++i) {
            CHECK(sample_to_json(a.data[t].train[i]) == sample_to_json(b.data[t].train[i]));
        }
        for (const auto* split : {&a.data[t].train, &a.data[t].test}) {
            for (const Sample& s : *split) {
                CHECK(ids.insert(s.id).second);
                CHECK(s.task == a.data[t].task_id);
            }
        }
    }
    const Suite c = generate_suite(model, small_bench(), 4);
    CHECK(sample_to_json(c.data[0].train[0]) != sample_to_json(a.data[0].train[0]));
}

TEST_CASE("answers pair a shared slot code with a per-task class code") {
    const ModelConfig model;
    const Suite suite = generate_suite(model, small_bench("separated"), 5);
    const TaskSpec& first = suite.specs[0];
    for (const TaskSpec& spec : suite.specs) {
        for (std::size_t slot = 0; slot < spec.n_slots(); ++slot) {
            CHECK(spec.answer_for(0, slot).front() == first.answer_for(0, slot).front());
            for (std::size_t cls = 0; cls < spec.n_classes(); ++cls) {
                const auto& ans = spec.answer_for(cls, slot);
                CHECK(ans.size() >= 2);
                CHECK(std::equal(ans.begin() + 1, ans.end(), spec.answer_for(cls, 0).begin() + 1));
            }
        }
    }
    CHECK_THROWS_AS(first.answer_for(first.n_classes(), 0), ContractError);
    for (const TaskData& d : suite.data) {
        for (const Sample& s : d.train) {
            CHECK_NOTHROW(s.validate(model));
        }
    }
}

TEST_CASE("separated tasks are separable in both modalities") {
    const ModelConfig model;
    const Suite suite = generate_suite(model, small_bench("separated"), 6);
    const SeparabilityReport& r = suite.separability;
    CHECK(r.passed());
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(suite.specs[i].separability == Separability::separated);
        for (std::size_t j = 0; j < 4; ++j) {
            if (i != j) {
                CHECK(r.visual(i, j) < 0.5);
                CHECK(r.instruction(i, j) < 0.5);
            }
        }
    }
}

TEST_CASE("confusable partners share exactly one modality") {
    const ModelConfig model;
    const Suite suite = generate_suite(model, small_bench(), 7);
    const SeparabilityReport& r = suite.separability;
    CHECK(r.passed());
    CHECK(suite.specs[2].separability == Separability::visual_confusable);
    CHECK(suite.specs[2].partner == "task0");
    CHECK(suite.specs[3].separability == Separability::text_confusable);
    CHECK(suite.specs[3].partner == "task1");
    CHECK(r.visual(2, 0) > 0.9);
    CHECK(r.instruction(2, 0) < 0.5);
    CHECK(r.instruction(3, 1) > 0.9);
    CHECK(r.visual(3, 1) < 0.5);
    CHECK(r.exempt(2, 0, true));
    CHECK_FALSE(r.exempt(2, 0, false));
}

TEST_CASE("an unreachable threshold is a generation error") {
    BenchConfig b = small_bench("separated");
    b.separability_threshold = -0.99;
    b.max_attempts = 2;
    CHECK_THROWS_AS(generate_suite(ModelConfig{}, b, 1), GenerationError);
}

TEST_CASE("samples round-trip through JSON lines") {
    const ModelConfig model;
    const Suite suite = generate_suite(model, small_bench(), 8);
    const Sample& s = suite.data[1].test[3];
    const Sample back = sample_from_json(sample_to_json(s), model);
    CHECK(back.id == s.id);
    CHECK(back.task == s.task);
    CHECK(back.prompt.instruction == s.prompt.instruction);
    CHECK(back.answer == s.answer);
    CHECK(sample_to_json(back) == sample_to_json(s));
    CHECK_THROWS_AS(sample_from_json("{\"id\": 1}", model), IngestionError);
    CHECK_THROWS_AS(sample_from_json("not json", model), IngestionError);
}

TEST_CASE("written suites are byte-stable and re-checked on read") {
    const ModelConfig model;
    const Suite suite = generate_suite(model, small_bench(), 9);
    const fs::path a = scratch_dir("a");
    const fs::path b = scratch_dir("b");
    write_suite(suite, a);
    write_suite(generate_suite(model, small_bench(), 9), b);
    for (const auto& name : {"suite.json", "task0.train.jsonl", "task3.test.jsonl"}) {
        REQUIRE(fs::exists(a / name));
        CHECK(slurp(a / name) == slurp(b / name));
    }

    const Suite back = read_suite(a);
    CHECK(back.seed == 9);
    CHECK(back.bench == suite.bench);
    CHECK(back.model == suite.model);
    REQUIRE(back.data.size() == 4);
    CHECK(sample_to_json(back.data[2].train[5]) == sample_to_json(suite.data[2].train[5]));
    CHECK(back.separability.passed());

    std::ofstream(b / "task1.train.jsonl", std::ios::app) << "{\"id\": 5, \"task\": \"task1\"}\n";
    CHECK_THROWS_AS(read_suite(b), IngestionError);
    fs::remove(a / "task2.test.jsonl");
    CHECK_THROWS_AS(read_suite(a), IngestionError);
    fs::remove_all(a);
    fs::remove_all(b);
}
