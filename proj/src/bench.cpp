// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "hide_forge/errors.hpp"

namespace hide_forge {

using nlohmann::json;

namespace {

std::size_t template_pool_size(const BenchConfig& b) { return b.n_tasks * b.template_len; }

std::size_t first_answer_token(const BenchConfig& b) { return template_pool_size(b) + b.n_slots; }

Separability designed_class(const BenchConfig& b, std::size_t task) {
    if (b.preset == "confusable") {
        if (task == 2) return Separability::visual_confusable;
        if (task == 3) return Separability::text_confusable;
    }
    return Separability::separated;
}

std::size_t designed_partner(Separability s) { return s == Separability::visual_confusable ? 0 : 1; }

std::vector<TaskSpec> make_specs(const ModelConfig& model, const BenchConfig& b, SeededRng& rng) {
    std::vector<int> pool(template_pool_size(b));
    std::iota(pool.begin(), pool.end(), 0);
    rng.shuffle(pool);

    std::vector<int> slots(b.n_slots);
    std::iota(slots.begin(), slots.end(), static_cast<int>(template_pool_size(b)));
    const std::size_t answer_base = first_answer_token(b);
    const std::size_t answer_count = model.vocab_size - answer_base;
    const auto answer_token = [&] { return static_cast<int>(answer_base + rng.uniform_index(answer_count)); };

    // The slot code is common to every task; the class code is per task.
    std::vector<int> slot_code(b.n_slots);
    for (int& tok : slot_code) {
        tok = answer_token();
    }

    std::vector<TaskSpec> specs;
    for (std::size_t t = 0; t < b.n_tasks; ++t) {
        TaskSpec spec;
        spec.name = fmt::format("task{}", t);
        spec.separability = designed_class(b, t);
        spec.visual_noise = b.visual_noise;
        spec.visual_center = rng.normal_vector(model.visual_dim, b.center_scale);
        spec.class_offsets = rng.normal_matrix(b.n_classes, model.visual_dim, b.offset_scale);
        // Zero-mean offsets keep the task anchor on the center.
        const Vector mean = column_means(spec.class_offsets);
        for (std::size_t k = 0; k < b.n_classes; ++k) {
            for (std::size_t c = 0; c < model.visual_dim; ++c) {
                spec.class_offsets(k, c) -= mean[c];
            }
        }
        spec.template_tokens.assign(pool.begin() + static_cast<std::ptrdiff_t>(t * b.template_len),
                                    pool.begin() + static_cast<std::ptrdiff_t>((t + 1) * b.template_len));
        spec.slot_position = b.template_len / 2;
        spec.slot_tokens = slots;
        const std::size_t len = b.answer_lengths[t % b.answer_lengths.size()];
        std::vector<std::vector<int>> class_code(b.n_classes, std::vector<int>(len - 1));
        for (auto& code : class_code) {
            for (int& tok : code) {
                tok = answer_token();
            }
        }
        for (std::size_t cls = 0; cls < b.n_classes; ++cls) {
            for (std::size_t slot = 0; slot < b.n_slots; ++slot) {
                std::vector<int> answer{slot_code[slot]};
                answer.insert(answer.end(), class_code[cls].begin(), class_code[cls].end());
                spec.answer_table.push_back(std::move(answer));
            }
        }
        spec.n_train = b.n_train;
        spec.n_test = b.n_test;
        if (spec.separability != Separability::separated) {
            const TaskSpec& partner = specs[designed_partner(spec.separability)];
            spec.partner = partner.name;
            if (spec.separability == Separability::visual_confusable) {
                spec.visual_center = partner.visual_center;
                spec.class_offsets = partner.class_offsets;
            } else {
                spec.template_tokens = partner.template_tokens;
            }
        }
        specs.push_back(std::move(spec));
    }
    return specs;
}

std::vector<TaskData> draw_data(const std::vector<TaskSpec>& specs, const ModelConfig& model, std::uint64_t seed) {
    std::vector<TaskData> data;
    for (std::size_t t = 0; t < specs.size(); ++t) {
        const TaskSpec& spec = specs[t];
        SeededRng rng(SeededRng::derive(seed, "samples." + spec.name));
        TaskData d;
        d.task_id = spec.name;
        const std::uint64_t id_base = (t + 1) * 1'000'000ULL;
        for (std::size_t i = 0; i < spec.n_train + spec.n_test; ++i) {
            Sample s = spec.draw(rng, id_base + i, model.visual_prefix_len);
            (i < spec.n_train ? d.train : d.test).push_back(std::move(s));
        }
        data.push_back(std::move(d));
    }
    return data;
}

json vector_json(std::span<const double> v) { return json(std::vector<double>(v.begin(), v.end())); }

Vector vector_from(const json& j) { return j.get<std::vector<double>>(); }

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        rows.push_back(vector_json(m.row(r)));
    }
    return rows;
}

Matrix matrix_from(const json& j, std::size_t cols) {
    Matrix m(j.size(), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
        const Vector row = vector_from(j.at(r));
        if (row.size() != cols) {
            throw IngestionError("suite: ragged matrix in suite.json");
        }
        std::copy(row.begin(), row.end(), m.row(r).begin());
    }
    return m;
}

json bench_json(const BenchConfig& b) {
    return {{"preset", b.preset},
            {"n_tasks", b.n_tasks},
            {"n_train", b.n_train},
            {"n_test", b.n_test},
            {"n_classes", b.n_classes},
            {"n_slots", b.n_slots},
            {"template_len", b.template_len},
            {"answer_lengths", b.answer_lengths},
            {"center_scale", b.center_scale},
            {"offset_scale", b.offset_scale},
            {"visual_noise", b.visual_noise},
            {"separability_threshold", b.separability_threshold},
            {"max_attempts", b.max_attempts}};
}

BenchConfig bench_from(const json& j) {
    BenchConfig b;
    b.preset = j.at("preset").get<std::string>();
    b.n_tasks = j.at("n_tasks").get<std::size_t>();
    b.n_train = j.at("n_train").get<std::size_t>();
    b.n_test = j.at("n_test").get<std::size_t>();
    b.n_classes = j.at("n_classes").get<std::size_t>();
    b.n_slots = j.at("n_slots").get<std::size_t>();
    b.template_len = j.at("template_len").get<std::size_t>();
    b.answer_lengths = j.at("answer_lengths").get<std::vector<std::size_t>>();
    b.center_scale = j.at("center_scale").get<double>();
    b.offset_scale = j.at("offset_scale").get<double>();
    b.visual_noise = j.at("visual_noise").get<double>();
    b.separability_threshold = j.at("separability_threshold").get<double>();
    b.max_attempts = j.at("max_attempts").get<std::size_t>();
    return b;
}

json spec_json(const TaskSpec& s) {
    return {{"name", s.name},
            {"separability", separability_name(s.separability)},
            {"partner", s.partner},
            {"visual_center", vector_json(s.visual_center)},
            {"class_offsets", matrix_json(s.class_offsets)},
            {"visual_noise", s.visual_noise},
            {"template_tokens", s.template_tokens},
            {"slot_position", s.slot_position},
            {"slot_tokens", s.slot_tokens},
            {"answer_table", s.answer_table},
            {"n_train", s.n_train},
            {"n_test", s.n_test}};
}

TaskSpec spec_from(const json& j, const ModelConfig& model) {
    TaskSpec s;
    s.name = j.at("name").get<std::string>();
    s.separability = parse_separability(j.at("separability").get<std::string>());
    s.partner = j.at("partner").get<std::string>();
    s.visual_center = vector_from(j.at("visual_center"));
    s.class_offsets = matrix_from(j.at("class_offsets"), model.visual_dim);
    s.visual_noise = j.at("visual_noise").get<double>();
    s.template_tokens = j.at("template_tokens").get<std::vector<int>>();
    s.slot_position = j.at("slot_position").get<std::size_t>();
    s.slot_tokens = j.at("slot_tokens").get<std::vector<int>>();
    s.answer_table = j.at("answer_table").get<std::vector<std::vector<int>>>();
    s.n_train = j.at("n_train").get<std::size_t>();
    s.n_test = j.at("n_test").get<std::size_t>();
    if (s.visual_center.size() != model.visual_dim || s.answer_table.size() != s.n_classes() * s.n_slots() ||
        s.slot_position > s.template_tokens.size()) {
        throw IngestionError("suite: task '" + s.name + "' is inconsistent with the model config");
    }
    return s;
}

json separability_json(const SeparabilityReport& r) {
    return {{"threshold", r.threshold},
            {"attempts", r.attempts},
            {"passed", r.passed()},
            {"visual_cosine", matrix_json(r.visual)},
            {"instruction_cosine", matrix_json(r.instruction)}};
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IngestionError("cannot open " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            lines.push_back(line);
        }
    }
    return lines;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw IngestionError("cannot write " + path.string());
    }
}

}  // namespace

std::string_view separability_name(Separability s) {
    switch (s) {
        case Separability::separated: return "separated";
        case Separability::visual_confusable: return "visual-confusable";
        case Separability::text_confusable: return "text-confusable";
    }
    return "?";
}

Separability parse_separability(std::string_view name) {
    for (Separability s : {Separability::separated, Separability::visual_confusable, Separability::text_confusable}) {
        if (separability_name(s) == name) {
            return s;
        }
    }
    throw IngestionError(fmt::format("unknown separability class '{}'", name));
}

const std::vector<int>& TaskSpec::answer_for(std::size_t cls, std::size_t slot) const {
    if (cls >= n_classes() || slot >= n_slots()) {
        throw ContractError(fmt::format("task '{}': no answer for class {} slot {}", name, cls, slot));
    }
    return answer_table[cls * n_slots() + slot];
}

Sample TaskSpec::draw(SeededRng& rng, std::uint64_t id, std::size_t prefix_len) const {
    const std::size_t cls = rng.uniform_index(n_classes());
    const std::size_t slot = rng.uniform_index(n_slots());
    Sample s;
    s.id = id;
    s.task = name;
    s.prompt.visual = Matrix(prefix_len, visual_center.size());
    for (std::size_t p = 0; p < prefix_len; ++p) {
        for (std::size_t c = 0; c < visual_center.size(); ++c) {
            s.prompt.visual(p, c) = visual_center[c] + class_offsets(cls, c) + rng.normal(0.0, visual_noise);
        }
    }
    s.prompt.instruction = template_tokens;
    s.prompt.instruction.insert(s.prompt.instruction.begin() + static_cast<std::ptrdiff_t>(slot_position),
                                slot_tokens[slot]);
    s.answer = answer_for(cls, slot);
    return s;
}

void BenchConfig::validate(const ModelConfig& model) const {
    if (preset != "confusable" && preset != "separated") {
        throw ConfigurationError("bench: preset must be 'confusable' or 'separated', got '" + preset + "'");
    }
    if (n_tasks < 2) {
        throw ConfigurationError("bench: need at least two tasks");
    }
    if (preset == "confusable" && n_tasks < 4) {
        throw ConfigurationError("bench: the confusable preset needs at least four tasks");
    }
    if (n_train == 0 || n_test == 0 || n_classes == 0 || n_slots == 0 || template_len == 0 || max_attempts == 0) {
        throw ConfigurationError("bench: counts must be positive");
    }
    if (answer_lengths.empty() ||
        std::any_of(answer_lengths.begin(), answer_lengths.end(), [](std::size_t n) { return n < 2; })) {
        throw ConfigurationError("bench: answers need a slot token and at least one class token");
    }
    if (first_answer_token(*this) + 2 > model.vocab_size) {
        throw ConfigurationError(fmt::format("bench: vocabulary of {} leaves no room for answers after {} "
                                             "template and slot tokens",
                                             model.vocab_size, first_answer_token(*this)));
    }
    const std::size_t longest = *std::max_element(answer_lengths.begin(), answer_lengths.end());
    if (model.visual_prefix_len + template_len + 1 + longest > model.max_seq_len) {
        throw ConfigurationError("bench: prompts plus answers exceed max_seq_len");
    }
    if (!(center_scale > 0.0) || !(offset_scale >= 0.0) || !(visual_noise >= 0.0)) {
        throw ConfigurationError("bench: visual scales must be non-negative and the center scale positive");
    }
    if (!(separability_threshold > -1.0 && separability_threshold <= 1.0)) {
        throw ConfigurationError("bench: separability threshold must lie in (-1, 1]");
    }
}

bool SeparabilityReport::exempt(std::size_t i, std::size_t j, bool visual_side) const {
    auto shares = [&](std::size_t a, std::size_t b) {
        if (partners[a] != names[b]) {
            return false;
        }
        return visual_side ? classes[a] == Separability::visual_confusable
                           : classes[a] == Separability::text_confusable;
    };
    return shares(i, j) || shares(j, i);
}

bool SeparabilityReport::passed() const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        for (std::size_t j = i + 1; j < names.size(); ++j) {
            if (!exempt(i, j, true) && !(visual(i, j) < threshold)) return false;
            if (!exempt(i, j, false) && !(instruction(i, j) < threshold)) return false;
        }
    }
    return true;
}

std::string SeparabilityReport::worst_pair() const {
    std::string worst = "none";
    double top = -2.0;
    for (std::size_t i = 0; i < names.size(); ++i) {
        for (std::size_t j = i + 1; j < names.size(); ++j) {
            for (bool vis : {true, false}) {
                const double c = vis ? visual(i, j) : instruction(i, j);
                if (!exempt(i, j, vis) && c > top) {
                    top = c;
                    worst = fmt::format("{}/{} {} cosine {:.4f}", names[i], names[j], vis ? "visual" : "instruction",
                                        c);
                }
            }
        }
    }
    return worst;
}

std::vector<TaskTestSet> Suite::test_sets() const {
    std::vector<TaskTestSet> out;
    for (const TaskData& d : data) {
        out.push_back({d.task_id, d.test});
    }
    return out;
}

SeparabilityReport measure_separability(const FrozenEncoder& encoder, const std::vector<TaskSpec>& specs,
                                        const std::vector<TaskData>& data, double threshold) {
    SeparabilityReport r;
    r.threshold = threshold;
    const std::size_t n = specs.size();
    std::vector<TaskAnchor> anchors;
    for (std::size_t t = 0; t < n; ++t) {
        anchors.push_back(extract_anchor(encoder, specs[t].name, data.at(t).train));
        r.names.push_back(specs[t].name);
        r.classes.push_back(specs[t].separability);
        r.partners.push_back(specs[t].partner);
    }
    r.visual = Matrix(n, n);
    r.instruction = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            r.visual(i, j) = cosine_similarity(anchors[i].m_v, anchors[j].m_v);
            r.instruction(i, j) = cosine_similarity(anchors[i].m_ins, anchors[j].m_ins);
        }
    }
    return r;
}

Suite generate_suite(const ModelConfig& model, const BenchConfig& bench, std::uint64_t seed, std::size_t feat_dim) {
    model.validate();
    bench.validate(model);
    const FrozenParts frozen = FrozenParts::from_seed(model, seed, feat_dim);
    std::string last_failure;
    for (std::size_t attempt = 0; attempt < bench.max_attempts; ++attempt) {
        SeededRng rng(SeededRng::derive(seed, fmt::format("suite.attempt{}", attempt)));
        std::vector<TaskSpec> specs = make_specs(model, bench, rng);
        std::vector<TaskData> data =
            draw_data(specs, model, SeededRng::derive(seed, fmt::format("suite.samples{}", attempt)));
        SeparabilityReport report = measure_separability(*frozen.encoder, specs, data, bench.separability_threshold);
        report.attempts = attempt + 1;
        if (report.passed()) {
            Suite suite;
            suite.seed = seed;
            suite.model = model;
            suite.bench = bench;
            suite.feat_dim = feat_dim;
            suite.specs = std::move(specs);
            suite.data = std::move(data);
            suite.separability = std::move(report);
            return suite;
        }
        last_failure = report.worst_pair();
    }
    throw GenerationError(fmt::format("no task layout met the separability threshold {} in {} attempts (seed {}); "
                                      "last worst pair: {}",
                                      bench.separability_threshold, bench.max_attempts, seed, last_failure));
}

std::string sample_to_json(const Sample& s) {
    json j;
    j["id"] = s.id;
    j["task"] = s.task;
    j["visual"] = vector_json(s.prompt.visual.values());
    j["instruction"] = s.prompt.instruction;
    j["answer"] = s.answer;
    return j.dump();
}

Sample sample_from_json(const std::string& line, const ModelConfig& cfg) {
    Sample s;
    try {
        const json j = json::parse(line);
        s.id = j.at("id").get<std::uint64_t>();
        s.task = j.at("task").get<std::string>();
        const Vector visual = vector_from(j.at("visual"));
        if (visual.size() != cfg.visual_prefix_len * cfg.visual_dim) {
            throw IngestionError(fmt::format("sample {}: visual has {} values, expected {}", s.id, visual.size(),
                                             cfg.visual_prefix_len * cfg.visual_dim));
        }
        s.prompt.visual = Matrix(cfg.visual_prefix_len, cfg.visual_dim, visual);
        s.prompt.instruction = j.at("instruction").get<std::vector<int>>();
        s.answer = j.at("answer").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw IngestionError(std::string("malformed sample record: ") + e.what());
    }
    s.validate(cfg);
    return s;
}

void write_suite(const Suite& suite, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["seed"] = suite.seed;
    manifest["model"] = suite.model.to_key_values();
    manifest["bench"] = bench_json(suite.bench);
    manifest["feat_dim"] = suite.feat_dim;
    json specs = json::array();
    for (const TaskSpec& s : suite.specs) {
        specs.push_back(spec_json(s));
    }
    manifest["tasks"] = specs;
    manifest["separability"] = separability_json(suite.separability);
    write_text(dir / "suite.json", manifest.dump(2) + "\n");
    for (const TaskData& d : suite.data) {
        for (const auto& [split, samples] : {std::pair{"train", &d.train}, std::pair{"test", &d.test}}) {
            std::string text;
            for (const Sample& s : *samples) {
                text += sample_to_json(s);
                text += '\n';
            }
            write_text(dir / fmt::format("{}.{}.jsonl", d.task_id, split), text);
        }
    }
}

Suite read_suite(const std::filesystem::path& dir) {
    std::ifstream in(dir / "suite.json");
    if (!in) {
        throw IngestionError("cannot open " + (dir / "suite.json").string());
    }
    Suite suite;
    try {
        const json manifest = json::parse(in);
        suite.seed = manifest.at("seed").get<std::uint64_t>();
        suite.model = ModelConfig::from_key_values(manifest.at("model").get<std::map<std::string, std::string>>());
        suite.bench = bench_from(manifest.at("bench"));
        suite.feat_dim = manifest.at("feat_dim").get<std::size_t>();
        for (const json& t : manifest.at("tasks")) {
            suite.specs.push_back(spec_from(t, suite.model));
        }
        suite.bench.validate(suite.model);
    } catch (const json::exception& e) {
        throw IngestionError(std::string("malformed suite.json: ") + e.what());
    } catch (const ConfigurationError& e) {
        throw IngestionError(std::string("suite.json: ") + e.what());
    }
    for (const TaskSpec& spec : suite.specs) {
        TaskData d;
        d.task_id = spec.name;
        for (const auto& [split, samples] : {std::pair{"train", &d.train}, std::pair{"test", &d.test}}) {
            for (const std::string& line : read_lines(dir / fmt::format("{}.{}.jsonl", spec.name, split))) {
                Sample s = sample_from_json(line, suite.model);
                if (s.task != spec.name) {
                    throw IngestionError(fmt::format("sample {} in {}.{}.jsonl belongs to task '{}'", s.id, spec.name,
                                                     split, s.task));
                }
                samples->push_back(std::move(s));
            }
        }
        if (d.train.empty() || d.test.empty()) {
            throw IngestionError("task '" + spec.name + "' has an empty split");
        }
        suite.data.push_back(std::move(d));
    }
    const FrozenParts frozen = FrozenParts::from_seed(suite.model, suite.seed, suite.feat_dim);
    suite.separability =
        measure_separability(*frozen.encoder, suite.specs, suite.data, suite.bench.separability_threshold);
    if (!suite.separability.passed()) {
        throw IngestionError("loaded suite fails its separability check: " + suite.separability.worst_pair());
    }
    return suite;
}

}  // namespace hide_forge
