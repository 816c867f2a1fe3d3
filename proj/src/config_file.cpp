// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/config_file.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <vector>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include "hide_forge/errors.hpp"
#include "hide_forge/report.hpp"
#include "hide_forge/state_io.hpp"

namespace hide_forge {

namespace {

struct Field {
    std::string name;
    std::function<void(SuiteConfig&, const YAML::Node&, const std::string&)> read;
    std::function<std::string(const SuiteConfig&)> write;
};

struct Section {
    std::string name;
    std::vector<Field> fields;
};

std::string scalar(const YAML::Node& node, const std::string& what) {
    if (!node.IsScalar()) {
        throw IngestionError(fmt::format("'{}' must be a scalar", what));
    }
    return node.Scalar();
}

std::vector<std::string> scalars(const YAML::Node& node, const std::string& what) {
    if (!node.IsSequence()) {
        throw IngestionError(fmt::format("'{}' must be a list", what));
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < node.size(); ++i) {
        out.push_back(scalar(node[i], fmt::format("{}[{}]", what, i)));
    }
    return out;
}

bool parse_bool(const std::string& text, const std::string& what) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw IngestionError(fmt::format("'{}' must be true or false, got '{}'", what, text));
}

template <typename Parse>
auto enum_value(const std::string& text, const std::string& what, Parse parse) {
    try {
        return parse(text);
    } catch (const std::exception&) {
        throw IngestionError(fmt::format("'{}': unknown value '{}'", what, text));
    }
}

std::string real_text(double v) { return fmt::format("{}", v); }

template <typename T>
std::string list_text(const std::vector<T>& items, const std::function<std::string(const T&)>& show) {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += (i == 0 ? "" : ", ") + show(items[i]);
    }
    return out + "]";
}

template <typename Member>
Field count_field(std::string name, Member member) {
    return {name,
            [member](SuiteConfig& c, const YAML::Node& n, const std::string& what) {
                std::invoke(member, c) = parse_u64(scalar(n, what), what);
            },
            [member](const SuiteConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename Member>
Field real_field(std::string name, Member member) {
    return {name,
            [member](SuiteConfig& c, const YAML::Node& n, const std::string& what) {
                std::invoke(member, c) = parse_real(scalar(n, what), what);
            },
            [member](const SuiteConfig& c) { return real_text(std::invoke(member, c)); }};
}

template <typename Member>
Field real_list_field(std::string name, Member member) {
    return {name,
            [member](SuiteConfig& c, const YAML::Node& n, const std::string& what) {
                std::vector<double> values;
                for (const std::string& s : scalars(n, what)) {
                    values.push_back(parse_real(s, what));
                }
                std::invoke(member, c) = std::move(values);
            },
            [member](const SuiteConfig& c) {
                return list_text<double>(std::invoke(member, c), [](const double& v) { return real_text(v); });
            }};
}

template <typename Member>
Field count_list_field(std::string name, Member member) {
    return {name,
            [member](SuiteConfig& c, const YAML::Node& n, const std::string& what) {
                std::vector<std::size_t> values;
                for (const std::string& s : scalars(n, what)) {
                    values.push_back(parse_u64(s, what));
                }
                std::invoke(member, c) = std::move(values);
            },
            [member](const SuiteConfig& c) {
                return list_text<std::size_t>(std::invoke(member, c),
                                              [](const std::size_t& v) { return std::to_string(v); });
            }};
}

template <typename Member>
Field strategy_list_field(std::string name, Member member) {
    return {name,
            [member](SuiteConfig& c, const YAML::Node& n, const std::string& what) {
                std::vector<Strategy> values;
                for (const std::string& s : scalars(n, what)) {
                    values.push_back(enum_value(s, what, [](const std::string& t) { return parse_strategy(t); }));
                }
                std::invoke(member, c) = std::move(values);
            },
            [member](const SuiteConfig& c) {
                return list_text<Strategy>(std::invoke(member, c),
                                           [](const Strategy& s) { return std::string(strategy_name(s)); });
            }};
}

const std::vector<Section>& schema() {
    static const std::vector<Section> sections = {
        {"run",
         {count_field("seed", [](auto& c) -> auto& { return c.seed; }),
          real_field("epsilon", [](auto& c) -> auto& { return c.epsilon; }),
          count_field("feat_dim", [](auto& c) -> auto& { return c.feat_dim; }),
          strategy_list_field("strategies", [](auto& c) -> auto& { return c.strategies; })}},
        {"model",
         {count_field("vocab_size", [](auto& c) -> auto& { return c.model.vocab_size; }),
          count_field("d_model", [](auto& c) -> auto& { return c.model.d_model; }),
          count_field("n_blocks", [](auto& c) -> auto& { return c.model.n_blocks; }),
          count_field("n_heads", [](auto& c) -> auto& { return c.model.n_heads; }),
          count_field("d_ff", [](auto& c) -> auto& { return c.model.d_ff; }),
          count_field("max_seq_len", [](auto& c) -> auto& { return c.model.max_seq_len; }),
          count_field("visual_dim", [](auto& c) -> auto& { return c.model.visual_dim; }),
          count_field("visual_prefix_len", [](auto& c) -> auto& { return c.model.visual_prefix_len; }),
          count_field("lora_rank", [](auto& c) -> auto& { return c.model.lora_rank; }),
          real_field("lora_alpha", [](auto& c) -> auto& { return c.model.lora_alpha; })}},
        {"bench",
         {{"preset",
           [](SuiteConfig& c, const YAML::Node& n, const std::string& what) { c.bench.preset = scalar(n, what); },
           [](const SuiteConfig& c) { return c.bench.preset; }},
          count_field("n_tasks", [](auto& c) -> auto& { return c.bench.n_tasks; }),
          count_field("n_train", [](auto& c) -> auto& { return c.bench.n_train; }),
          count_field("n_test", [](auto& c) -> auto& { return c.bench.n_test; }),
          count_field("n_classes", [](auto& c) -> auto& { return c.bench.n_classes; }),
          count_field("n_slots", [](auto& c) -> auto& { return c.bench.n_slots; }),
          count_field("template_len", [](auto& c) -> auto& { return c.bench.template_len; }),
          count_list_field("answer_lengths", [](auto& c) -> auto& { return c.bench.answer_lengths; }),
          real_field("center_scale", [](auto& c) -> auto& { return c.bench.center_scale; }),
          real_field("offset_scale", [](auto& c) -> auto& { return c.bench.offset_scale; }),
          real_field("visual_noise", [](auto& c) -> auto& { return c.bench.visual_noise; }),
          real_field("separability_threshold", [](auto& c) -> auto& { return c.bench.separability_threshold; }),
          count_field("max_attempts", [](auto& c) -> auto& { return c.bench.max_attempts; })}},
        {"router",
         {real_field("alpha", [](auto& c) -> auto& { return c.router.alpha; }),
          real_field("beta", [](auto& c) -> auto& { return c.router.beta; }),
          real_field("temperature", [](auto& c) -> auto& { return c.router.temperature; })}},
        {"train",
         {real_field("lora_lr", [](auto& c) -> auto& { return c.train.lora_lr; }),
          real_field("projector_lr", [](auto& c) -> auto& { return c.train.projector_lr; }),
          count_field("batch_size", [](auto& c) -> auto& { return c.train.batch_size; }),
          count_field("epochs", [](auto& c) -> auto& { return c.train.epochs; }),
          real_field("warmup_ratio", [](auto& c) -> auto& { return c.train.warmup_ratio; }),
          real_field("adam_beta1", [](auto& c) -> auto& { return c.train.adam_beta1; }),
          real_field("adam_beta2", [](auto& c) -> auto& { return c.train.adam_beta2; }),
          real_field("adam_eps", [](auto& c) -> auto& { return c.train.adam_eps; }),
          {"sequential_baseline",
           [](SuiteConfig& c, const YAML::Node& n, const std::string& what) {
               c.train.sequential_baseline = parse_bool(scalar(n, what), what);
           },
           [](const SuiteConfig& c) { return std::string(c.train.sequential_baseline ? "true" : "false"); }}}},
        {"sweep",
         {real_list_field("epsilons", [](auto& c) -> auto& { return c.sweep.epsilons; }),
          real_list_field("temperatures", [](auto& c) -> auto& { return c.sweep.temperatures; }),
          {"modalities",
           [](SuiteConfig& c, const YAML::Node& n, const std::string& what) {
               std::vector<Modality> values;
               for (const std::string& s : scalars(n, what)) {
                   values.push_back(enum_value(s, what, [](const std::string& t) { return parse_modality(t); }));
               }
               c.sweep.modalities = std::move(values);
           },
           [](const SuiteConfig& c) {
               return list_text<Modality>(c.sweep.modalities,
                                          [](const Modality& m) { return std::string(modality_name(m)); });
           }},
          strategy_list_field("strategies", [](auto& c) -> auto& { return c.sweep.strategies; }),
          count_field("order_permutations", [](auto& c) -> auto& { return c.sweep.order_permutations; })}},
        {"cka",
         {count_field("probe_size", [](auto& c) -> auto& { return c.cka.probe_size; }),
          {"position",
           [](SuiteConfig& c, const YAML::Node& n, const std::string& what) {
               const std::string s = scalar(n, what);
               if (s == "final") {
                   c.cka.position = ProbePosition::final_position;
               } else if (s == "mean") {
                   c.cka.position = ProbePosition::mean_over_positions;
               } else {
                   throw IngestionError(fmt::format("'{}' must be final or mean, got '{}'", what, s));
               }
           },
           [](const SuiteConfig& c) {
               return std::string(c.cka.position == ProbePosition::final_position ? "final" : "mean");
           }}}},
    };
    return sections;
}

}  // namespace

SuiteConfig parse_suite_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw IngestionError(std::string("config is not valid YAML: ") + e.what());
    }
    SuiteConfig cfg;
    if (root.IsNull()) {
        cfg.validate();
        return cfg;
    }
    if (!root.IsMap()) {
        throw IngestionError("config must be a mapping of sections");
    }
    std::set<std::string> seen_sections;
    for (const auto& entry : root) {
        const std::string section_name = entry.first.as<std::string>();
        const auto section = std::find_if(schema().begin(), schema().end(),
                                          [&](const Section& s) { return s.name == section_name; });
        if (section == schema().end()) {
            throw IngestionError(fmt::format("unknown config section '{}'", section_name));
        }
        if (!seen_sections.insert(section_name).second) {
            throw IngestionError(fmt::format("config section '{}' appears twice", section_name));
        }
        if (entry.second.IsNull()) {
            continue;
        }
        if (!entry.second.IsMap()) {
            throw IngestionError(fmt::format("config section '{}' must be a mapping", section_name));
        }
        std::set<std::string> seen_keys;
        for (const auto& kv : entry.second) {
            const std::string key = kv.first.as<std::string>();
            const std::string what = section_name + "." + key;
            const auto field = std::find_if(section->fields.begin(), section->fields.end(),
                                            [&](const Field& f) { return f.name == key; });
            if (field == section->fields.end()) {
                throw IngestionError(fmt::format("unknown config key '{}'", what));
            }
            if (!seen_keys.insert(key).second) {
                throw IngestionError(fmt::format("config key '{}' appears twice", what));
            }
            field->read(cfg, kv.second, what);
        }
    }
    cfg.validate();
    return cfg;
}

SuiteConfig read_suite_config(const std::filesystem::path& path) { return parse_suite_config(read_text_file(path)); }

std::string canonical_config_text(const SuiteConfig& cfg) {
    std::string out;
    for (const Section& section : schema()) {
        out += section.name + ":\n";
        for (const Field& field : section.fields) {
            out += fmt::format("  {}: {}\n", field.name, field.write(cfg));
        }
    }
    return out;
}

std::string config_hash(const SuiteConfig& cfg) {
    const std::string text = canonical_config_text(cfg);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_Digest(text.data(), text.size(), digest, &length, EVP_sha256(), nullptr);
    std::string hex;
    for (unsigned int i = 0; i < length; ++i) {
        hex += fmt::format("{:02x}", digest[i]);
    }
    return hex;
}

}  // namespace hide_forge
