// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "hide_forge/adapters.hpp"
#include "hide_forge/errors.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hide_forge;

namespace {

// d_model = d_ff = 2, rank 1, scaling 1: every site is 2×2.
ModelConfig two_by_two() {
    ModelConfig cfg;
    cfg.vocab_size = 4;
    cfg.d_model = 2;
    cfg.n_blocks = 2;
    cfg.n_heads = 1;
    cfg.d_ff = 2;
    cfg.max_seq_len = 4;
    cfg.visual_dim = 2;
    cfg.visual_prefix_len = 1;
    cfg.lora_rank = 1;
    cfg.lora_alpha = 1.0;
    return cfg;
}

TaskAdapterSet set_with(const ModelConfig& cfg, const std::string& task, const Matrix& a, const Matrix& b) {
    SeededRng rng(1);
    TaskAdapterSet set = TaskAdapterSet::initialized(cfg, task, rng);
    for (LoraAdapter& adapter : set.adapters()) {
        adapter.a = a;
        adapter.b = b;
    }
    return set;
}

double max_abs_diff(const Vector& a, const Vector& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

}  // namespace

TEST_CASE("fresh adapter has an exactly zero delta") {
    const ModelConfig cfg = fixtures::tiny_config();
    SeededRng rng(3);
    const LoraAdapter adapter = LoraAdapter::initialized(cfg, {0, Site::ff_1}, rng);
    CHECK(adapter.a.rows() == cfg.lora_rank);
    CHECK(adapter.a.cols() == cfg.d_model);
    CHECK(adapter.b.rows() == cfg.d_ff);
    CHECK(adapter.scaling == cfg.lora_alpha / cfg.lora_rank);
    const Vector out = adapter_delta(adapter, rng.normal_vector(cfg.d_model, 5.0));
    CHECK(out == Vector(cfg.d_ff, 0.0));
}

TEST_CASE("adapter_delta by hand") {
    LoraAdapter adapter;
    adapter.a = Matrix::from_rows({{1, 0}});
    adapter.b = Matrix::from_rows({{1}, {0}});
    adapter.scaling = 1.0;
    CHECK(adapter_delta(adapter, Vector{1, 1}) == Vector{1, 0});
    CHECK_THROWS_AS(adapter_delta(adapter, Vector{1, 1, 1}), ContractError);
}

TEST_CASE("adapter_delta is linear") {
    const ModelConfig cfg = fixtures::tiny_config();
    SeededRng rng(8);
    const TaskAdapterSet set = fixtures::random_adapters(cfg, "t", rng);
    for (const LoraAdapter& adapter : set.adapters()) {
        const Vector h = rng.normal_vector(adapter.d_in(), 1.0);
        Vector h2 = h;
        for (double& v : h2) v *= 2.0;
        Vector once = adapter_delta(adapter, h);
        for (double& v : once) v *= 2.0;
        CHECK(max_abs_diff(adapter_delta(adapter, h2), once) <= 1e-12);
    }
}

TEST_CASE("merge_adapters hand-computed two-task sum") {
    const ModelConfig cfg = two_by_two();
    const TaskAdapterSet first = set_with(cfg, "a", Matrix::from_rows({{1, 0}}), Matrix::from_rows({{1}, {0}}));
    const TaskAdapterSet second = set_with(cfg, "b", Matrix::from_rows({{0, 1}}), Matrix::from_rows({{0}, {2}}));
    const TaskAdapterSet* sets[] = {&first, &second};
    const double eps[] = {1.0, 1.0};
    const auto sites = non_top_sites(cfg);
    const MergedDelta merged = merge_adapters(sets, eps, sites);
    CHECK(merged.deltas.size() == sites.size());
    for (SiteId id : sites) {
        CHECK(matvec(merged.at(id), Vector{1, 1}) == Vector{1, 2});
    }
    CHECK_FALSE(merged.covers({1, Site::attn_q}));
}

TEST_CASE("merge_adapters singleton and zero coefficients") {
    const ModelConfig cfg = fixtures::tiny_config();
    SeededRng rng(4);
    const TaskAdapterSet set = fixtures::random_adapters(cfg, "t", rng);
    const TaskAdapterSet* sets[] = {&set};
    const auto sites = non_top_sites(cfg);

    const double one[] = {1.0};
    const MergedDelta merged = merge_adapters(sets, one, sites);
    for (SiteId id : sites) {
        const Vector h = rng.normal_vector(site_shape(cfg, id.site).d_in, 1.0);
        CHECK(max_abs_diff(matvec(merged.at(id), h), adapter_delta(set.at(id), h)) <= 1e-12);
    }

    const double zero[] = {0.0};
    const MergedDelta none = merge_adapters(sets, zero, sites);
    for (const auto& [id, delta] : none.deltas) {
        CHECK(frobenius_norm(delta) == 0.0);
    }
}

TEST_CASE("merge_adapters default coefficient is one") {
    const ModelConfig cfg = fixtures::tiny_config();
    SeededRng rng(9);
    const TaskAdapterSet a = fixtures::random_adapters(cfg, "a", rng);
    const TaskAdapterSet b = fixtures::random_adapters(cfg, "b", rng);
    const TaskAdapterSet* sets[] = {&a, &b};
    const double eps[] = {1.0, 1.0};
    const SiteId site{0, Site::attn_v};
    const SiteId only[] = {site};
    const MergedDelta merged = merge_adapters(sets, eps, only);
    const Matrix expected = a.at(site).dense_delta() + b.at(site).dense_delta();
    CHECK(frobenius_norm(merged.at(site) - expected) <= 1e-14);
}

TEST_CASE("merge_adapters contract errors") {
    const ModelConfig cfg = fixtures::tiny_config();
    SeededRng rng(5);
    const TaskAdapterSet a = fixtures::random_adapters(cfg, "a", rng);
    const TaskAdapterSet* sets[] = {&a};
    const double two[] = {1.0, 1.0};
    const auto sites = non_top_sites(cfg);
    CHECK_THROWS_AS(merge_adapters(sets, two, sites), ContractError);
    CHECK_THROWS_AS(merge_adapters({}, {}, sites), ContractError);

    ModelConfig shallow = cfg;
    shallow.n_blocks = 2;
    ModelConfig deep = cfg;
    deep.n_blocks = 3;
    const TaskAdapterSet small = fixtures::random_adapters(shallow, "s", rng);
    const TaskAdapterSet big = fixtures::random_adapters(deep, "b", rng);
    const TaskAdapterSet* mixed[] = {&big, &small};
    const double eps[] = {1.0, 1.0};
    CHECK_THROWS_AS(merge_adapters(mixed, eps, block_sites(2)), ConfigurationError);
}

TEST_CASE("merged delta commutes with applying adapters individually") {
    const ModelConfig cfg = fixtures::tiny_config();
    SeededRng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<TaskAdapterSet> sets;
        const std::size_t n = 1 + rng.uniform_index(4);
        for (std::size_t i = 0; i < n; ++i) {
            sets.push_back(fixtures::random_adapters(cfg, "t" + std::to_string(i), rng, 0.5));
        }
        std::vector<const TaskAdapterSet*> ptrs;
        Vector eps;
        for (const auto& s : sets) {
            ptrs.push_back(&s);
            eps.push_back(2.0 * rng.uniform() - 0.5);
        }
        const auto sites = non_top_sites(cfg);
        const MergedDelta merged = merge_adapters(ptrs, eps, sites);
        for (SiteId id : sites) {
            const Vector h = rng.normal_vector(site_shape(cfg, id.site).d_in, 2.0);
            Vector summed(site_shape(cfg, id.site).d_out, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const Vector d = adapter_delta(sets[i].at(id), h);
                for (std::size_t j = 0; j < d.size(); ++j) summed[j] += eps[i] * d[j];
            }
            CHECK(max_abs_diff(matvec(merged.at(id), h), summed) <= 1e-8);
        }
    }
}

TEST_CASE("mixture_output examples") {
    LoraAdapter e1, e2;
    e1.a = Matrix::from_rows({{1, 0}});
    e1.b = Matrix::from_rows({{1}, {0}});
    e2.a = Matrix::from_rows({{0, 1}});
    e2.b = Matrix::from_rows({{0}, {2}});
    const Vector h{1, 1};
    const LoraAdapter* experts[] = {&e1, &e2};
    // E1(h) = [1, 0], E2(h) = [0, 2]
    const Vector mixed = mixture_output(experts, Vector{0.7, 0.3}, h);
    CHECK(mixed[0] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(mixed[1] == doctest::Approx(0.6).epsilon(1e-15));

    CHECK(mixture_output(experts, Vector{0.0, 1.0}, h) == adapter_delta(e2, h));
    const LoraAdapter* same[] = {&e1, &e1, &e1};
    CHECK(max_abs_diff(mixture_output(same, Vector{0.2, 0.5, 0.3}, h), adapter_delta(e1, h)) <= 1e-15);

    CHECK_THROWS_AS(mixture_output(experts, Vector{0.7, 0.4}, h), ContractError);
    CHECK_THROWS_AS(mixture_output(experts, Vector{1.0}, h), ContractError);
}

TEST_CASE("one-hot mixture reproduces the single expert") {
    const ModelConfig cfg = fixtures::tiny_config();
    SeededRng rng(12);
    std::vector<TaskAdapterSet> sets;
    for (int i = 0; i < 3; ++i) sets.push_back(fixtures::random_adapters(cfg, "t", rng));
    for (std::size_t k = 0; k < sets.size(); ++k) {
        Vector d(sets.size(), 0.0);
        d[k] = 1.0;
        for (const LoraAdapter& adapter : sets[k].adapters()) {
            std::vector<const LoraAdapter*> experts;
            for (const auto& s : sets) experts.push_back(&s.at(adapter.site));
            const Vector h = rng.normal_vector(adapter.d_in(), 1.0);
            CHECK(max_abs_diff(mixture_output(experts, d, h), adapter_delta(adapter, h)) <= 1e-12);
        }
    }
}

TEST_CASE("task adapter set coverage is validated") {
    const ModelConfig cfg = fixtures::tiny_config();
    SeededRng rng(2);
    const TaskAdapterSet set = TaskAdapterSet::initialized(cfg, "t", rng);
    CHECK_NOTHROW(set.validate(cfg));
    CHECK(set.adapters().size() == cfg.n_blocks * kSitesPerBlock);
    ModelConfig deeper = cfg;
    deeper.n_blocks = 3;
    CHECK_THROWS_AS(set.validate(deeper), ConfigurationError);
    CHECK(SiteId::parse("block3.ff_2") == SiteId{3, Site::ff_2});
    CHECK(SiteId{1, Site::attn_o}.name() == "block1.attn_o");
    CHECK_THROWS_AS(SiteId::parse("blk1.ff_2"), IngestionError);
}

TEST_CASE("loaded parameter counts follow the composition structure") {
    const ModelConfig cfg = fixtures::tiny_config();
    SeededRng rng(6);
    auto a = std::make_shared<const TaskAdapterSet>(TaskAdapterSet::initialized(cfg, "a", rng));
    auto b = std::make_shared<const TaskAdapterSet>(TaskAdapterSet::initialized(cfg, "b", rng));
    ComposedAdapters c = ComposedAdapters::empty(cfg);
    c.block_modes = {BlockMode::merged, BlockMode::mixture};
    c.experts = {a, b};
    const LoadedParameterCount count = count_loaded_parameters(c, cfg);
    CHECK(count.adapters_per_block == std::vector<std::size_t>{0, 2 * kSitesPerBlock});
    CHECK(count.merged_sites_per_block == std::vector<std::size_t>{kSitesPerBlock, 0});
    const std::size_t block_lora = a->block_parameter_count(1);
    CHECK(count.adapter_equivalent_total == 3 * block_lora);
    CHECK(count.dense_total == 2 * block_lora + 4 * 16 * 16 + 2 * 16 * 24);
}
