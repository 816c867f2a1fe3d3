// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "hide_forge/errors.hpp"

namespace hide_forge {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluCoeff = 0.7978845608028654;  // sqrt(2 / pi)

// ---------------------------------------------------------------------------
// Tape: everything backward() needs from the forward pass.

struct SiteTape {
    Matrix input;  // X fed to the linear site
    Matrix low;    // X Aᵀ for the trainable adapter
};

struct LayerNormTape {
    Matrix xhat;
    Vector inv_std;
};

struct BlockTape {
    LayerNormTape ln1;
    Matrix q, k, v;
    std::vector<Matrix> probs;  // one S×S attention matrix per head
    LayerNormTape ln2;
    Matrix pre_act;
    std::array<SiteTape, kSitesPerBlock> sites;
};

struct Tape {
    std::vector<BlockTape> blocks;
    LayerNormTape final_ln;
    Matrix final_normed;
};

// Chooses which adapter delta each linear site adds. Exactly one of the two
// pointers is set.
struct SiteResolver {
    const ComposedAdapters* composition = nullptr;
    const TaskAdapterSet* trainable = nullptr;
};

Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, LayerNormTape* tape) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    Matrix y(n, d);
    if (tape) {
        tape->xhat = Matrix(n, d);
        tape->inv_std.assign(n, 0.0);
    }
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = x.row(r);
        double mean = 0.0;
        for (double v : row) {
            mean += v;
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t c = 0; c < d; ++c) {
            const double xhat = (row[c] - mean) * inv_std;
            y(r, c) = gain[c] * xhat + bias[c];
            if (tape) {
                tape->xhat(r, c) = xhat;
            }
        }
        if (tape) {
            tape->inv_std[r] = inv_std;
        }
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormTape& tape, const Vector& gain) {
    const std::size_t n = dy.rows();
    const std::size_t d = dy.cols();
    Matrix dx(n, d);
    Vector dxhat(d);
    for (std::size_t r = 0; r < n; ++r) {
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dxhat[c] = dy(r, c) * gain[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * tape.xhat(r, c);
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
            dx(r, c) = tape.inv_std[r] * (dxhat[c] - mean_dxhat - tape.xhat(r, c) * mean_dxhat_xhat);
        }
    }
    return dx;
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluCoeff * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
    const double t = std::tanh(kGeluCoeff * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluCoeff * (1.0 + 3.0 * 0.044715 * x * x);
}

Matrix apply_site(const Matrix& x, const Matrix& weight, SiteId id, const SiteResolver& resolver, SiteTape* tape) {
    Matrix out = matmul_bt(x, weight);
    if (resolver.trainable) {
        const LoraAdapter& adapter = resolver.trainable->at(id);
        Matrix low = matmul_bt(x, adapter.a);
        add_matmul_bt(out, low, adapter.b, adapter.scaling);
        if (tape) {
            tape->input = x;
            tape->low = std::move(low);
        }
        return out;
    }
    const ComposedAdapters& comp = *resolver.composition;
    switch (comp.block_modes[id.block]) {
        case BlockMode::base: break;
        case BlockMode::merged: add_matmul_bt(out, x, comp.merged->at(id)); break;
        case BlockMode::mixture:
            for (std::size_t i = 0; i < comp.experts.size(); ++i) {
                if (comp.weights[i] != 0.0) {
                    add_adapter_rows(out, comp.experts[i]->at(id), x, comp.weights[i]);
                }
            }
            break;
    }
    return out;
}

// Returns dL/dX for the site input and accumulates adapter gradients.
Matrix apply_site_backward(const Matrix& dout, const Matrix& weight, SiteId id, const TaskAdapterSet& adapters,
                           const SiteTape& tape, TaskAdapterSet& grads) {
    Matrix dx = matmul(dout, weight);
    const LoraAdapter& adapter = adapters.at(id);
    LoraAdapter& grad = grads.at(id);
    add_matmul_at(grad.b, dout, tape.low, adapter.scaling);
    const Matrix dlow = matmul(dout, adapter.b) * adapter.scaling;
    add_matmul_at(grad.a, dlow, tape.input);
    add_matmul(dx, dlow, adapter.a);
    return dx;
}

Matrix embed(const BaseModel& base, const Projector& proj, const Prompt& prompt, std::span<const int> answer) {
    const ModelConfig& cfg = base.config;
    const std::size_t prefix = cfg.visual_prefix_len;
    const std::size_t length = prefix + prompt.instruction.size() + answer.size();
    if (prompt.visual.rows() != prefix || prompt.visual.cols() != cfg.visual_dim) {
        throw ContractError(fmt::format("prompt visual block is {}x{}, expected {}x{}", prompt.visual.rows(),
                                        prompt.visual.cols(), prefix, cfg.visual_dim));
    }
    if (length > cfg.max_seq_len) {
        throw ContractError(fmt::format("sequence length {} exceeds max_seq_len {}", length, cfg.max_seq_len));
    }
    Matrix x(length, cfg.d_model);
    const Matrix projected = matmul_bt(prompt.visual, proj.weight);
    for (std::size_t p = 0; p < prefix; ++p) {
        for (std::size_t c = 0; c < cfg.d_model; ++c) {
            x(p, c) = projected(p, c) + proj.bias[c];
        }
    }
    auto put_token = [&](std::size_t pos, int token) {
        if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size) {
            throw ContractError(fmt::format("token id {} outside vocabulary of {}", token, cfg.vocab_size));
        }
        const auto row = base.token_embedding.row(static_cast<std::size_t>(token));
        std::copy(row.begin(), row.end(), x.row(pos).begin());
    };
    std::size_t pos = prefix;
    for (int token : prompt.instruction) {
        put_token(pos++, token);
    }
    for (int token : answer) {
        put_token(pos++, token);
    }
    for (std::size_t p = 0; p < length; ++p) {
        for (std::size_t c = 0; c < cfg.d_model; ++c) {
            x(p, c) += base.position_embedding(p, c);
        }
    }
    return x;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads, BlockTape* tape) {
    const std::size_t n = q.rows();
    const std::size_t dh = q.cols() / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix ctx(n, q.cols());
    if (tape) {
        tape->probs.assign(n_heads, Matrix(n, n));
    }
    Vector row(n);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
            double peak = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                    s += q(i, off + c) * k(j, off + c);
                }
                row[j] = s * scale;
                peak = std::max(peak, row[j]);
            }
            double total = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                row[j] = std::exp(row[j] - peak);
                total += row[j];
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const double p = row[j] / total;
                if (tape) {
                    tape->probs[h](i, j) = p;
                }
                for (std::size_t c = 0; c < dh; ++c) {
                    ctx(i, off + c) += p * v(j, off + c);
                }
            }
        }
    }
    return ctx;
}

void attention_backward(const Matrix& dctx, const BlockTape& tape, std::size_t n_heads, Matrix& dq, Matrix& dk,
                        Matrix& dv) {
    const std::size_t n = dctx.rows();
    const std::size_t dh = dctx.cols() / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    dq = Matrix(n, dctx.cols());
    dk = Matrix(n, dctx.cols());
    dv = Matrix(n, dctx.cols());
    Vector dp(n);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        const Matrix& probs = tape.probs[h];
        for (std::size_t i = 0; i < n; ++i) {
            double weighted = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                    s += dctx(i, off + c) * tape.v(j, off + c);
                    dv(j, off + c) += probs(i, j) * dctx(i, off + c);
                }
                dp[j] = s;
                weighted += s * probs(i, j);
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const double ds = probs(i, j) * (dp[j] - weighted) * scale;
                for (std::size_t c = 0; c < dh; ++c) {
                    dq(i, off + c) += ds * tape.k(j, off + c);
                    dk(j, off + c) += ds * tape.q(i, off + c);
                }
            }
        }
    }
}

Matrix block_forward(const BlockWeights& w, std::size_t block, const Matrix& x, std::size_t n_heads,
                     const SiteResolver& resolver, BlockTape* tape) {
    auto site_tape = [&](Site s) { return tape ? &tape->sites[static_cast<std::size_t>(s)] : nullptr; };

    const Matrix a1 = layer_norm(x, w.ln1_gain, w.ln1_bias, tape ? &tape->ln1 : nullptr);
    Matrix q = apply_site(a1, w.wq, {block, Site::attn_q}, resolver, site_tape(Site::attn_q));
    Matrix k = apply_site(a1, w.wk, {block, Site::attn_k}, resolver, site_tape(Site::attn_k));
    Matrix v = apply_site(a1, w.wv, {block, Site::attn_v}, resolver, site_tape(Site::attn_v));
    const Matrix ctx = attention(q, k, v, n_heads, tape);
    Matrix mid = x + apply_site(ctx, w.wo, {block, Site::attn_o}, resolver, site_tape(Site::attn_o));

    const Matrix a2 = layer_norm(mid, w.ln2_gain, w.ln2_bias, tape ? &tape->ln2 : nullptr);
    Matrix pre = apply_site(a2, w.w1, {block, Site::ff_1}, resolver, site_tape(Site::ff_1));
    Matrix act(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) {
        act.data()[i] = gelu(pre.data()[i]);
    }
    mid += apply_site(act, w.w2, {block, Site::ff_2}, resolver, site_tape(Site::ff_2));
    if (tape) {
        tape->q = std::move(q);
        tape->k = std::move(k);
        tape->v = std::move(v);
        tape->pre_act = std::move(pre);
    }
    return mid;
}

Matrix block_backward(const Matrix& dout, const BlockWeights& w, std::size_t block, std::size_t n_heads,
                      const TaskAdapterSet& adapters, const BlockTape& tape, TaskAdapterSet& grads) {
    auto site_tape = [&](Site s) -> const SiteTape& { return tape.sites[static_cast<std::size_t>(s)]; };

    Matrix dact = apply_site_backward(dout, w.w2, {block, Site::ff_2}, adapters, site_tape(Site::ff_2), grads);
    for (std::size_t i = 0; i < dact.size(); ++i) {
        dact.data()[i] *= gelu_grad(tape.pre_act.data()[i]);
    }
    const Matrix da2 = apply_site_backward(dact, w.w1, {block, Site::ff_1}, adapters, site_tape(Site::ff_1), grads);
    Matrix dmid = dout + layer_norm_backward(da2, tape.ln2, w.ln2_gain);

    const Matrix dctx = apply_site_backward(dmid, w.wo, {block, Site::attn_o}, adapters, site_tape(Site::attn_o), grads);
    Matrix dq, dk, dv;
    attention_backward(dctx, tape, n_heads, dq, dk, dv);
    Matrix da1 = apply_site_backward(dq, w.wq, {block, Site::attn_q}, adapters, site_tape(Site::attn_q), grads);
    da1 += apply_site_backward(dk, w.wk, {block, Site::attn_k}, adapters, site_tape(Site::attn_k), grads);
    da1 += apply_site_backward(dv, w.wv, {block, Site::attn_v}, adapters, site_tape(Site::attn_v), grads);
    dmid += layer_norm_backward(da1, tape.ln1, w.ln1_gain);
    return dmid;
}

// Runs the trunk. `hidden` receives the residual stream after each block.
Matrix run_trunk(const BaseModel& base, Matrix x, const SiteResolver& resolver, Tape* tape,
                 std::vector<Matrix>* hidden) {
    const ModelConfig& cfg = base.config;
    if (tape) {
        tape->blocks.resize(cfg.n_blocks);
    }
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        x = block_forward(base.blocks[b], b, x, cfg.n_heads, resolver, tape ? &tape->blocks[b] : nullptr);
        if (hidden) {
            hidden->push_back(x);
        }
    }
    return x;
}

Matrix head_logits(const BaseModel& base, const Matrix& x, Tape* tape) {
    Matrix normed = layer_norm(x, base.final_gain, base.final_bias, tape ? &tape->final_ln : nullptr);
    Matrix logits = matmul_bt(normed, base.head);
    if (tape) {
        tape->final_normed = std::move(normed);
    }
    return logits;
}

void check_answer_span(const Matrix& logits, const ModelConfig& cfg, const Sample& sample) {
    if (sample.answer.empty()) {
        throw ContractError("sample has an empty answer");
    }
    const std::size_t first = first_answer_logit_row(cfg, sample.prompt);
    if (logits.cols() != cfg.vocab_size || first + sample.answer.size() > logits.rows()) {
        throw ContractError(fmt::format("logits ({}x{}) do not cover the answer span [{}, {})", logits.rows(),
                                        logits.cols(), first, first + sample.answer.size()));
    }
}

// log-softmax of one logit row evaluated at `target`.
double log_prob(std::span<const double> row, int target) {
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) {
        total += std::exp(v - peak);
    }
    return row[static_cast<std::size_t>(target)] - peak - std::log(total);
}

void hash_bytes(EVP_MD_CTX* ctx, const void* data, std::size_t size) { EVP_DigestUpdate(ctx, data, size); }

void hash_matrix(EVP_MD_CTX* ctx, const Matrix& m) {
    const std::uint64_t dims[2] = {m.rows(), m.cols()};
    hash_bytes(ctx, dims, sizeof(dims));
    hash_bytes(ctx, m.data(), m.size() * sizeof(double));
}

void hash_vector(EVP_MD_CTX* ctx, const Vector& v) {
    const std::uint64_t n = v.size();
    hash_bytes(ctx, &n, sizeof(n));
    hash_bytes(ctx, v.data(), v.size() * sizeof(double));
}

}  // namespace

const Matrix& BlockWeights::weight(Site site) const {
    switch (site) {
        case Site::attn_q: return wq;
        case Site::attn_k: return wk;
        case Site::attn_v: return wv;
        case Site::attn_o: return wo;
        case Site::ff_1: return w1;
        case Site::ff_2: return w2;
    }
    throw ContractError("unknown site");
}

BaseModel BaseModel::random(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SeededRng rng(seed);
    BaseModel m;
    m.config = cfg;
    const double d_model = static_cast<double>(cfg.d_model);
    const double d_ff = static_cast<double>(cfg.d_ff);
    m.token_embedding = rng.normal_matrix(cfg.vocab_size, cfg.d_model, 1.0);
    m.position_embedding = rng.normal_matrix(cfg.max_seq_len, cfg.d_model, 0.5);
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        BlockWeights w;
        w.wq = rng.normal_matrix(cfg.d_model, cfg.d_model, 1.0 / std::sqrt(d_model));
        w.wk = rng.normal_matrix(cfg.d_model, cfg.d_model, 1.0 / std::sqrt(d_model));
        w.wv = rng.normal_matrix(cfg.d_model, cfg.d_model, 1.0 / std::sqrt(d_model));
        w.wo = rng.normal_matrix(cfg.d_model, cfg.d_model, 1.0 / std::sqrt(d_model));
        w.w1 = rng.normal_matrix(cfg.d_ff, cfg.d_model, 1.0 / std::sqrt(d_model));
        w.w2 = rng.normal_matrix(cfg.d_model, cfg.d_ff, 1.0 / std::sqrt(d_ff));
        w.ln1_gain = rng.normal_vector(cfg.d_model, 0.1);
        w.ln2_gain = rng.normal_vector(cfg.d_model, 0.1);
        for (double& g : w.ln1_gain) g += 1.0;
        for (double& g : w.ln2_gain) g += 1.0;
        w.ln1_bias = rng.normal_vector(cfg.d_model, 0.1);
        w.ln2_bias = rng.normal_vector(cfg.d_model, 0.1);
        m.blocks.push_back(std::move(w));
    }
    m.final_gain.assign(cfg.d_model, 1.0);
    m.final_bias.assign(cfg.d_model, 0.0);
    m.head = rng.normal_matrix(cfg.vocab_size, cfg.d_model, 1.0 / std::sqrt(d_model));
    return m;
}

std::string BaseModel::checksum() const {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto& [key, value] : config.to_key_values()) {
        hash_bytes(ctx, key.data(), key.size());
        hash_bytes(ctx, value.data(), value.size());
    }
    hash_matrix(ctx, token_embedding);
    hash_matrix(ctx, position_embedding);
    for (const BlockWeights& w : blocks) {
        for (Site s : kAllSites) {
            hash_matrix(ctx, w.weight(s));
        }
        hash_vector(ctx, w.ln1_gain);
        hash_vector(ctx, w.ln1_bias);
        hash_vector(ctx, w.ln2_gain);
        hash_vector(ctx, w.ln2_bias);
    }
    hash_vector(ctx, final_gain);
    hash_vector(ctx, final_bias);
    hash_matrix(ctx, head);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex += fmt::format("{:02x}", digest[i]);
    }
    return hex;
}

void BaseModel::validate() const {
    config.validate();
    const ModelConfig& c = config;
    auto expect = [](const Matrix& m, std::size_t r, std::size_t cols, const char* what) {
        if (m.rows() != r || m.cols() != cols) {
            throw ConfigurationError(fmt::format("base model: {} is {}x{}, expected {}x{}", what, m.rows(), m.cols(), r,
                                                 cols));
        }
    };
    auto expect_len = [&](const Vector& v, const char* what) {
        if (v.size() != c.d_model) {
            throw ConfigurationError(fmt::format("base model: {} has length {}, expected {}", what, v.size(), c.d_model));
        }
    };
    expect(token_embedding, c.vocab_size, c.d_model, "token_embedding");
    expect(position_embedding, c.max_seq_len, c.d_model, "position_embedding");
    expect(head, c.vocab_size, c.d_model, "head");
    if (blocks.size() != c.n_blocks) {
        throw ConfigurationError("base model: block count does not match config");
    }
    for (const BlockWeights& w : blocks) {
        for (Site s : kAllSites) {
            const SiteShape shape = site_shape(c, s);
            expect(w.weight(s), shape.d_out, shape.d_in, "site weight");
        }
        expect_len(w.ln1_gain, "ln1_gain");
        expect_len(w.ln1_bias, "ln1_bias");
        expect_len(w.ln2_gain, "ln2_gain");
        expect_len(w.ln2_bias, "ln2_bias");
    }
    expect_len(final_gain, "final_gain");
    expect_len(final_bias, "final_bias");
}

Projector Projector::random(const ModelConfig& cfg, std::uint64_t seed) {
    SeededRng rng(seed);
    Projector p;
    p.weight = rng.normal_matrix(cfg.d_model, cfg.visual_dim, 1.0 / std::sqrt(static_cast<double>(cfg.visual_dim)));
    p.bias.assign(cfg.d_model, 0.0);
    return p;
}

Projector Projector::zeros(const ModelConfig& cfg) {
    Projector p;
    p.weight = Matrix(cfg.d_model, cfg.visual_dim);
    p.bias.assign(cfg.d_model, 0.0);
    return p;
}

void Projector::validate(const ModelConfig& cfg) const {
    if (weight.rows() != cfg.d_model || weight.cols() != cfg.visual_dim || bias.size() != cfg.d_model) {
        throw ConfigurationError("projector shape does not match the model config");
    }
    if (!all_finite(weight.values()) || !all_finite(bias)) {
        throw ConfigurationError("projector has non-finite entries");
    }
}

std::size_t Sample::sequence_length() const {
    return prompt.visual.rows() + prompt.instruction.size() + answer.size();
}

void Sample::validate(const ModelConfig& cfg) const {
    if (prompt.visual.rows() != cfg.visual_prefix_len || prompt.visual.cols() != cfg.visual_dim) {
        throw IngestionError(fmt::format("sample {}: visual block must be {}x{}", id, cfg.visual_prefix_len,
                                         cfg.visual_dim));
    }
    if (!all_finite(prompt.visual.values())) {
        throw IngestionError(fmt::format("sample {}: non-finite visual value", id));
    }
    if (answer.empty()) {
        throw IngestionError(fmt::format("sample {}: empty answer", id));
    }
    if (sequence_length() > cfg.max_seq_len) {
        throw IngestionError(fmt::format("sample {}: length {} exceeds max_seq_len {}", id, sequence_length(),
                                         cfg.max_seq_len));
    }
    auto check = [&](const std::vector<int>& tokens) {
        for (int t : tokens) {
            if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
                throw IngestionError(fmt::format("sample {}: token {} outside vocabulary", id, t));
            }
        }
    };
    check(prompt.instruction);
    check(answer);
}

std::size_t first_answer_logit_row(const ModelConfig& cfg, const Prompt& prompt) {
    return cfg.visual_prefix_len + prompt.instruction.size() - 1;
}

Matrix forward(const BaseModel& base, const Projector& proj, const ComposedAdapters& composition,
               const Prompt& prompt, std::span<const int> answer) {
    composition.validate(base.config);
    const SiteResolver resolver{.composition = &composition};
    const Matrix x = run_trunk(base, embed(base, proj, prompt, answer), resolver, nullptr, nullptr);
    return head_logits(base, x, nullptr);
}

Matrix forward(const BaseModel& base, const Projector& proj, const ComposedAdapters& composition,
               const Sample& sample) {
    return forward(base, proj, composition, sample.prompt, sample.answer);
}

Matrix block_outputs(const BaseModel& base, const Projector& proj, const ComposedAdapters& composition,
                     const Prompt& prompt, ProbePosition pooling) {
    composition.validate(base.config);
    const SiteResolver resolver{.composition = &composition};
    std::vector<Matrix> hidden;
    run_trunk(base, embed(base, proj, prompt, {}), resolver, nullptr, &hidden);
    const std::size_t d = base.config.d_model;
    Matrix out(hidden.size(), d);
    for (std::size_t b = 0; b < hidden.size(); ++b) {
        const Matrix& h = hidden[b];
        if (pooling == ProbePosition::final_position) {
            const auto last = h.row(h.rows() - 1);
            std::copy(last.begin(), last.end(), out.row(b).begin());
        } else {
            const Vector mean = column_means(h);
            std::copy(mean.begin(), mean.end(), out.row(b).begin());
        }
    }
    return out;
}

double autoregressive_loss(const Matrix& logits, const ModelConfig& cfg, const Sample& sample) {
    check_answer_span(logits, cfg, sample);
    const std::size_t first = first_answer_logit_row(cfg, sample.prompt);
    double loss = 0.0;
    for (std::size_t l = 0; l < sample.answer.size(); ++l) {
        loss -= log_prob(logits.row(first + l), sample.answer[l]);
    }
    return loss;
}

bool greedy_matches(const Matrix& logits, const ModelConfig& cfg, const Sample& sample) {
    check_answer_span(logits, cfg, sample);
    const std::size_t first = first_answer_logit_row(cfg, sample.prompt);
    for (std::size_t l = 0; l < sample.answer.size(); ++l) {
        const auto row = logits.row(first + l);
        // Lowest token id wins ties.
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best != sample.answer[l]) {
            return false;
        }
    }
    return true;
}

Gradients Gradients::zeros_like(const TaskAdapterSet& adapters, const ModelConfig& cfg) {
    return Gradients{TaskAdapterSet::zeros_like(adapters), Projector::zeros(cfg), 0.0};
}

void Gradients::accumulate(const Gradients& other) {
    auto dst = adapters.adapters();
    const auto src = other.adapters.adapters();
    if (dst.size() != src.size()) {
        throw ContractError("Gradients::accumulate: adapter layouts differ");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i].a += src[i].a;
        dst[i].b += src[i].b;
    }
    projector.weight += other.projector.weight;
    for (std::size_t i = 0; i < projector.bias.size(); ++i) {
        projector.bias[i] += other.projector.bias[i];
    }
    loss += other.loss;
}

void Gradients::scale(double factor) {
    for (LoraAdapter& a : adapters.adapters()) {
        a.a *= factor;
        a.b *= factor;
    }
    projector.weight *= factor;
    for (double& b : projector.bias) {
        b *= factor;
    }
    loss *= factor;
}

Gradients backward(const BaseModel& base, const Projector& proj, const TaskAdapterSet& adapters,
                   const Sample& sample) {
    const ModelConfig& cfg = base.config;
    adapters.validate(cfg);
    const SiteResolver resolver{.trainable = &adapters};
    Tape tape;
    const Matrix x = run_trunk(base, embed(base, proj, sample.prompt, sample.answer), resolver, &tape, nullptr);
    const Matrix logits = head_logits(base, x, &tape);

    Gradients grads = Gradients::zeros_like(adapters, cfg);
    grads.loss = autoregressive_loss(logits, cfg, sample);

    // d(-log softmax)/dlogits = softmax - onehot, on answer rows only.
    Matrix dlogits(logits.rows(), logits.cols());
    const std::size_t first = first_answer_logit_row(cfg, sample.prompt);
    for (std::size_t l = 0; l < sample.answer.size(); ++l) {
        const std::size_t r = first + l;
        const auto row = logits.row(r);
        const double peak = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) {
            total += std::exp(v - peak);
        }
        for (std::size_t c = 0; c < row.size(); ++c) {
            dlogits(r, c) = std::exp(row[c] - peak) / total;
        }
        dlogits(r, static_cast<std::size_t>(sample.answer[l])) -= 1.0;
    }

    const Matrix dnormed = matmul(dlogits, base.head);
    Matrix dx = layer_norm_backward(dnormed, tape.final_ln, base.final_gain);
    for (std::size_t b = cfg.n_blocks; b-- > 0;) {
        dx = block_backward(dx, base.blocks[b], b, cfg.n_heads, adapters, tape.blocks[b], grads.adapters);
    }

    // Only the visual prefix rows depend on the projector.
    for (std::size_t p = 0; p < cfg.visual_prefix_len; ++p) {
        for (std::size_t r = 0; r < cfg.d_model; ++r) {
            const double g = dx(p, r);
            grads.projector.bias[r] += g;
            for (std::size_t c = 0; c < cfg.visual_dim; ++c) {
                grads.projector.weight(r, c) += g * sample.prompt.visual(p, c);
            }
        }
    }
    return grads;
}

ComposedAdapters single_set_composition(const ModelConfig& cfg, std::shared_ptr<const TaskAdapterSet> set,
                                        std::string strategy) {
    ComposedAdapters c;
    c.strategy = std::move(strategy);
    c.block_modes.assign(cfg.n_blocks, BlockMode::mixture);
    c.experts = {std::move(set)};
    c.weights = {1.0};
    return c;
}

ComposedAdapters AdaptedModel::resolved(const Prompt& prompt) const {
    if (!composition.routed) {
        return composition;
    }
    if (!router) {
        throw ContractError("AdaptedModel '" + tag + "': routed composition without a router");
    }
    return composition.with_weights(router(prompt));
}

Matrix AdaptedModel::logits(const BaseModel& base, const Sample& sample) const {
    if (!projector) {
        throw ContractError("AdaptedModel '" + tag + "': missing projector");
    }
    return forward(base, *projector, resolved(sample.prompt), sample);
}

}  // namespace hide_forge
