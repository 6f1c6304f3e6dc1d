#pragma once

// Cascaded toy segmenter.
//
// Each network (villi; lesion) is encoder -> decoder -> head(s):
//   encoder  per-scale linear token embedding (+ per-scale positional table),
//            then `blocks` cross-scale attention blocks. Queries come from the
//            mid-scale tokens; keys/values from [small, current mid, large].
//   decoder  2-layer per-token MLP, plus a one-layer per-pixel branch on the
//            input channels (relu) that restores full working resolution.
//   head     per-pixel linear over [bilinearly upsampled decoder tokens, pixel
//            branch features] -> sigmoid. The token part is projected to a
//            scalar before upsampling; both steps are linear so the order is free.
// The lesion network takes RGB plus the villi probability (4 channels) and has
// separate edema and hyperplasia heads on one shared decoder output.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gtd/checkpoint.hpp"
#include "gtd/numerics/rng.hpp"
#include "gtd/numerics/tape.hpp"
#include "gtd/segnet/pyramid.hpp"

namespace gtd::segnet {

using num::GradTape;
using num::Tensor;
using num::Var;

enum class Net { Villi, Lesion };

struct NetLayout {
    std::string encoder;
    std::string decoder;
    std::vector<std::string> heads;
    int channels;
};

inline NetLayout layout(Net net) {
    if (net == Net::Villi) return {"villi.enc.", "villi.dec.", {"villi.head."}, 3};
    return {"lesion.enc.", "lesion.dec.", {"edema.head.", "hyperplasia.head."}, 4};
}

inline bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

inline bool is_encoder_param(const std::string& name) {
    return starts_with(name, "villi.enc.") || starts_with(name, "lesion.enc.");
}
inline bool is_decoder_param(const std::string& name) {
    return starts_with(name, "villi.dec.") || starts_with(name, "lesion.dec.");
}
inline bool is_head_param(const std::string& name) { return name.find(".head.") != std::string::npos; }

struct SegModelParams {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;  // ordered by name: stable save/load order
    int trained_stage = 0;                  // last completed training stage

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
    Tensor& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    /// Rounds every value to float32, matching what a checkpoint stores.
    void round_to_f32() {
        for (auto& [_, t] : tensors)
            for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
    }

    bool operator==(const SegModelParams&) const = default;
};

namespace detail {

inline Tensor gaussian(num::Rng& rng, std::int64_t r, std::int64_t c, double stddev) {
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.data()) v = stddev * rng.normal();
    return t;
}

inline void init_encoder(SegModelParams& p, const std::string& pre, int channels, num::Rng& rng) {
    const auto& c = p.config;
    const std::int64_t D = c.embed_dim, P = static_cast<std::int64_t>(c.token_size) * c.token_size * channels;
    const std::int64_t T = c.tokens();
    p.tensors[pre + "embed.w"] = gaussian(rng, P, D, 1.0 / std::sqrt(static_cast<double>(P)) * 2.0);
    p.tensors[pre + "embed.b"] = Tensor::matrix(1, D);
    for (int s = 0; s < 3; ++s) p.tensors[pre + "pos." + std::to_string(s)] = gaussian(rng, T, D, 0.1);
    const double sd = 1.0 / std::sqrt(static_cast<double>(D));
    for (int b = 0; b < c.blocks; ++b) {
        const std::string bp = pre + "blk" + std::to_string(b) + ".";
        p.tensors[bp + "wq"] = gaussian(rng, D, D, sd);
        p.tensors[bp + "wk"] = gaussian(rng, D, D, sd);
        p.tensors[bp + "wv"] = gaussian(rng, D, D, sd);
        p.tensors[bp + "wo"] = gaussian(rng, D, D, 0.5 * sd);
        p.tensors[bp + "w1"] = gaussian(rng, D, D, std::sqrt(2.0) * sd);
        p.tensors[bp + "b1"] = Tensor::matrix(1, D);
        p.tensors[bp + "w2"] = gaussian(rng, D, D, 0.5 * sd);
        p.tensors[bp + "b2"] = Tensor::matrix(1, D);
    }
}

inline void init_decoder(SegModelParams& p, const std::string& pre, int channels, num::Rng& rng) {
    const std::int64_t D = p.config.embed_dim, F = p.config.pixel_features;
    const double sd = 1.0 / std::sqrt(static_cast<double>(D));
    p.tensors[pre + "w1"] = gaussian(rng, D, D, std::sqrt(2.0) * sd);
    p.tensors[pre + "b1"] = Tensor::matrix(1, D);
    p.tensors[pre + "w2"] = gaussian(rng, D, D, sd);
    p.tensors[pre + "b2"] = Tensor::matrix(1, D);
    // centred inputs span about +-0.5, so steep random hyperplanes are needed
    p.tensors[pre + "pix.w"] = gaussian(rng, channels, F, 4.0);
    p.tensors[pre + "pix.b"] = gaussian(rng, 1, F, 0.5);
}

inline void init_head(SegModelParams& p, const std::string& pre) {
    p.tensors[pre + "w_tok"] = Tensor::matrix(p.config.embed_dim, 1);
    p.tensors[pre + "w_pix"] = Tensor::matrix(p.config.pixel_features, 1);
    p.tensors[pre + "b"] = Tensor::matrix(1, 1);
}

} // namespace detail

/// Encoders and decoders get seeded Gaussian weights; heads start at zero so an
/// untrained model outputs 0.5 everywhere.
inline SegModelParams init_params(const ModelConfig& cfg) {
    cfg.validate();
    SegModelParams p;
    p.config = cfg;
    num::Rng rng(num::derive_seed(cfg.init_seed, "segnet-init"));
    for (Net net : {Net::Villi, Net::Lesion}) {
        const auto l = layout(net);
        detail::init_encoder(p, l.encoder, l.channels, rng);
        detail::init_decoder(p, l.decoder, l.channels, rng);
        for (const auto& h : l.heads) detail::init_head(p, h);
    }
    p.round_to_f32();  // what a checkpoint would hold; keeps frozen tensors bit-stable
    return p;
}

// ---------------------------------------------------------------------------
// Building blocks

/// Parameters placed on a tape. Names for which `trainable` is false become
/// constants (no gradient is computed for them).
class Binding {
public:
    template <class Pred>
    Binding(GradTape& tape, const SegModelParams& params, Pred trainable) : tape_(&tape), params_(&params) {
        for (const auto& [name, t] : params.tensors) trainable_[name] = trainable(name);
    }

    Var operator()(const std::string& name) {
        auto it = vars_.find(name);
        if (it != vars_.end()) return it->second;
        const auto& t = params_->at(name);
        Var v = trainable_.at(name) ? tape_->parameter(t) : tape_->constant(t);
        vars_.emplace(name, v);
        return v;
    }

    const std::map<std::string, Var>& vars() const { return vars_; }

private:
    GradTape* tape_;
    const SegModelParams* params_;
    std::map<std::string, bool> trainable_;
    std::map<std::string, Var> vars_;
};

/// Rows are tokens in row-major grid order; columns are the (y, x, c) values
/// of the token's block, centred by -0.5.
inline Tensor token_matrix(const Raster& r, int token_size) {
    const int g = r.width / token_size;
    const std::int64_t cols = static_cast<std::int64_t>(token_size) * token_size * r.channels;
    Tensor t = Tensor::matrix(static_cast<std::int64_t>(g) * g, cols);
    for (int ty = 0; ty < g; ++ty)
        for (int tx = 0; tx < g; ++tx) {
            double* row = &t.data()[static_cast<std::size_t>((ty * g + tx) * cols)];
            std::size_t k = 0;
            for (int y = 0; y < token_size; ++y)
                for (int x = 0; x < token_size; ++x)
                    for (int c = 0; c < r.channels; ++c)
                        row[k++] = r(tx * token_size + x, ty * token_size + y, c) - 0.5;
        }
    return t;
}

/// Pixel channels of a raster as an (h*w) x c matrix, centred by -0.5.
inline Tensor pixel_matrix(const Raster& r) {
    Tensor t = Tensor::matrix(static_cast<std::int64_t>(r.width) * r.height, r.channels);
    for (std::size_t i = 0; i < r.data.size(); ++i) t[i] = r.data[i] - 0.5;
    return t;
}

struct AttentionResult {
    Var output;   // softmax(Q K^T / sqrt(D)) V Wo, one row per query token
    Var weights;  // attention matrix, rows sum to 1
};

/// Queries from `query_tokens`, keys and values from `context` (the concatenated
/// multi-scale tokens).
inline AttentionResult cross_scale_attention(GradTape& tape, Var query_tokens, Var context, Var wq, Var wk, Var wv,
                                             Var wo) {
    const auto d = tape.value(wq).cols();
    Var q = tape.matmul(query_tokens, wq);
    Var k = tape.matmul(context, wk);
    Var v = tape.matmul(context, wv);
    Var scores = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
    Var a = tape.softmax_rows(scores);
    return {tape.matmul(tape.matmul(a, v), wo), a};
}

struct EncoderOutput {
    Var tokens;                          // mid-scale tokens after all blocks
    std::vector<Var> attention_weights;  // one per block
};

inline EncoderOutput encode(GradTape& tape, Binding& p, const std::string& pre, const ModelConfig& cfg,
                            const Pyramid& pyr) {
    pyr.validate(cfg.work_px());
    std::array<Var, 3> emb;
    for (int s = 0; s < 3; ++s) {
        Var x = tape.constant(token_matrix(pyr.levels[static_cast<std::size_t>(s)].raster, cfg.token_size));
        if (tape.value(x).cols() != tape.value(p(pre + "embed.w")).rows())
            throw ContractError("channel-count mismatch: encoder '" + pre + "' expects " +
                                std::to_string(tape.value(p(pre + "embed.w")).rows() / (cfg.token_size * cfg.token_size)) +
                                " channels, got " + std::to_string(pyr.channels()));
        emb[static_cast<std::size_t>(s)] =
            tape.add(tape.add(tape.matmul(x, p(pre + "embed.w")), p(pre + "embed.b")), p(pre + "pos." + std::to_string(s)));
    }
    EncoderOutput out;
    Var h = emb[1];
    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string bp = pre + "blk" + std::to_string(b) + ".";
        Var ctx = tape.concat_rows({emb[0], h, emb[2]});
        auto att = cross_scale_attention(tape, h, ctx, p(bp + "wq"), p(bp + "wk"), p(bp + "wv"), p(bp + "wo"));
        out.attention_weights.push_back(att.weights);
        h = tape.add(h, att.output);
        Var m = tape.relu(tape.add(tape.matmul(h, p(bp + "w1")), p(bp + "b1")));
        h = tape.add(h, tape.add(tape.matmul(m, p(bp + "w2")), p(bp + "b2")));
    }
    out.tokens = h;
    return out;
}

struct Decoded {
    Var tokens;  // tokens x D
    Var pixels;  // (work_px^2) x pixel_features
};

inline Decoded decode(GradTape& tape, Binding& p, const std::string& pre, Var tokens, Var pixels) {
    Var m = tape.relu(tape.add(tape.matmul(tokens, p(pre + "w1")), p(pre + "b1")));
    Var t = tape.add(tape.matmul(m, p(pre + "w2")), p(pre + "b2"));
    Var px = tape.relu(tape.add(tape.matmul(pixels, p(pre + "pix.w")), p(pre + "pix.b")));
    return {t, px};
}

/// Per-axis bilinear taps from token centres to pixel centres, edge-clamped.
struct AxisTaps {
    std::vector<int> i0, i1;
    std::vector<double> w0, w1;
};

inline AxisTaps axis_taps(int tokens, int token_size) {
    AxisTaps t;
    const int n = tokens * token_size;
    for (int p = 0; p < n; ++p) {
        double u = (p + 0.5) / token_size - 0.5;
        u = std::clamp(u, 0.0, tokens - 1.0);
        const int a = static_cast<int>(std::floor(u));
        const int b = std::min(a + 1, tokens - 1);
        const double f = u - a;
        t.i0.push_back(a);
        t.i1.push_back(b);
        t.w0.push_back(1.0 - f);
        t.w1.push_back(f);
    }
    return t;
}

/// (g*g) x 1 token values -> (n*n) x 1 pixel values, n = g * token_size.
inline Tensor upsample_tokens(const Tensor& tok, int g, int token_size) {
    const auto t = axis_taps(g, token_size);
    const int n = g * token_size;
    Tensor out = Tensor::matrix(static_cast<std::int64_t>(n) * n, 1);
    for (int py = 0; py < n; ++py)
        for (int px = 0; px < n; ++px) {
            auto v = [&](int iy, int ix) { return tok[static_cast<std::size_t>(iy * g + ix)]; };
            out[static_cast<std::size_t>(py * n + px)] =
                t.w0[py] * (t.w0[px] * v(t.i0[py], t.i0[px]) + t.w1[px] * v(t.i0[py], t.i1[px])) +
                t.w1[py] * (t.w0[px] * v(t.i1[py], t.i0[px]) + t.w1[px] * v(t.i1[py], t.i1[px]));
        }
    return out;
}

inline Tensor upsample_tokens_backward(const Tensor& g_out, int g, int token_size) {
    const auto t = axis_taps(g, token_size);
    const int n = g * token_size;
    Tensor gt = Tensor::matrix(static_cast<std::int64_t>(g) * g, 1);
    for (int py = 0; py < n; ++py)
        for (int px = 0; px < n; ++px) {
            const double go = g_out[static_cast<std::size_t>(py * n + px)];
            auto acc = [&](int iy, int ix, double w) { gt[static_cast<std::size_t>(iy * g + ix)] += w * go; };
            acc(t.i0[py], t.i0[px], t.w0[py] * t.w0[px]);
            acc(t.i0[py], t.i1[px], t.w0[py] * t.w1[px]);
            acc(t.i1[py], t.i0[px], t.w1[py] * t.w0[px]);
            acc(t.i1[py], t.i1[px], t.w1[py] * t.w1[px]);
        }
    return gt;
}

inline Var tape_upsample(GradTape& tape, Var tok, int g, int token_size) {
    return tape.custom("upsample_tokens", {tok}, upsample_tokens(tape.value(tok), g, token_size),
                       [g, token_size](const Tensor& go, const std::vector<const Tensor*>&, const Tensor&) {
                           return std::vector<Tensor>{upsample_tokens_backward(go, g, token_size)};
                       });
}

/// Logits at working resolution, (work_px^2) x 1, row-major pixels.
inline Var head_logits(GradTape& tape, Binding& p, const std::string& pre, const ModelConfig& cfg,
                       const Decoded& d) {
    Var tok = tape.matmul(d.tokens, p(pre + "w_tok"));
    Var up = tape_upsample(tape, tok, cfg.grid(), cfg.token_size);
    Var pix = tape.matmul(d.pixels, p(pre + "w_pix"));
    return tape.add(tape.add(up, pix), p(pre + "b"));
}

struct NetForward {
    EncoderOutput encoder;
    Decoded decoded;
    std::vector<Var> logits;  // one per head in layout order
};

inline NetForward net_forward(GradTape& tape, Binding& p, const ModelConfig& cfg, Net net, const Pyramid& pyr) {
    const auto l = layout(net);
    if (pyr.channels() != l.channels)
        throw ContractError(std::string("channel-count mismatch: ") + (net == Net::Villi ? "villi" : "lesion") +
                            " network expects " + std::to_string(l.channels) + " channels, got " +
                            std::to_string(pyr.channels()));
    NetForward f;
    f.encoder = encode(tape, p, l.encoder, cfg, pyr);
    Var pixels = tape.constant(pixel_matrix(pyr.mid().raster));
    f.decoded = decode(tape, p, l.decoder, f.encoder.tokens, pixels);
    for (const auto& h : l.heads) f.logits.push_back(head_logits(tape, p, h, cfg, f.decoded));
    return f;
}

/// Working-resolution probability maps for each head, no gradients.
inline std::vector<Tensor> net_probabilities(const SegModelParams& params, Net net, const Pyramid& pyr) {
    GradTape tape;
    Binding b(tape, params, [](const std::string&) { return false; });
    auto f = net_forward(tape, b, params.config, net, pyr);
    std::vector<Tensor> out;
    for (auto l : f.logits) out.push_back(num::ops::sigmoid(tape.value(l)));
    return out;
}

/// Lesion-encoder (or villi-encoder) output tokens, tokens x D.
inline Tensor encoder_tokens(const SegModelParams& params, Net net, const Pyramid& pyr) {
    GradTape tape;
    Binding b(tape, params, [](const std::string&) { return false; });
    return tape.value(encode(tape, b, layout(net).encoder, params.config, pyr).tokens);
}

// ---------------------------------------------------------------------------
// Patch-level entry points

/// Working raster (work_px^2) x 1 values -> full patch resolution, bilinear.
inline slideio::ProbMap upsample_work_map(const Tensor& work, int work_px, int downsample) {
    Raster r(work_px, work_px, 1);
    for (std::size_t i = 0; i < work.size(); ++i) r.data[i] = work[i];
    const int n = work_px * downsample;
    slideio::ProbMap out(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            out(x, y) = static_cast<float>(r.bilinear((x + 0.5) / downsample - 0.5, (y + 0.5) / downsample - 0.5, 0));
    return out;
}

inline void require_unit_range(const Raster& r, const char* what) {
    for (std::size_t i = 0; i < r.data.size(); ++i)
        if (!(r.data[i] >= 0.0 && r.data[i] <= 1.0))
            throw ContractError(std::string(what) + ": input value " + std::to_string(r.data[i]) + " at index " +
                                std::to_string(i) + " is outside [0, 1] (divide RGB by 255)");
}

/// Pyramid from a standalone patch: the patch itself is the only context, so
/// the large scale replicates its border.
inline Pyramid patch_pyramid(const Raster& patch, const ModelConfig& cfg) {
    const Raster work = box_downsample(patch, cfg.downsample);
    return extract_pyramid(work, cfg, patch.width / 2.0, patch.height / 2.0);
}

/// Villi probability for a normalised RGB patch of patch_size^2.
inline slideio::ProbMap forward_villi(const SegModelParams& params, const Raster& patch_rgb) {
    const auto& cfg = params.config;
    if (patch_rgb.width != cfg.patch_size || patch_rgb.height != cfg.patch_size)
        throw ContractError("forward_villi: patch must be " + std::to_string(cfg.patch_size) + "px square");
    if (patch_rgb.channels != 3) throw ContractError("forward_villi: expected 3 channels");
    require_unit_range(patch_rgb, "forward_villi");
    auto probs = net_probabilities(params, Net::Villi, patch_pyramid(patch_rgb, cfg));
    return upsample_work_map(probs[0], cfg.work_px(), cfg.downsample);
}

struct LesionMaps {
    slideio::ProbMap edema;
    slideio::ProbMap hyperplasia;
};

/// Four-channel input: RGB / 255 plus the villi probability.
inline LesionMaps forward_lesions(const SegModelParams& params, const Raster& patch_rgb, const Raster& villi_prob) {
    const auto& cfg = params.config;
    if (patch_rgb.channels != 3 || villi_prob.channels != 1)
        throw ContractError("forward_lesions: channel-count mismatch, expected 3 + 1 channels, got " +
                            std::to_string(patch_rgb.channels) + " + " + std::to_string(villi_prob.channels));
    if (patch_rgb.width != cfg.patch_size || patch_rgb.height != cfg.patch_size)
        throw ContractError("forward_lesions: patch must be " + std::to_string(cfg.patch_size) + "px square");
    require_unit_range(patch_rgb, "forward_lesions");
    require_unit_range(villi_prob, "forward_lesions");
    auto probs = net_probabilities(params, Net::Lesion, patch_pyramid(stack_channels(patch_rgb, villi_prob), cfg));
    return {upsample_work_map(probs[0], cfg.work_px(), cfg.downsample),
            upsample_work_map(probs[1], cfg.work_px(), cfg.downsample)};
}

// ---------------------------------------------------------------------------
// Checkpoint records

inline std::vector<ckpt::Record> to_records(const SegModelParams& p) {
    std::vector<ckpt::Record> recs;
    const auto& c = p.config;
    recs.push_back({"config/model",
                    {9},
                    {static_cast<float>(c.patch_size), static_cast<float>(c.downsample), static_cast<float>(c.token_size),
                     static_cast<float>(c.embed_dim), static_cast<float>(c.blocks), static_cast<float>(c.pixel_features),
                     static_cast<float>(c.scales[0]), static_cast<float>(c.scales[2]),
                     static_cast<float>(p.trained_stage)}});
    for (const auto& [name, t] : p.tensors) {
        ckpt::Record r{name, {}, {}};
        for (auto d : t.dims()) r.dims.push_back(static_cast<std::uint32_t>(d));
        r.payload.reserve(t.size());
        for (double v : t.data()) r.payload.push_back(static_cast<float>(v));
        recs.push_back(std::move(r));
    }
    return recs;
}

inline SegModelParams from_records(const std::vector<ckpt::Record>& recs) {
    SegModelParams p;
    const auto& c = ckpt::find(recs, "config/model");
    if (c.payload.size() != 9) throw CheckpointError(CheckpointError::Kind::Corrupt, "gtck: bad config/model record");
    p.config.patch_size = static_cast<int>(c.payload[0]);
    p.config.downsample = static_cast<int>(c.payload[1]);
    p.config.token_size = static_cast<int>(c.payload[2]);
    p.config.embed_dim = static_cast<int>(c.payload[3]);
    p.config.blocks = static_cast<int>(c.payload[4]);
    p.config.pixel_features = static_cast<int>(c.payload[5]);
    p.config.scales = {c.payload[6], 1.0, c.payload[7]};
    p.trained_stage = static_cast<int>(c.payload[8]);
    for (const auto& r : recs) {
        if (starts_with(r.name, "config/") || starts_with(r.name, "forest/")) continue;
        num::Dims dims;
        for (auto d : r.dims) dims.push_back(d);
        std::vector<double> data(r.payload.begin(), r.payload.end());
        p.tensors.emplace(r.name, Tensor(dims, std::move(data)));
    }
    const auto expected = init_params(p.config);
    for (const auto& [name, t] : expected.tensors) {
        auto it = p.tensors.find(name);
        if (it == p.tensors.end())
            throw CheckpointError(CheckpointError::Kind::Corrupt, "gtck: missing parameter '" + name + "'");
        if (!it->second.same_shape(t))
            throw CheckpointError(CheckpointError::Kind::Corrupt, "gtck: parameter '" + name + "' has wrong shape");
    }
    return p;
}

inline void save_params(const std::filesystem::path& path, const SegModelParams& p) { ckpt::save(path, to_records(p)); }
inline SegModelParams load_params(const std::filesystem::path& path) { return from_records(ckpt::load(path)); }

} // namespace gtd::segnet
