#pragma once

#include "stemlink/numerics/graph.hpp"
#include "stemlink/numerics/optim.hpp"
#include "stemlink/perception.hpp"
#include "stemlink/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stemlink::decision {

using perception::TokenSequence;

struct HyperParams {
    int n_layers = 2;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 128;
    double dropout = 0.1;
    int max_seq = 512;
};

// Small configuration for tests and single-machine runs.
inline HyperParams desk_hyperparams() { return HyperParams{}; }
// Full-size configuration: 6 layers, 12 heads, d_model 768, d_ff 2048.
inline HyperParams paper_hyperparams() { return HyperParams{6, 768, 12, 2048, 0.1, 512}; }

// The learned tensors. Templated so the identical graph-building code can be
// instantiated in double for finite-difference verification.
template <typename S>
struct ModelTensors {
    struct Block {
        numerics::Tensor<S> ln1_g, ln1_b;
        numerics::Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
        numerics::Tensor<S> ln2_g, ln2_b;
        numerics::Tensor<S> w1, b1, w2, b2;
    };

    numerics::Tensor<S> tok_emb; // (K + 2) x d_model
    numerics::Tensor<S> seg_emb; // 2 x d_model: guide vs response side
    std::vector<Block> blocks;
    numerics::Tensor<S> lnf_g, lnf_b;
    numerics::Tensor<S> out_w, out_b; // d_model x (K + 2)

    template <typename F>
    void for_each(F&& f) {
        f("tok_emb", tok_emb);
        f("seg_emb", seg_emb);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            auto& b = blocks[i];
            const std::string p = "block" + std::to_string(i) + ".";
            f(p + "ln1_g", b.ln1_g);
            f(p + "ln1_b", b.ln1_b);
            f(p + "wq", b.wq);
            f(p + "bq", b.bq);
            f(p + "wk", b.wk);
            f(p + "bk", b.bk);
            f(p + "wv", b.wv);
            f(p + "bv", b.bv);
            f(p + "wo", b.wo);
            f(p + "bo", b.bo);
            f(p + "ln2_g", b.ln2_g);
            f(p + "ln2_b", b.ln2_b);
            f(p + "w1", b.w1);
            f(p + "b1", b.b1);
            f(p + "w2", b.w2);
            f(p + "b2", b.b2);
        }
        f("lnf_g", lnf_g);
        f("lnf_b", lnf_b);
        f("out_w", out_w);
        f("out_b", out_b);
    }

    template <typename F>
    void for_each(F&& f) const {
        const_cast<ModelTensors*>(this)->for_each(
            [&](const std::string& name, numerics::Tensor<S>& t) { f(name, static_cast<const numerics::Tensor<S>&>(t)); });
    }

    template <typename T>
    ModelTensors<T> cast() const {
        ModelTensors<T> out;
        out.tok_emb = tok_emb.template cast<T>();
        out.seg_emb = seg_emb.template cast<T>();
        out.blocks.resize(blocks.size());
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& s = blocks[i];
            auto& d = out.blocks[i];
            d.ln1_g = s.ln1_g.template cast<T>();
            d.ln1_b = s.ln1_b.template cast<T>();
            d.wq = s.wq.template cast<T>();
            d.bq = s.bq.template cast<T>();
            d.wk = s.wk.template cast<T>();
            d.bk = s.bk.template cast<T>();
            d.wv = s.wv.template cast<T>();
            d.bv = s.bv.template cast<T>();
            d.wo = s.wo.template cast<T>();
            d.bo = s.bo.template cast<T>();
            d.ln2_g = s.ln2_g.template cast<T>();
            d.ln2_b = s.ln2_b.template cast<T>();
            d.w1 = s.w1.template cast<T>();
            d.b1 = s.b1.template cast<T>();
            d.w2 = s.w2.template cast<T>();
            d.b2 = s.b2.template cast<T>();
        }
        out.lnf_g = lnf_g.template cast<T>();
        out.lnf_b = lnf_b.template cast<T>();
        out.out_w = out_w.template cast<T>();
        out.out_b = out_b.template cast<T>();
        return out;
    }
};

// Causal decoder over the musical alphabet plus two specials (BOS = K,
// SEP = K + 1). Conditioning is prefix concatenation: [BOS, guide..., SEP,
// response...], with segment-type embeddings marking the two sides.
struct DecisionModel {
    int k = 0;
    HyperParams hp;
    ModelTensors<float> tensors;

    static constexpr int n_special = 2;
    int vocab() const { return k + n_special; }
    int bos() const { return k; }
    int sep() const { return k + 1; }
};

DecisionModel init_model(int k, const HyperParams& hp, std::uint64_t seed);

// Builds the decoder graph over [BOS, guide..., SEP, response_inputs...] and
// returns the logits node covering every position (one row per input token).
template <typename S>
numerics::NodeId decoder_logits(numerics::Graph<S>& g, ModelTensors<S>& tensors, const HyperParams& hp, int k,
                                std::span<const int> guide, std::span<const int> response_inputs, bool train_mode,
                                Rng* dropout_rng);

// Logits for the positions predicting y_1 .. y_{|prefix|+1}; one row per
// prediction, vocab() columns. Dropout off.
numerics::Tensor<float> forward(const DecisionModel& model, std::span<const int> guide,
                                std::span<const int> response_prefix);

struct TrainConfig {
    int batch_size = 24;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-5;
    int max_epochs = 100;
    int patience = 10;
    double ss_k = 0.99;     // scheduled-sampling decay per epoch
    double ss_floor = 0.1;  // lower bound on the ground-truth probability
    std::uint64_t seed = 0;
};

struct TokenPair {
    std::vector<int> guide;
    std::vector<int> response;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double epsilon = 1.0;
};

struct TrainResult {
    std::vector<EpochStats> curve;
    int best_epoch = -1;
    double best_val_loss = 0;
    long skipped_steps = 0; // optimizer steps dropped due to non-finite gradients
};

// Probability of feeding the ground-truth token at the given epoch:
// max(floor, k^epoch).
double epsilon_at(int epoch, double k, double floor);

TrainResult train(DecisionModel& model, std::span<const TokenPair> train_pairs, std::span<const TokenPair> val_pairs,
                  const TrainConfig& cfg);

void export_loss_curve(const TrainResult& result, const std::filesystem::path& path);

struct GenerationConfig {
    double top_p = 0.8;
    bool constrained = false;
    std::optional<std::vector<int>> corpus_labels;
    std::uint64_t seed = 0;
    int output_length = 0; // 0 -> same length as the guide
};

// Per-step sampling evidence, for tests that need to see the nucleus.
struct GenerationTrace {
    std::vector<std::vector<int>> nucleus;  // token ids in the nucleus, each step
    std::vector<bool> used_intersection;    // whether allowed ∩ nucleus was non-empty
};

// Nucleus sampling: smallest prefix of tokens by descending probability whose
// cumulative mass reaches p (ties to the lower id). With an allowed set, the
// draw is restricted to the intersection when it is non-empty.
int sample_top_p(std::span<const double> dist, double p, const std::vector<int>* allowed, Rng& rng,
                 std::vector<int>* nucleus_out = nullptr, bool* intersected_out = nullptr);

TokenSequence generate(const DecisionModel& model, const TokenSequence& x_q, const GenerationConfig& cfg,
                       GenerationTrace* trace = nullptr);

void save_checkpoint(const DecisionModel& model, const std::filesystem::path& path);
DecisionModel load_checkpoint(const std::filesystem::path& path);

} // namespace stemlink::decision
