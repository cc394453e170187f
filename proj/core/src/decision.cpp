#include "stemlink/decision.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

namespace stemlink::decision {

using numerics::Graph;
using numerics::NodeId;
using numerics::Tensor;

namespace {

template <typename S>
Tensor<S> sinusoid_table(int length, int d_model) {
    Tensor<S> out({length, d_model});
    for (int p = 0; p < length; ++p)
        for (int i = 0; i < d_model; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) / d_model;
            const double angle = p / std::pow(10000.0, exponent);
            out.v[static_cast<std::size_t>(p) * d_model + i] =
                static_cast<S>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    return out;
}

void fill_normal(Tensor<float>& t, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.v) v = static_cast<float>(dist(rng));
}

// Softmax over the K real classes of one logits row, in double.
std::vector<double> real_token_probs(const float* logits, int k) {
    std::vector<double> probs(static_cast<std::size_t>(k));
    double mx = logits[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    double sum = 0;
    for (int i = 0; i < k; ++i) {
        probs[i] = std::exp(static_cast<double>(logits[i]) - mx);
        sum += probs[i];
    }
    for (auto& p : probs) p /= sum;
    return probs;
}

int sample_categorical(const std::vector<double>& probs, Rng& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double u = uni(rng);
    double acc = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

} // namespace

DecisionModel init_model(int k, const HyperParams& hp, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("init_model: alphabet size must be at least 2");
    if (hp.n_layers < 1) throw std::invalid_argument("init_model: need at least one layer");
    if (hp.d_model < 1 || hp.n_heads < 1 || hp.d_ff < 1)
        throw std::invalid_argument("init_model: dimensions must be positive");
    if (hp.d_model % hp.n_heads != 0)
        throw std::invalid_argument("init_model: d_model " + std::to_string(hp.d_model) +
                                    " not divisible by n_heads " + std::to_string(hp.n_heads));
    if (hp.dropout < 0 || hp.dropout >= 1) throw std::invalid_argument("init_model: dropout must be in [0, 1)");

    DecisionModel model;
    model.k = k;
    model.hp = hp;
    Rng rng(derive_seed(seed, "init_model"));
    const int d = hp.d_model, v = model.vocab();
    constexpr double kInitStd = 0.02;

    auto normal = [&](std::vector<int> shape) {
        Tensor<float> t(std::move(shape));
        fill_normal(t, kInitStd, rng);
        return t;
    };
    auto zeros = [](std::vector<int> shape) { return Tensor<float>(std::move(shape)); };
    auto ones = [](std::vector<int> shape) {
        Tensor<float> t(std::move(shape));
        std::fill(t.v.begin(), t.v.end(), 1.0f);
        return t;
    };

    auto& p = model.tensors;
    p.tok_emb = normal({v, d});
    p.seg_emb = normal({2, d});
    p.blocks.resize(static_cast<std::size_t>(hp.n_layers));
    for (auto& b : p.blocks) {
        b.ln1_g = ones({d});
        b.ln1_b = zeros({d});
        b.wq = normal({d, d});
        b.bq = zeros({d});
        b.wk = normal({d, d});
        b.bk = zeros({d});
        b.wv = normal({d, d});
        b.bv = zeros({d});
        b.wo = normal({d, d});
        b.bo = zeros({d});
        b.ln2_g = ones({d});
        b.ln2_b = zeros({d});
        b.w1 = normal({d, hp.d_ff});
        b.b1 = zeros({hp.d_ff});
        b.w2 = normal({hp.d_ff, d});
        b.b2 = zeros({d});
    }
    p.lnf_g = ones({d});
    p.lnf_b = zeros({d});
    p.out_w = normal({d, v});
    p.out_b = zeros({v});
    return model;
}

template <typename S>
NodeId decoder_logits(Graph<S>& g, ModelTensors<S>& tensors, const HyperParams& hp, int k,
                      std::span<const int> guide, std::span<const int> response_inputs, bool train_mode,
                      Rng* dropout_rng) {
    std::vector<int> ids;
    ids.reserve(2 + guide.size() + response_inputs.size());
    ids.push_back(k);
    for (int t : guide) {
        if (t < 0 || t >= k) throw std::invalid_argument("decoder: guide token " + std::to_string(t) + " >= K");
        ids.push_back(t);
    }
    ids.push_back(k + 1);
    for (int t : response_inputs) {
        if (t < 0 || t >= k) throw std::invalid_argument("decoder: response token " + std::to_string(t) + " >= K");
        ids.push_back(t);
    }
    const int len = static_cast<int>(ids.size());
    if (len > hp.max_seq)
        throw std::invalid_argument("decoder: sequence of " + std::to_string(len) +
                                    " tokens exceeds the positional table limit of " + std::to_string(hp.max_seq));

    // BOS and guide are segment type 0; SEP and the response side type 1.
    std::vector<int> seg_types(static_cast<std::size_t>(len), 1);
    for (std::size_t i = 0; i < 1 + guide.size(); ++i) seg_types[i] = 0;

    const bool drop = train_mode && hp.dropout > 0 && dropout_rng != nullptr;
    auto maybe_dropout = [&](NodeId x) { return drop ? g.dropout(x, hp.dropout, true, *dropout_rng) : x; };

    NodeId tok_table = g.param(tensors.tok_emb);
    NodeId seg_table = g.param(tensors.seg_emb);
    NodeId x = g.add(g.embedding(tok_table, ids), g.embedding(seg_table, seg_types));
    x = g.add(x, g.input(sinusoid_table<S>(len, hp.d_model)));
    x = maybe_dropout(x);

    const int dh = hp.d_model / hp.n_heads;
    for (auto& blk : tensors.blocks) {
        NodeId a = g.layernorm(x, g.param(blk.ln1_g), g.param(blk.ln1_b));
        NodeId q = g.add_bias(g.matmul(a, g.param(blk.wq)), g.param(blk.bq));
        NodeId kk = g.add_bias(g.matmul(a, g.param(blk.wk)), g.param(blk.bk));
        NodeId v = g.add_bias(g.matmul(a, g.param(blk.wv)), g.param(blk.bv));
        std::vector<NodeId> heads;
        heads.reserve(static_cast<std::size_t>(hp.n_heads));
        for (int h = 0; h < hp.n_heads; ++h)
            heads.push_back(g.attention(g.slice_cols(q, h * dh, dh), g.slice_cols(kk, h * dh, dh),
                                        g.slice_cols(v, h * dh, dh), /*causal=*/true));
        NodeId attn = g.add_bias(g.matmul(g.concat_cols(heads), g.param(blk.wo)), g.param(blk.bo));
        x = g.add(x, maybe_dropout(attn));

        NodeId f = g.layernorm(x, g.param(blk.ln2_g), g.param(blk.ln2_b));
        NodeId ff = g.add_bias(g.matmul(g.gelu(g.add_bias(g.matmul(f, g.param(blk.w1)), g.param(blk.b1))),
                                        g.param(blk.w2)),
                               g.param(blk.b2));
        x = g.add(x, maybe_dropout(ff));
    }

    x = g.layernorm(x, g.param(tensors.lnf_g), g.param(tensors.lnf_b));
    return g.add_bias(g.matmul(x, g.param(tensors.out_w)), g.param(tensors.out_b));
}

template NodeId decoder_logits<float>(Graph<float>&, ModelTensors<float>&, const HyperParams&, int,
                                      std::span<const int>, std::span<const int>, bool, Rng*);
template NodeId decoder_logits<double>(Graph<double>&, ModelTensors<double>&, const HyperParams&, int,
                                       std::span<const int>, std::span<const int>, bool, Rng*);

Tensor<float> forward(const DecisionModel& model, std::span<const int> guide, std::span<const int> response_prefix) {
    Graph<float> g;
    auto tensors = model.tensors; // graph registration wants mutable refs; copy keeps the model const
    const NodeId logits = decoder_logits(g, tensors, model.hp, model.k, guide, response_prefix, false, nullptr);
    const auto& all = g.value(logits);
    const int vocab = model.vocab();
    const int first_pred_row = 1 + static_cast<int>(guide.size()); // the SEP position predicts y_1
    const int n_rows = static_cast<int>(response_prefix.size()) + 1;
    Tensor<float> out({n_rows, vocab});
    std::copy_n(all.data() + static_cast<std::size_t>(first_pred_row) * vocab,
                static_cast<std::size_t>(n_rows) * vocab, out.data());
    return out;
}

double epsilon_at(int epoch, double k, double floor) {
    if (k <= 0 || k > 1) throw std::invalid_argument("epsilon_at: decay must be in (0, 1]");
    if (floor < 0 || floor > 1) throw std::invalid_argument("epsilon_at: floor must be in [0, 1]");
    return std::max(floor, std::pow(k, static_cast<double>(epoch)));
}

namespace {

// Teacher-forced (or mixed-input) pass over one pair, with loss restricted to
// the response rows. Returns the loss node; callers run backward as needed.
template <typename S>
std::pair<NodeId, double> pair_loss(Graph<S>& g, ModelTensors<S>& tensors, const HyperParams& hp, int k,
                                    const TokenPair& pair, const std::vector<int>& response_inputs, bool train_mode,
                                    Rng* dropout_rng) {
    const NodeId logits =
        decoder_logits(g, tensors, hp, k, pair.guide, std::span<const int>(response_inputs), train_mode, dropout_rng);
    const int len = 2 + static_cast<int>(pair.guide.size() + response_inputs.size());
    std::vector<int> targets(static_cast<std::size_t>(len), 0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(len), 0);
    const int sep_row = 1 + static_cast<int>(pair.guide.size());
    for (std::size_t i = 0; i < pair.response.size(); ++i) {
        targets[static_cast<std::size_t>(sep_row) + i] = pair.response[i];
        mask[static_cast<std::size_t>(sep_row) + i] = 1;
    }
    const NodeId loss = g.cross_entropy(logits, targets, mask);
    return {loss, static_cast<double>(g.value(loss).v[0])};
}

// Sample the model's own predictions from a plain forward pass, used as the
// non-ground-truth side of the scheduled-sampling mixture.
std::vector<int> sample_own_predictions(DecisionModel& model, const TokenPair& pair, Rng& rng) {
    Graph<float> g;
    const NodeId logits =
        decoder_logits(g, model.tensors, model.hp, model.k, pair.guide,
                       std::span<const int>(pair.response.data(), pair.response.size() - 1), false, nullptr);
    const auto& all = g.value(logits);
    const int vocab = model.vocab();
    const int sep_row = 1 + static_cast<int>(pair.guide.size());
    std::vector<int> sampled(pair.response.size());
    for (std::size_t i = 0; i < pair.response.size(); ++i) {
        const float* row = all.data() + (static_cast<std::size_t>(sep_row) + i) * vocab;
        sampled[i] = sample_categorical(real_token_probs(row, model.k), rng);
    }
    return sampled;
}

} // namespace

TrainResult train(DecisionModel& model, std::span<const TokenPair> train_pairs, std::span<const TokenPair> val_pairs,
                  const TrainConfig& cfg) {
    if (train_pairs.empty()) throw std::invalid_argument("train: empty pair stream");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
    for (const auto& p : train_pairs)
        if (p.response.empty()) throw std::invalid_argument("train: pair with empty response");
    for (const auto& p : val_pairs)
        if (p.response.empty()) throw std::invalid_argument("train: validation pair with empty response");

    numerics::AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay, 1e-8};
    std::vector<numerics::AdamState<float>> states;
    std::vector<Tensor<float>*> params;
    model.tensors.for_each([&](const std::string&, Tensor<float>& t) { params.push_back(&t); });
    states.resize(params.size());

    TrainResult result;
    ModelTensors<float> best_tensors = model.tensors;
    double best_val = std::numeric_limits<double>::max();
    int since_best = 0;
    long step = 0;

    std::vector<std::size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), 0);

    auto validation_loss = [&]() {
        if (val_pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
        double total = 0;
        for (const auto& p : val_pairs) {
            Graph<float> g;
            std::vector<int> inputs(p.response.begin(), p.response.end() - 1);
            total += pair_loss(g, model.tensors, model.hp, model.k, p, inputs, false, nullptr).second;
        }
        return total / static_cast<double>(val_pairs.size());
    };

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double eps = epsilon_at(epoch, cfg.ss_k, cfg.ss_floor);
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0;
        std::size_t processed = 0;
        for (std::size_t batch_start = 0; batch_start < order.size(); batch_start += cfg.batch_size) {
            const std::size_t batch_end = std::min(order.size(), batch_start + cfg.batch_size);
            const int batch_n = static_cast<int>(batch_end - batch_start);
            for (auto* p : params) p->zero_grad();

            double batch_loss = 0;
            for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
                const TokenPair& pair = train_pairs[order[bi]];
                Rng item_rng(derive_seed(cfg.seed, "item", static_cast<std::uint64_t>(epoch), order[bi]));

                std::vector<int> inputs(pair.response.begin(), pair.response.end() - 1);
                if (eps < 1.0 && !inputs.empty()) {
                    const auto sampled = sample_own_predictions(model, pair, item_rng);
                    std::uniform_real_distribution<double> uni(0.0, 1.0);
                    for (std::size_t i = 0; i < inputs.size(); ++i)
                        if (uni(item_rng) >= eps) inputs[i] = sampled[i];
                }

                Graph<float> g;
                auto [loss_node, loss] =
                    pair_loss(g, model.tensors, model.hp, model.k, pair, inputs, true, &item_rng);
                if (!std::isfinite(loss))
                    throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                             ", item " + std::to_string(order[bi]));
                g.backward(loss_node);
                batch_loss += loss;
            }

            // Mean reduction over the batch.
            const float inv = 1.0f / static_cast<float>(batch_n);
            bool finite = true;
            for (auto* p : params) {
                for (auto& gv : p->g) gv *= inv;
                finite = finite && p->grad_finite();
            }
            if (!finite) {
                ++result.skipped_steps;
                continue;
            }
            ++step;
            for (std::size_t i = 0; i < params.size(); ++i)
                adam_step(*params[i], Tensor<float>(params[i]->shape, params[i]->g), states[i], adam, step);
            epoch_loss += batch_loss;
            processed += static_cast<std::size_t>(batch_n);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = processed ? epoch_loss / static_cast<double>(processed) : 0.0;
        stats.val_loss = validation_loss();
        stats.epsilon = eps;
        result.curve.push_back(stats);

        const double monitored = val_pairs.empty() ? stats.train_loss : stats.val_loss;
        if (monitored < best_val) {
            best_val = monitored;
            best_tensors = model.tensors;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best > cfg.patience) {
            break;
        }
    }

    model.tensors = best_tensors;
    result.best_val_loss = best_val;
    return result;
}

void export_loss_curve(const TrainResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_loss_curve: cannot open '" + path.string() + "'");
    out << "epoch,train_loss,val_loss,epsilon\n";
    char buf[128];
    for (const auto& s : result.curve) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", s.epoch, s.train_loss, s.val_loss, s.epsilon);
        out << buf;
    }
}

int sample_top_p(std::span<const double> dist, double p, const std::vector<int>* allowed, Rng& rng,
                 std::vector<int>* nucleus_out, bool* intersected_out) {
    if (p <= 0 || p > 1) throw std::invalid_argument("sample_top_p: p must be in (0, 1]");
    double sum = 0;
    for (double d : dist) {
        if (d < -1e-12 || !std::isfinite(d)) throw std::invalid_argument("sample_top_p: invalid distribution entry");
        sum += d;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("sample_top_p: distribution sums to " + std::to_string(sum));

    std::vector<int> order(dist.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (dist[a] != dist[b]) return dist[a] > dist[b];
        return a < b; // ties: lower id first
    });

    // Smallest prefix reaching mass p; the comparison leaves room for the
    // rounding of sums like 0.5 + 0.3 vs a literal 0.8.
    std::vector<int> nucleus;
    double mass = 0;
    for (int id : order) {
        nucleus.push_back(id);
        mass += dist[id];
        if (mass >= p - 1e-9) break;
    }

    bool intersected = false;
    std::vector<int> pool = nucleus;
    if (allowed) {
        std::vector<int> inter;
        for (int id : nucleus)
            if (std::find(allowed->begin(), allowed->end(), id) != allowed->end()) inter.push_back(id);
        if (!inter.empty()) {
            pool = std::move(inter);
            intersected = true;
        }
    }

    if (nucleus_out) *nucleus_out = nucleus;
    if (intersected_out) *intersected_out = intersected;

    double pool_mass = 0;
    for (int id : pool) pool_mass += dist[id];
    std::uniform_real_distribution<double> uni(0.0, pool_mass);
    const double target = uni(rng);
    double acc = 0;
    for (int id : pool) {
        acc += dist[id];
        if (target < acc) return id;
    }
    return pool.back();
}

TokenSequence generate(const DecisionModel& model, const TokenSequence& x_q, const GenerationConfig& cfg,
                       GenerationTrace* trace) {
    if (x_q.k != model.k)
        throw std::invalid_argument("generate: guide alphabet " + std::to_string(x_q.k) +
                                    " does not match model alphabet " + std::to_string(model.k));
    if (cfg.constrained && !cfg.corpus_labels)
        throw std::invalid_argument("generate: constrained generation needs corpus labels");

    const int length = cfg.output_length > 0 ? cfg.output_length : static_cast<int>(x_q.ids.size());
    Rng rng(derive_seed(cfg.seed, "generate"));
    const std::vector<int>* allowed = cfg.constrained ? &*cfg.corpus_labels : nullptr;

    TokenSequence out;
    out.k = model.k;
    out.ids.reserve(static_cast<std::size_t>(length));
    for (int t = 0; t < length; ++t) {
        const auto logits = forward(model, x_q.ids, out.ids);
        const float* last = logits.data() + static_cast<std::size_t>(logits.rows() - 1) * logits.cols();
        // Specials never reach the sampler: the distribution covers the K
        // real classes only.
        const auto probs = real_token_probs(last, model.k);
        std::vector<int> nucleus;
        bool intersected = false;
        const int id = sample_top_p(probs, cfg.top_p, allowed, rng, trace ? &nucleus : nullptr,
                                    trace ? &intersected : nullptr);
        if (trace) {
            trace->nucleus.push_back(std::move(nucleus));
            trace->used_intersection.push_back(intersected);
        }
        out.ids.push_back(id);
    }
    return out;
}

namespace {

constexpr char kModelMagic[4] = {'S', 'T', 'L', 'M'};
constexpr std::uint16_t kModelVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint '" + path.string() + "': truncated file");
    return v;
}

} // namespace

void save_checkpoint(const DecisionModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path.string() + "'");
    out.write(kModelMagic, 4);
    put<std::uint16_t>(out, kModelVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.hp.n_layers));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.hp.d_model));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.hp.n_heads));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.hp.d_ff));
    put<float>(out, static_cast<float>(model.hp.dropout));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.hp.max_seq));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.k));

    std::uint32_t count = 0;
    model.tensors.for_each([&](const std::string&, const Tensor<float>&) { ++count; });
    put<std::uint32_t>(out, count);
    model.tensors.for_each([&](const std::string& name, const Tensor<float>& t) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    });
    if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + path.string() + "'");
}

DecisionModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path.string() + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
        throw std::runtime_error("checkpoint '" + path.string() + "': bad magic bytes");
    const auto version = get<std::uint16_t>(in, path);
    if (version != kModelVersion)
        throw std::runtime_error("checkpoint '" + path.string() + "': unsupported version " +
                                 std::to_string(version));
    HyperParams hp;
    hp.n_layers = static_cast<int>(get<std::uint32_t>(in, path));
    hp.d_model = static_cast<int>(get<std::uint32_t>(in, path));
    hp.n_heads = static_cast<int>(get<std::uint32_t>(in, path));
    hp.d_ff = static_cast<int>(get<std::uint32_t>(in, path));
    hp.dropout = get<float>(in, path);
    hp.max_seq = static_cast<int>(get<std::uint32_t>(in, path));
    const int k = static_cast<int>(get<std::uint32_t>(in, path));

    DecisionModel model = init_model(k, hp, 0);
    std::map<std::string, Tensor<float>*> by_name;
    model.tensors.for_each([&](const std::string& name, Tensor<float>& t) { by_name[name] = &t; });

    const auto count = get<std::uint32_t>(in, path);
    if (count != by_name.size())
        throw std::runtime_error("checkpoint '" + path.string() + "': expected " + std::to_string(by_name.size()) +
                                 " tensors, file has " + std::to_string(count));
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint '" + path.string() + "': unknown tensor '" + name + "'");
        const auto rank = get<std::uint32_t>(in, path);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(get<std::uint32_t>(in, path));
        if (shape != it->second->shape)
            throw std::runtime_error("checkpoint '" + path.string() + "': tensor '" + name + "' has shape " +
                                     numerics::shape_str(shape) + ", model expects " +
                                     numerics::shape_str(it->second->shape));
        in.read(reinterpret_cast<char*>(it->second->v.data()),
                static_cast<std::streamsize>(it->second->v.size() * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint '" + path.string() + "': truncated tensor data");
    }
    return model;
}

} // namespace stemlink::decision
