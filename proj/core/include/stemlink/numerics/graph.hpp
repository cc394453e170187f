#pragma once

#include "stemlink/numerics/tensor.hpp"
#include "stemlink/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace stemlink::numerics {

using NodeId = int;

// Tape-based reverse-mode graph over the kernel set needed by the decoder:
// matmul, element add/mul, bias add, GELU, softmax, layer norm, embedding
// lookup, dropout, causal-masked scaled dot-product attention, cross-entropy.
// Every kernel has an exact analytic backward. Values are computed eagerly;
// gradients only when backward() is called.
template <typename S>
class Graph {
public:
    static constexpr double kLayerNormEps = 1e-5;
    static constexpr double kMaskValue = -1e9;

    NodeId input(Tensor<S> value) {
        return push(std::move(value), /*needs=*/false, nullptr, {});
    }

    // Registers an externally owned parameter; backward accumulates into p.g.
    NodeId param(Tensor<S>& p) {
        p.ensure_grad();
        return push(Tensor<S>(p.shape, p.v), /*needs=*/true, &p, {});
    }

    const Tensor<S>& value(NodeId id) const { return nodes_[id].val; }
    Tensor<S>& grad(NodeId id) { return nodes_[id].grd; }

    NodeId add(NodeId a, NodeId b) {
        const auto& ta = nodes_[a].val;
        const auto& tb = nodes_[b].val;
        require_same_shape(ta.shape, tb.shape, "add");
        Tensor<S> out(ta.shape);
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = ta.v[i] + tb.v[i];
        return push(std::move(out), needs(a) || needs(b), nullptr, [a, b](Graph& g, NodeId y) {
            g.accumulate(a, g.nodes_[y].grd.v);
            g.accumulate(b, g.nodes_[y].grd.v);
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        const auto& ta = nodes_[a].val;
        const auto& tb = nodes_[b].val;
        require_same_shape(ta.shape, tb.shape, "mul");
        Tensor<S> out(ta.shape);
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = ta.v[i] * tb.v[i];
        return push(std::move(out), needs(a) || needs(b), nullptr, [a, b](Graph& g, NodeId y) {
            const auto& dy = g.nodes_[y].grd.v;
            if (g.needs(a)) {
                auto& da = g.grad_buf(a);
                const auto& bv = g.nodes_[b].val.v;
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
            }
            if (g.needs(b)) {
                auto& db = g.grad_buf(b);
                const auto& av = g.nodes_[a].val.v;
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
            }
        });
    }

    NodeId scale(NodeId a, S c) {
        Tensor<S> out(nodes_[a].val.shape);
        const auto& av = nodes_[a].val.v;
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = av[i] * c;
        return push(std::move(out), needs(a), nullptr, [a, c](Graph& g, NodeId y) {
            if (!g.needs(a)) return;
            auto& da = g.grad_buf(a);
            const auto& dy = g.nodes_[y].grd.v;
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c;
        });
    }

    // C[m x n] = A[m x k] * B[k x n]
    NodeId matmul(NodeId a, NodeId b) {
        const auto& ta = nodes_[a].val;
        const auto& tb = nodes_[b].val;
        if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[0])
            throw std::invalid_argument("matmul: incompatible shapes " + shape_str(ta.shape) + " vs " +
                                        shape_str(tb.shape));
        const int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
        Tensor<S> out({m, n});
        gemm(ta.data(), tb.data(), out.data(), m, k, n, false, false);
        return push(std::move(out), needs(a) || needs(b), nullptr, [a, b, m, k, n](Graph& g, NodeId y) {
            const S* dy = g.nodes_[y].grd.data();
            if (g.needs(a)) // dA += dY * B^T
                gemm(dy, g.nodes_[b].val.data(), g.grad_buf(a).data(), m, n, k, false, true);
            if (g.needs(b)) // dB += A^T * dY
                gemm(g.nodes_[a].val.data(), dy, g.grad_buf(b).data(), k, m, n, true, false);
        });
    }

    // Adds a row vector to every row of a matrix.
    NodeId add_bias(NodeId m_id, NodeId bias) {
        const auto& tm = nodes_[m_id].val;
        const auto& tb = nodes_[bias].val;
        const int rows = tm.shape[0], cols = tm.shape[1];
        if (static_cast<int>(tb.size()) != cols)
            throw std::invalid_argument("add_bias: bias size " + std::to_string(tb.size()) +
                                        " does not match columns " + std::to_string(cols));
        Tensor<S> out(tm.shape);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) out.v[(std::size_t)r * cols + c] = tm.v[(std::size_t)r * cols + c] + tb.v[c];
        return push(std::move(out), needs(m_id) || needs(bias), nullptr, [m_id, bias, rows, cols](Graph& g, NodeId y) {
            const auto& dy = g.nodes_[y].grd.v;
            if (g.needs(m_id)) g.accumulate(m_id, dy);
            if (g.needs(bias)) {
                auto& db = g.grad_buf(bias);
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c) db[c] += dy[(std::size_t)r * cols + c];
            }
        });
    }

    NodeId transpose(NodeId a) {
        const auto& ta = nodes_[a].val;
        const int r = ta.shape[0], c = ta.shape[1];
        Tensor<S> out({c, r});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out.v[(std::size_t)j * r + i] = ta.v[(std::size_t)i * c + j];
        return push(std::move(out), needs(a), nullptr, [a, r, c](Graph& g, NodeId y) {
            if (!g.needs(a)) return;
            auto& da = g.grad_buf(a);
            const auto& dy = g.nodes_[y].grd.v;
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) da[(std::size_t)i * c + j] += dy[(std::size_t)j * r + i];
        });
    }

    NodeId slice_cols(NodeId a, int c0, int n) {
        const auto& ta = nodes_[a].val;
        const int rows = ta.shape[0], cols = ta.shape[1];
        if (c0 < 0 || c0 + n > cols) throw std::invalid_argument("slice_cols: range out of bounds");
        Tensor<S> out({rows, n});
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < n; ++j) out.v[(std::size_t)r * n + j] = ta.v[(std::size_t)r * cols + c0 + j];
        return push(std::move(out), needs(a), nullptr, [a, c0, n, rows, cols](Graph& g, NodeId y) {
            if (!g.needs(a)) return;
            auto& da = g.grad_buf(a);
            const auto& dy = g.nodes_[y].grd.v;
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < n; ++j) da[(std::size_t)r * cols + c0 + j] += dy[(std::size_t)r * n + j];
        });
    }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
        const int rows = nodes_[parts[0]].val.shape[0];
        int total = 0;
        bool any_needs = false;
        for (NodeId p : parts) {
            if (nodes_[p].val.shape[0] != rows) throw std::invalid_argument("concat_cols: row mismatch");
            total += nodes_[p].val.shape[1];
            any_needs = any_needs || needs(p);
        }
        Tensor<S> out({rows, total});
        int off = 0;
        for (NodeId p : parts) {
            const auto& tp = nodes_[p].val;
            const int c = tp.shape[1];
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < c; ++j) out.v[(std::size_t)r * total + off + j] = tp.v[(std::size_t)r * c + j];
            off += c;
        }
        return push(std::move(out), any_needs, nullptr, [parts, rows, total](Graph& g, NodeId y) {
            const auto& dy = g.nodes_[y].grd.v;
            int off = 0;
            for (NodeId p : parts) {
                const int c = g.nodes_[p].val.shape[1];
                if (g.needs(p)) {
                    auto& dp = g.grad_buf(p);
                    for (int r = 0; r < rows; ++r)
                        for (int j = 0; j < c; ++j) dp[(std::size_t)r * c + j] += dy[(std::size_t)r * total + off + j];
                }
                off += c;
            }
        });
    }

    // Exact (erf-based) GELU.
    NodeId gelu(NodeId a) {
        const auto& ta = nodes_[a].val;
        Tensor<S> out(ta.shape);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double x = static_cast<double>(ta.v[i]);
            out.v[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)));
        }
        return push(std::move(out), needs(a), nullptr, [a](Graph& g, NodeId y) {
            if (!g.needs(a)) return;
            auto& da = g.grad_buf(a);
            const auto& dy = g.nodes_[y].grd.v;
            const auto& xv = g.nodes_[a].val.v;
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < dy.size(); ++i) {
                const double x = static_cast<double>(xv[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                da[i] += dy[i] * static_cast<S>(cdf + x * pdf);
            }
        });
    }

    // Row-wise softmax (last axis), max-subtracted for stability.
    NodeId softmax_rows(NodeId a) {
        const auto& ta = nodes_[a].val;
        const int rows = ta.shape[0], cols = ta.shape[1];
        Tensor<S> out(ta.shape);
        for (int r = 0; r < rows; ++r) {
            const S* x = ta.data() + (std::size_t)r * cols;
            S* y = out.data() + (std::size_t)r * cols;
            S mx = x[0];
            for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
            double sum = 0;
            for (int c = 0; c < cols; ++c) {
                const double e = std::exp(static_cast<double>(x[c] - mx));
                y[c] = static_cast<S>(e);
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int c = 0; c < cols; ++c) y[c] = static_cast<S>(y[c] * inv);
        }
        return push(std::move(out), needs(a), nullptr, [a, rows, cols](Graph& g, NodeId y) {
            if (!g.needs(a)) return;
            auto& da = g.grad_buf(a);
            const auto& yv = g.nodes_[y].val.v;
            const auto& dy = g.nodes_[y].grd.v;
            for (int r = 0; r < rows; ++r) {
                const std::size_t off = (std::size_t)r * cols;
                double dot = 0;
                for (int c = 0; c < cols; ++c) dot += static_cast<double>(dy[off + c]) * yv[off + c];
                for (int c = 0; c < cols; ++c)
                    da[off + c] += static_cast<S>(yv[off + c] * (static_cast<double>(dy[off + c]) - dot));
            }
        });
    }

    // Row-wise layer norm with learned scale/shift.
    NodeId layernorm(NodeId x, NodeId gamma, NodeId beta) {
        const auto& tx = nodes_[x].val;
        const int rows = tx.shape[0], cols = tx.shape[1];
        if (static_cast<int>(nodes_[gamma].val.size()) != cols || static_cast<int>(nodes_[beta].val.size()) != cols)
            throw std::invalid_argument("layernorm: scale/shift size must match feature dim " + std::to_string(cols));
        Tensor<S> out(tx.shape);
        std::vector<double> inv_std(rows), means(rows);
        for (int r = 0; r < rows; ++r) {
            const S* xv = tx.data() + (std::size_t)r * cols;
            double mean = 0;
            for (int c = 0; c < cols; ++c) mean += xv[c];
            mean /= cols;
            double var = 0;
            for (int c = 0; c < cols; ++c) {
                const double d = xv[c] - mean;
                var += d * d;
            }
            var /= cols;
            const double istd = 1.0 / std::sqrt(var + kLayerNormEps);
            means[r] = mean;
            inv_std[r] = istd;
            const auto& gv = nodes_[gamma].val.v;
            const auto& bv = nodes_[beta].val.v;
            for (int c = 0; c < cols; ++c)
                out.v[(std::size_t)r * cols + c] = static_cast<S>((xv[c] - mean) * istd * gv[c] + bv[c]);
        }
        auto meansp = std::make_shared<std::vector<double>>(std::move(means));
        auto istdp = std::make_shared<std::vector<double>>(std::move(inv_std));
        return push(std::move(out), needs(x) || needs(gamma) || needs(beta), nullptr,
                    [x, gamma, beta, rows, cols, meansp, istdp](Graph& g, NodeId y) {
                        const auto& dy = g.nodes_[y].grd.v;
                        const auto& xv = g.nodes_[x].val.v;
                        const auto& gv = g.nodes_[gamma].val.v;
                        for (int r = 0; r < rows; ++r) {
                            const std::size_t off = (std::size_t)r * cols;
                            const double mean = (*meansp)[r], istd = (*istdp)[r];
                            if (g.needs(gamma)) {
                                auto& dg = g.grad_buf(gamma);
                                for (int c = 0; c < cols; ++c)
                                    dg[c] += static_cast<S>(dy[off + c] * (xv[off + c] - mean) * istd);
                            }
                            if (g.needs(beta)) {
                                auto& db = g.grad_buf(beta);
                                for (int c = 0; c < cols; ++c) db[c] += dy[off + c];
                            }
                            if (g.needs(x)) {
                                auto& dx = g.grad_buf(x);
                                double sum_dxhat = 0, sum_dxhat_xhat = 0;
                                for (int c = 0; c < cols; ++c) {
                                    const double xhat = (xv[off + c] - mean) * istd;
                                    const double dxhat = static_cast<double>(dy[off + c]) * gv[c];
                                    sum_dxhat += dxhat;
                                    sum_dxhat_xhat += dxhat * xhat;
                                }
                                for (int c = 0; c < cols; ++c) {
                                    const double xhat = (xv[off + c] - mean) * istd;
                                    const double dxhat = static_cast<double>(dy[off + c]) * gv[c];
                                    dx[off + c] += static_cast<S>(
                                        istd * (dxhat - sum_dxhat / cols - xhat * sum_dxhat_xhat / cols));
                                }
                            }
                        }
                    });
    }

    // Gathers table rows by id; backward scatter-adds into the table.
    NodeId embedding(NodeId table, std::vector<int> ids) {
        const auto& tt = nodes_[table].val;
        const int vocab = tt.shape[0], dim = tt.shape[1];
        for (int id : ids)
            if (id < 0 || id >= vocab)
                throw std::invalid_argument("embedding: id " + std::to_string(id) + " outside table of " +
                                            std::to_string(vocab) + " rows");
        Tensor<S> out({static_cast<int>(ids.size()), dim});
        for (std::size_t r = 0; r < ids.size(); ++r)
            std::copy_n(tt.data() + (std::size_t)ids[r] * dim, dim, out.data() + r * dim);
        auto idsp = std::make_shared<std::vector<int>>(std::move(ids));
        return push(std::move(out), needs(table), nullptr, [table, dim, idsp](Graph& g, NodeId y) {
            if (!g.needs(table)) return;
            auto& dt = g.grad_buf(table);
            const auto& dy = g.nodes_[y].grd.v;
            for (std::size_t r = 0; r < idsp->size(); ++r) {
                const std::size_t dst = (std::size_t)(*idsp)[r] * dim;
                for (int c = 0; c < dim; ++c) dt[dst + c] += dy[r * dim + c];
            }
        });
    }

    // Inverted-scaling dropout; identity when train is false.
    NodeId dropout(NodeId a, double rate, bool train, Rng& rng) {
        if (!train || rate <= 0.0) return a;
        if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
        const auto& ta = nodes_[a].val;
        auto mask = std::make_shared<std::vector<S>>(ta.size());
        const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        Tensor<S> out(ta.shape);
        for (std::size_t i = 0; i < ta.size(); ++i) {
            const S m = uni(rng) < rate ? S(0) : keep_scale;
            (*mask)[i] = m;
            out.v[i] = ta.v[i] * m;
        }
        return push(std::move(out), needs(a), nullptr, [a, mask](Graph& g, NodeId y) {
            if (!g.needs(a)) return;
            auto& da = g.grad_buf(a);
            const auto& dy = g.nodes_[y].grd.v;
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (*mask)[i];
        });
    }

    // Adds the additive causal mask: -1e9 wherever key position > query position.
    NodeId add_causal_mask(NodeId scores) {
        const auto& ts = nodes_[scores].val;
        const int rows = ts.shape[0], cols = ts.shape[1];
        Tensor<S> out(ts.shape);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const std::size_t i = (std::size_t)r * cols + c;
                out.v[i] = c > r ? static_cast<S>(ts.v[i] + kMaskValue) : ts.v[i];
            }
        return push(std::move(out), needs(scores), nullptr, [scores](Graph& g, NodeId y) {
            if (g.needs(scores)) g.accumulate(scores, g.nodes_[y].grd.v);
        });
    }

    // Single-head scaled dot-product attention; optional causal mask.
    NodeId attention(NodeId q, NodeId k, NodeId v, bool causal) {
        const int dk = nodes_[q].val.shape[1];
        NodeId scores = matmul(scale(q, static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)))), transpose(k));
        if (causal) scores = add_causal_mask(scores);
        return matmul(softmax_rows(scores), v);
    }

    // Mean over unmasked rows of -log softmax(logits)[target].
    NodeId cross_entropy(NodeId logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask) {
        const auto& tl = nodes_[logits].val;
        const int rows = tl.shape[0], cols = tl.shape[1];
        if (static_cast<int>(targets.size()) != rows || static_cast<int>(mask.size()) != rows)
            throw std::invalid_argument("cross_entropy: targets/mask must have one entry per logit row");
        auto probs = std::make_shared<std::vector<double>>((std::size_t)rows * cols);
        int n_active = 0;
        double total = 0;
        for (int r = 0; r < rows; ++r) {
            if (!mask[r]) continue;
            if (targets[r] < 0 || targets[r] >= cols)
                throw std::invalid_argument("cross_entropy: target id " + std::to_string(targets[r]) +
                                            " out of range for " + std::to_string(cols) + " classes");
            const S* x = tl.data() + (std::size_t)r * cols;
            double mx = x[0];
            for (int c = 1; c < cols; ++c) mx = std::max(mx, static_cast<double>(x[c]));
            double sum = 0;
            for (int c = 0; c < cols; ++c) {
                const double e = std::exp(static_cast<double>(x[c]) - mx);
                (*probs)[(std::size_t)r * cols + c] = e;
                sum += e;
            }
            for (int c = 0; c < cols; ++c) (*probs)[(std::size_t)r * cols + c] /= sum;
            total += mx + std::log(sum) - static_cast<double>(x[targets[r]]);
            ++n_active;
        }
        if (n_active == 0) throw std::invalid_argument("cross_entropy: no unmasked position");
        Tensor<S> out({1});
        out.v[0] = static_cast<S>(total / n_active);
        auto tgt = std::make_shared<std::vector<int>>(targets);
        auto msk = std::make_shared<std::vector<std::uint8_t>>(mask);
        return push(std::move(out), needs(logits), nullptr,
                    [logits, rows, cols, probs, tgt, msk, n_active](Graph& g, NodeId y) {
                        if (!g.needs(logits)) return;
                        auto& dl = g.grad_buf(logits);
                        const double upstream = static_cast<double>(g.nodes_[y].grd.v[0]) / n_active;
                        for (int r = 0; r < rows; ++r) {
                            if (!(*msk)[r]) continue;
                            for (int c = 0; c < cols; ++c) {
                                double d = (*probs)[(std::size_t)r * cols + c];
                                if (c == (*tgt)[r]) d -= 1.0;
                                dl[(std::size_t)r * cols + c] += static_cast<S>(d * upstream);
                            }
                        }
                    });
    }

    NodeId sum(NodeId a) {
        const auto& ta = nodes_[a].val;
        double s = 0;
        for (S x : ta.v) s += x;
        Tensor<S> out({1});
        out.v[0] = static_cast<S>(s);
        return push(std::move(out), needs(a), nullptr, [a](Graph& g, NodeId y) {
            if (!g.needs(a)) return;
            auto& da = g.grad_buf(a);
            const S dy = g.nodes_[y].grd.v[0];
            for (auto& d : da) d += dy;
        });
    }

    // Reverse sweep from a scalar loss; parameter grads accumulate into the
    // registered tensors' .g buffers.
    void backward(NodeId loss) {
        if (nodes_[loss].val.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
        for (auto& n : nodes_) n.grd = Tensor<S>();
        nodes_[loss].grd = Tensor<S>(nodes_[loss].val.shape);
        nodes_[loss].grd.v[0] = S(1);
        for (NodeId id = loss; id >= 0; --id) {
            auto& n = nodes_[id];
            if (!n.needs || n.grd.v.empty()) continue;
            if (n.back) n.back(*this, id);
            if (n.external) {
                for (std::size_t i = 0; i < n.grd.v.size(); ++i) n.external->g[i] += n.grd.v[i];
            }
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<S> val;
        Tensor<S> grd;
        Tensor<S>* external = nullptr;
        bool needs = false;
        std::function<void(Graph&, NodeId)> back;
    };

    std::vector<Node> nodes_;

    bool needs(NodeId id) const { return nodes_[id].needs; }

    std::vector<S>& grad_buf(NodeId id) {
        auto& n = nodes_[id];
        if (n.grd.v.size() != n.val.size()) {
            n.grd.shape = n.val.shape;
            n.grd.v.assign(n.val.size(), S(0));
        }
        return n.grd.v;
    }

    void accumulate(NodeId id, const std::vector<S>& dy) {
        if (!needs(id)) return;
        auto& buf = grad_buf(id);
        for (std::size_t i = 0; i < dy.size(); ++i) buf[i] += dy[i];
    }

    NodeId push(Tensor<S> val, bool needs_grad, Tensor<S>* external, std::function<void(Graph&, NodeId)> back) {
        nodes_.push_back(Node{std::move(val), Tensor<S>(), external, needs_grad, std::move(back)});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    // C += op(A) * op(B); plain ikj loops, contiguous inner accesses.
    static void gemm(const S* A, const S* B, S* C, int m, int k, int n, bool ta, bool tb) {
        for (int i = 0; i < m; ++i) {
            S* c = C + (std::size_t)i * n;
            for (int l = 0; l < k; ++l) {
                const S a = ta ? A[(std::size_t)l * m + i] : A[(std::size_t)i * k + l];
                if (a == S(0)) continue;
                if (!tb) {
                    const S* b = B + (std::size_t)l * n;
                    for (int j = 0; j < n; ++j) c[j] += a * b[j];
                } else {
                    for (int j = 0; j < n; ++j) c[j] += a * B[(std::size_t)j * k + l];
                }
            }
        }
    }
};

} // namespace stemlink::numerics
