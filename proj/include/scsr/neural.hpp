#pragma once

// From-scratch dense network for masked self-reconstruction: standard scaler,
// affine -> batch norm -> x*sigmoid(x) hidden blocks, inverted dropout at the
// second hidden block, masked MSE on the non-sampled region, manual gradients
// (batch statistics differentiated as functions of the batch), and AdamW with
// decoupled weight decay. Real = float for production, double for gradient
// checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "scsr/cohort.hpp"
#include "scsr/error.hpp"
#include "scsr/mask.hpp"
#include "scsr/parallel.hpp"
#include "scsr/rng.hpp"

namespace scsr {

enum class ScalerMode { standardize, center_only };

/// Per-vertex standardization fitted on training data only.
struct FeatureScaler {
    std::vector<double> mean;
    std::vector<double> stddev; // floored at 1e-6; all ones in center_only mode

    int p() const { return static_cast<int>(mean.size()); }
};

/// Population-convention (n divisor) mean/std per vertex.
inline FeatureScaler fit_scaler(const Cohort& train, ScalerMode mode = ScalerMode::standardize) {
    const int n = train.size();
    require(n >= 2, ErrorKind::insufficient_data, "scaler needs at least 2 subjects");
    const int p = train.p();
    FeatureScaler scaler;
    scaler.mean.assign(static_cast<std::size_t>(p), 0.0);
    scaler.stddev.assign(static_cast<std::size_t>(p), 1.0);
    for (const auto& s : train.subjects)
        for (int v = 0; v < p; ++v) scaler.mean[static_cast<std::size_t>(v)] += s.thickness[static_cast<std::size_t>(v)];
    for (auto& m : scaler.mean) m /= n;
    if (mode == ScalerMode::standardize) {
        std::vector<double> acc(static_cast<std::size_t>(p), 0.0);
        for (const auto& s : train.subjects)
            for (int v = 0; v < p; ++v) {
                const double d = s.thickness[static_cast<std::size_t>(v)] - scaler.mean[static_cast<std::size_t>(v)];
                acc[static_cast<std::size_t>(v)] += d * d;
            }
        for (int v = 0; v < p; ++v)
            scaler.stddev[static_cast<std::size_t>(v)] = std::max(std::sqrt(acc[static_cast<std::size_t>(v)] / n), 1e-6);
    }
    return scaler;
}

template <typename Real>
std::vector<Real> standardize(const FeatureScaler& scaler, const std::vector<float>& thickness) {
    require(static_cast<int>(thickness.size()) == scaler.p(), ErrorKind::shape,
            "thickness length does not match scaler");
    std::vector<Real> out(thickness.size());
    for (std::size_t v = 0; v < thickness.size(); ++v)
        out[v] = static_cast<Real>((thickness[v] - scaler.mean[v]) / scaler.stddev[v]);
    return out;
}

/// Zeroes the non-sampled positions; in standardized space zero is the mean.
template <typename Real>
std::vector<Real> apply_mask_input(const std::vector<Real>& x_std, const SamplingMask& mask) {
    require(x_std.size() == mask.sampled.size(), ErrorKind::shape, "mask length mismatch");
    std::vector<Real> input(x_std.size(), Real(0));
    for (std::size_t v = 0; v < x_std.size(); ++v)
        if (mask.sampled[v]) input[v] = x_std[v];
    return input;
}

template <typename Real>
struct MlpModel {
    struct Affine {
        int in = 0, out = 0;
        std::vector<Real> weight; // row-major [out, in]
        std::vector<Real> bias;   // [out]
    };
    struct BatchNorm {
        std::vector<Real> gamma, beta;
        std::vector<Real> run_mean, run_var;
    };

    std::vector<int> dims;   // [p, hidden..., p]
    std::vector<Affine> affine;
    std::vector<BatchNorm> bn; // one per hidden block
    int dropout_block = 1;     // 0-based hidden block index (the second layer)
    double dropout_rate = 0.5;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.1;
    double train_sampling_rate = 0.2;
    std::uint64_t init_seed = 0;
    FeatureScaler scaler;

    int p() const { return dims.empty() ? 0 : dims.front(); }
    int n_hidden() const { return static_cast<int>(dims.size()) - 2; }
};

/// Glorot-uniform initialization, seeded; biases zero, batch norm identity.
template <typename Real>
MlpModel<Real> make_mlp(int p, const std::vector<int>& hidden_dims, std::uint64_t init_seed,
                        double dropout_rate = 0.5, double train_sampling_rate = 0.2) {
    require(p >= 1, ErrorKind::config, "p must be positive");
    require(!hidden_dims.empty(), ErrorKind::config, "need at least one hidden layer");
    MlpModel<Real> model;
    model.dims.push_back(p);
    for (int h : hidden_dims) {
        require(h >= 1, ErrorKind::config, "hidden dims must be positive");
        model.dims.push_back(h);
    }
    model.dims.push_back(p);
    model.dropout_rate = dropout_rate;
    model.dropout_block = std::min(1, static_cast<int>(hidden_dims.size()) - 1);
    model.train_sampling_rate = train_sampling_rate;
    model.init_seed = init_seed;

    for (std::size_t l = 0; l + 1 < model.dims.size(); ++l) {
        typename MlpModel<Real>::Affine a;
        a.in = model.dims[l];
        a.out = model.dims[l + 1];
        a.weight.resize(static_cast<std::size_t>(a.in) * static_cast<std::size_t>(a.out));
        a.bias.assign(static_cast<std::size_t>(a.out), Real(0));
        Rng rng(mix_seed(init_seed, 0x11217u, static_cast<std::uint64_t>(l)));
        const double limit = std::sqrt(6.0 / (a.in + a.out));
        for (auto& w : a.weight) w = static_cast<Real>(rng.uniform(-limit, limit));
        model.affine.push_back(std::move(a));
    }
    for (int h = 0; h < model.n_hidden(); ++h) {
        typename MlpModel<Real>::BatchNorm bn;
        const std::size_t d = static_cast<std::size_t>(model.dims[static_cast<std::size_t>(h) + 1]);
        bn.gamma.assign(d, Real(1));
        bn.beta.assign(d, Real(0));
        bn.run_mean.assign(d, Real(0));
        bn.run_var.assign(d, Real(1));
        model.bn.push_back(std::move(bn));
    }
    return model;
}

namespace detail {

// Kernels process 4 output rows together so each pass over B feeds 4 rows.
// Every element keeps a fixed accumulation order over K regardless of row
// grouping or thread count, so results are bitwise thread-count independent.

// C[M,N] = A[M,K] * B[N,K]^T.
template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, int m, int n, int k, int threads) {
    const std::size_t K = static_cast<std::size_t>(k);
    const std::size_t N = static_cast<std::size_t>(n);
    auto dot_row = [&](const Real* ai, const Real* bj) {
        Real acc[8] = {Real(0), Real(0), Real(0), Real(0), Real(0), Real(0), Real(0), Real(0)};
        int kk = 0;
        for (; kk + 8 <= k; kk += 8)
            for (int l = 0; l < 8; ++l) acc[l] += ai[kk + l] * bj[kk + l];
        Real rest = Real(0);
        for (; kk < k; ++kk) rest += ai[kk] * bj[kk];
        return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + rest;
    };
    parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t r0, std::size_t r1) {
        std::size_t i = r0;
        for (; i + 4 <= r1; i += 4) {
            const Real* a0 = a + i * K;
            const Real* a1 = a0 + K;
            const Real* a2 = a1 + K;
            const Real* a3 = a2 + K;
            for (std::size_t j = 0; j < N; ++j) {
                const Real* bj = b + j * K;
                Real s0[8] = {}, s1[8] = {}, s2[8] = {}, s3[8] = {};
                int kk = 0;
                for (; kk + 8 <= k; kk += 8)
                    for (int l = 0; l < 8; ++l) {
                        const Real bv = bj[kk + l];
                        s0[l] += a0[kk + l] * bv;
                        s1[l] += a1[kk + l] * bv;
                        s2[l] += a2[kk + l] * bv;
                        s3[l] += a3[kk + l] * bv;
                    }
                Real r0s = Real(0), r1s = Real(0), r2s = Real(0), r3s = Real(0);
                for (; kk < k; ++kk) {
                    const Real bv = bj[kk];
                    r0s += a0[kk] * bv;
                    r1s += a1[kk] * bv;
                    r2s += a2[kk] * bv;
                    r3s += a3[kk] * bv;
                }
                auto fold = [](const Real* s, Real rest) {
                    return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7])) + rest;
                };
                c[i * N + j] = fold(s0, r0s);
                c[(i + 1) * N + j] = fold(s1, r1s);
                c[(i + 2) * N + j] = fold(s2, r2s);
                c[(i + 3) * N + j] = fold(s3, r3s);
            }
        }
        for (; i < r1; ++i) {
            const Real* ai = a + i * K;
            Real* ci = c + i * N;
            for (std::size_t j = 0; j < N; ++j) ci[j] = dot_row(ai, b + j * K);
        }
    });
}

// C[M,N] = A[M,K] * B[K,N] (saxpy over rows of B).
template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, int m, int n, int k, int threads) {
    const std::size_t K = static_cast<std::size_t>(k);
    const std::size_t N = static_cast<std::size_t>(n);
    parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t r0, std::size_t r1) {
        std::size_t i = r0;
        for (; i + 4 <= r1; i += 4) {
            Real* c0 = c + i * N;
            Real* c1 = c0 + N;
            Real* c2 = c1 + N;
            Real* c3 = c2 + N;
            std::fill(c0, c0 + N, Real(0));
            std::fill(c1, c1 + N, Real(0));
            std::fill(c2, c2 + N, Real(0));
            std::fill(c3, c3 + N, Real(0));
            const Real* ai = a + i * K;
            for (int kk = 0; kk < k; ++kk) {
                const Real* bk = b + static_cast<std::size_t>(kk) * N;
                const Real a0 = ai[kk];
                const Real a1 = ai[K + kk];
                const Real a2 = ai[2 * K + kk];
                const Real a3 = ai[3 * K + kk];
                for (std::size_t j = 0; j < N; ++j) {
                    const Real bv = bk[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
        }
        for (; i < r1; ++i) {
            Real* ci = c + i * N;
            std::fill(ci, ci + N, Real(0));
            const Real* ai = a + i * K;
            for (int kk = 0; kk < k; ++kk) {
                const Real av = ai[kk];
                const Real* bk = b + static_cast<std::size_t>(kk) * N;
                for (std::size_t j = 0; j < N; ++j) ci[j] += av * bk[j];
            }
        }
    });
}

// C[M,N] = A[K,M]^T * B[K,N]; rows of C are parallel units so accumulation
// order over K stays fixed.
template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, int m, int n, int k, int threads) {
    const std::size_t M = static_cast<std::size_t>(m);
    const std::size_t N = static_cast<std::size_t>(n);
    parallel_for(M, threads, [&](std::size_t r0, std::size_t r1) {
        std::size_t i = r0;
        for (; i + 4 <= r1; i += 4) {
            Real* c0 = c + i * N;
            Real* c1 = c0 + N;
            Real* c2 = c1 + N;
            Real* c3 = c2 + N;
            std::fill(c0, c0 + N, Real(0));
            std::fill(c1, c1 + N, Real(0));
            std::fill(c2, c2 + N, Real(0));
            std::fill(c3, c3 + N, Real(0));
            for (int kk = 0; kk < k; ++kk) {
                const Real* ak = a + static_cast<std::size_t>(kk) * M + i;
                const Real* bk = b + static_cast<std::size_t>(kk) * N;
                const Real a0 = ak[0];
                const Real a1 = ak[1];
                const Real a2 = ak[2];
                const Real a3 = ak[3];
                for (std::size_t j = 0; j < N; ++j) {
                    const Real bv = bk[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
        }
        for (; i < r1; ++i) {
            Real* ci = c + i * N;
            std::fill(ci, ci + N, Real(0));
            for (int kk = 0; kk < k; ++kk) {
                const Real av = a[static_cast<std::size_t>(kk) * M + i];
                const Real* bk = b + static_cast<std::size_t>(kk) * N;
                for (std::size_t j = 0; j < N; ++j) ci[j] += av * bk[j];
            }
        }
    });
}

template <typename Real>
Real sigmoid(Real x) {
    return Real(1) / (Real(1) + std::exp(-x));
}

} // namespace detail

enum class RunMode { train, eval };

/// Inference-only forward pass: running batch-norm statistics, no dropout, no
/// cache. The model is read-only, so concurrent calls are safe.
template <typename Real>
std::vector<Real> forward_eval(const MlpModel<Real>& model, const std::vector<Real>& input,
                               int batch, int threads = 1) {
    const int p = model.p();
    require(static_cast<int>(input.size()) == batch * p, ErrorKind::shape, "bad input batch shape");

    std::vector<Real> current = input;
    for (int h = 0; h < model.n_hidden(); ++h) {
        const auto& aff = model.affine[static_cast<std::size_t>(h)];
        const auto& bn = model.bn[static_cast<std::size_t>(h)];
        const int d = aff.out;
        std::vector<Real> z(static_cast<std::size_t>(batch) * d);
        detail::gemm_nt(current.data(), aff.weight.data(), z.data(), batch, d, aff.in, threads);
        const Real eps = static_cast<Real>(model.bn_epsilon);
        for (int b = 0; b < batch; ++b)
            for (int j = 0; j < d; ++j) {
                const std::size_t idx = static_cast<std::size_t>(b) * d + j;
                const Real pre = z[idx] + aff.bias[static_cast<std::size_t>(j)];
                const Real inv = Real(1) / std::sqrt(bn.run_var[static_cast<std::size_t>(j)] + eps);
                const Real y = bn.gamma[static_cast<std::size_t>(j)] *
                                   ((pre - bn.run_mean[static_cast<std::size_t>(j)]) * inv) +
                               bn.beta[static_cast<std::size_t>(j)];
                z[idx] = y * detail::sigmoid(y);
            }
        current = std::move(z);
    }
    const auto& out_aff = model.affine.back();
    std::vector<Real> output(static_cast<std::size_t>(batch) * out_aff.out);
    detail::gemm_nt(current.data(), out_aff.weight.data(), output.data(), batch, out_aff.out,
                    out_aff.in, threads);
    for (int b = 0; b < batch; ++b)
        for (int j = 0; j < out_aff.out; ++j)
            output[static_cast<std::size_t>(b) * out_aff.out + j] += out_aff.bias[static_cast<std::size_t>(j)];
    return output;
}

/// Intermediate activations kept for the backward pass.
template <typename Real>
struct BatchCache {
    int batch = 0;
    std::vector<Real> input; // B x p
    struct Block {
        std::vector<Real> pre_bn;   // Z
        std::vector<Real> mu, var;  // batch statistics (per feature)
        std::vector<Real> xhat;     // normalized
        std::vector<Real> pre_act;  // gamma*xhat + beta
        std::vector<Real> out;      // after activation (+ dropout)
        std::vector<std::uint8_t> drop; // kept units; empty when no dropout
    };
    std::vector<Block> blocks;
    std::vector<Real> output; // B x p
};

/// Batched forward pass. In train mode batch statistics are used (and running
/// stats updated unless `update_running` is false); dropout masks come from
/// `drop_rng`. In eval mode running statistics are used and dropout is off.
template <typename Real>
void forward_batch(MlpModel<Real>& model, const std::vector<Real>& input, int batch, RunMode mode,
                   BatchCache<Real>& cache, Rng* drop_rng = nullptr, bool update_running = true,
                   int threads = 1) {
    const int p = model.p();
    require(static_cast<int>(input.size()) == batch * p, ErrorKind::shape, "bad input batch shape");
    cache.batch = batch;
    cache.input = input;
    cache.blocks.assign(static_cast<std::size_t>(model.n_hidden()), {});

    const std::vector<Real>* current = &cache.input;
    for (int h = 0; h < model.n_hidden(); ++h) {
        auto& blk = cache.blocks[static_cast<std::size_t>(h)];
        const auto& aff = model.affine[static_cast<std::size_t>(h)];
        const int d = aff.out;
        blk.pre_bn.resize(static_cast<std::size_t>(batch) * d);
        detail::gemm_nt(current->data(), aff.weight.data(), blk.pre_bn.data(), batch, d, aff.in, threads);
        for (int b = 0; b < batch; ++b)
            for (int j = 0; j < d; ++j) blk.pre_bn[static_cast<std::size_t>(b) * d + j] += aff.bias[static_cast<std::size_t>(j)];

        auto& bn = model.bn[static_cast<std::size_t>(h)];
        blk.mu.assign(static_cast<std::size_t>(d), Real(0));
        blk.var.assign(static_cast<std::size_t>(d), Real(0));
        if (mode == RunMode::train) {
            for (int b = 0; b < batch; ++b)
                for (int j = 0; j < d; ++j) blk.mu[static_cast<std::size_t>(j)] += blk.pre_bn[static_cast<std::size_t>(b) * d + j];
            for (auto& m : blk.mu) m /= Real(batch);
            for (int b = 0; b < batch; ++b)
                for (int j = 0; j < d; ++j) {
                    const Real diff = blk.pre_bn[static_cast<std::size_t>(b) * d + j] - blk.mu[static_cast<std::size_t>(j)];
                    blk.var[static_cast<std::size_t>(j)] += diff * diff;
                }
            for (auto& v : blk.var) v /= Real(batch);
            if (update_running) {
                const Real mom = static_cast<Real>(model.bn_momentum);
                // Unbiased variance feeds the running estimate.
                const Real unbias = batch > 1 ? Real(batch) / Real(batch - 1) : Real(1);
                for (int j = 0; j < d; ++j) {
                    bn.run_mean[static_cast<std::size_t>(j)] =
                        (Real(1) - mom) * bn.run_mean[static_cast<std::size_t>(j)] + mom * blk.mu[static_cast<std::size_t>(j)];
                    bn.run_var[static_cast<std::size_t>(j)] =
                        (Real(1) - mom) * bn.run_var[static_cast<std::size_t>(j)] + mom * blk.var[static_cast<std::size_t>(j)] * unbias;
                }
            }
        } else {
            for (int j = 0; j < d; ++j) {
                blk.mu[static_cast<std::size_t>(j)] = bn.run_mean[static_cast<std::size_t>(j)];
                blk.var[static_cast<std::size_t>(j)] = bn.run_var[static_cast<std::size_t>(j)];
            }
        }

        blk.xhat.resize(blk.pre_bn.size());
        blk.pre_act.resize(blk.pre_bn.size());
        const Real eps = static_cast<Real>(model.bn_epsilon);
        for (int b = 0; b < batch; ++b)
            for (int j = 0; j < d; ++j) {
                const std::size_t idx = static_cast<std::size_t>(b) * d + j;
                const Real inv = Real(1) / std::sqrt(blk.var[static_cast<std::size_t>(j)] + eps);
                blk.xhat[idx] = (blk.pre_bn[idx] - blk.mu[static_cast<std::size_t>(j)]) * inv;
                blk.pre_act[idx] = bn.gamma[static_cast<std::size_t>(j)] * blk.xhat[idx] + bn.beta[static_cast<std::size_t>(j)];
            }

        blk.out.resize(blk.pre_bn.size());
        for (std::size_t i = 0; i < blk.out.size(); ++i) {
            const Real y = blk.pre_act[i];
            blk.out[i] = y * detail::sigmoid(y); // x * sigmoid(x)
        }

        const bool dropout_here = mode == RunMode::train && h == model.dropout_block &&
                                  model.dropout_rate > 0.0;
        if (dropout_here) {
            require(drop_rng != nullptr, ErrorKind::config, "train-mode forward needs a dropout rng");
            blk.drop.resize(blk.out.size());
            const Real keep_scale = static_cast<Real>(1.0 / (1.0 - model.dropout_rate));
            for (std::size_t i = 0; i < blk.out.size(); ++i) {
                blk.drop[i] = drop_rng->bernoulli(model.dropout_rate) ? 0 : 1;
                blk.out[i] = blk.drop[i] ? blk.out[i] * keep_scale : Real(0);
            }
        }
        current = &blk.out;
    }

    const auto& out_aff = model.affine.back();
    cache.output.resize(static_cast<std::size_t>(batch) * out_aff.out);
    detail::gemm_nt(current->data(), out_aff.weight.data(), cache.output.data(), batch, out_aff.out,
                    out_aff.in, threads);
    for (int b = 0; b < batch; ++b)
        for (int j = 0; j < out_aff.out; ++j)
            cache.output[static_cast<std::size_t>(b) * out_aff.out + j] += out_aff.bias[static_cast<std::size_t>(j)];
}

/// Single-sample forward per the sampling contract: the network sees x_std at
/// sampled positions and zero elsewhere.
template <typename Real>
std::vector<Real> masked_forward(MlpModel<Real>& model, const std::vector<Real>& x_std,
                                 const SamplingMask& mask, RunMode mode, Rng* drop_rng = nullptr) {
    require(static_cast<int>(x_std.size()) == model.p(), ErrorKind::shape,
            "input length does not match model");
    const std::vector<Real> input = apply_mask_input(x_std, mask);
    if (mode == RunMode::eval) return forward_eval(model, input, 1);
    BatchCache<Real> cache;
    forward_batch(model, input, 1, mode, cache, drop_rng, /*update_running=*/true);
    return cache.output;
}

/// Mean squared error over the non-sampled region only.
template <typename Real>
double masked_mse(const std::vector<Real>& pred, const std::vector<Real>& target,
                  const SamplingMask& mask) {
    require(pred.size() == target.size() && pred.size() == mask.sampled.size(), ErrorKind::shape,
            "masked_mse shape mismatch");
    const int n_ns = mask.non_sampled_count();
    require(n_ns > 0, ErrorKind::degenerate_mask, "mask has no non-sampled positions");
    double acc = 0.0;
    for (std::size_t v = 0; v < pred.size(); ++v)
        if (!mask.sampled[v]) {
            const double d = static_cast<double>(pred[v]) - static_cast<double>(target[v]);
            acc += d * d;
        }
    return acc / n_ns;
}

/// Parameter gradients, mirroring the model layout.
template <typename Real>
struct Gradients {
    struct Affine {
        std::vector<Real> weight, bias;
    };
    struct BatchNorm {
        std::vector<Real> gamma, beta;
    };
    std::vector<Affine> affine;
    std::vector<BatchNorm> bn;
};

/// Batch loss: mean over samples of the per-sample masked MSE (each sample has
/// its own mask). Returns the loss; gradient of it lands in `grads`.
template <typename Real>
double backward_batch(const MlpModel<Real>& model, const BatchCache<Real>& cache,
                      const std::vector<Real>& targets, const std::vector<SamplingMask>& masks,
                      Gradients<Real>& grads, double loss_scale = 1.0, int threads = 1) {
    const int batch = cache.batch;
    const int p = model.p();
    require(static_cast<int>(targets.size()) == batch * p, ErrorKind::shape, "bad target shape");
    require(static_cast<int>(masks.size()) == batch, ErrorKind::shape, "one mask per sample required");

    grads.affine.assign(model.affine.size(), {});
    for (std::size_t l = 0; l < model.affine.size(); ++l) {
        grads.affine[l].weight.assign(model.affine[l].weight.size(), Real(0));
        grads.affine[l].bias.assign(model.affine[l].bias.size(), Real(0));
    }
    grads.bn.assign(model.bn.size(), {});
    for (std::size_t h = 0; h < model.bn.size(); ++h) {
        grads.bn[h].gamma.assign(model.bn[h].gamma.size(), Real(0));
        grads.bn[h].beta.assign(model.bn[h].beta.size(), Real(0));
    }

    // Loss and dLoss/d_output.
    double loss = 0.0;
    std::vector<Real> delta(static_cast<std::size_t>(batch) * p, Real(0));
    for (int b = 0; b < batch; ++b) {
        const auto& mask = masks[static_cast<std::size_t>(b)];
        const int n_ns = mask.non_sampled_count();
        require(n_ns > 0, ErrorKind::degenerate_mask, "mask has no non-sampled positions");
        double sample_loss = 0.0;
        for (int v = 0; v < p; ++v) {
            if (mask.sampled[static_cast<std::size_t>(v)]) continue;
            const std::size_t idx = static_cast<std::size_t>(b) * p + v;
            const double d = static_cast<double>(cache.output[idx]) - static_cast<double>(targets[idx]);
            sample_loss += d * d;
            delta[idx] = static_cast<Real>(loss_scale * 2.0 * d / (static_cast<double>(n_ns) * batch));
        }
        loss += sample_loss / n_ns;
    }
    loss = loss_scale * loss / batch;
    require(std::isfinite(loss), ErrorKind::numeric, "non-finite loss");

    // Output affine.
    const auto& out_aff = model.affine.back();
    const std::vector<Real>& last_act =
        model.n_hidden() > 0 ? cache.blocks.back().out : cache.input;
    {
        auto& g = grads.affine.back();
        detail::gemm_tn(delta.data(), last_act.data(), g.weight.data(), out_aff.out, out_aff.in, batch,
                        threads);
        for (int b = 0; b < batch; ++b)
            for (int j = 0; j < out_aff.out; ++j)
                g.bias[static_cast<std::size_t>(j)] += delta[static_cast<std::size_t>(b) * out_aff.out + j];
    }
    std::vector<Real> d_act(static_cast<std::size_t>(batch) * out_aff.in);
    detail::gemm_nn(delta.data(), out_aff.weight.data(), d_act.data(), batch, out_aff.in, out_aff.out,
                    threads);

    for (int h = model.n_hidden() - 1; h >= 0; --h) {
        const auto& blk = cache.blocks[static_cast<std::size_t>(h)];
        const auto& bn = model.bn[static_cast<std::size_t>(h)];
        const int d = model.dims[static_cast<std::size_t>(h) + 1];

        // Dropout.
        if (!blk.drop.empty()) {
            const Real keep_scale = static_cast<Real>(1.0 / (1.0 - model.dropout_rate));
            for (std::size_t i = 0; i < d_act.size(); ++i)
                d_act[i] = blk.drop[i] ? d_act[i] * keep_scale : Real(0);
        }

        // Activation x*sigmoid(x).
        std::vector<Real> d_pre_act(d_act.size());
        for (std::size_t i = 0; i < d_act.size(); ++i) {
            const Real y = blk.pre_act[i];
            const Real sig = detail::sigmoid(y);
            d_pre_act[i] = d_act[i] * (sig * (Real(1) + y * (Real(1) - sig)));
        }

        // Batch norm; batch statistics are functions of the batch.
        auto& gbn = grads.bn[static_cast<std::size_t>(h)];
        std::vector<Real> d_pre_bn(d_act.size());
        const Real eps = static_cast<Real>(model.bn_epsilon);
        for (int j = 0; j < d; ++j) {
            const Real inv = Real(1) / std::sqrt(blk.var[static_cast<std::size_t>(j)] + eps);
            Real dgamma = Real(0), dbeta = Real(0), dvar = Real(0), dmu_a = Real(0), sum_diff = Real(0);
            for (int b = 0; b < batch; ++b) {
                const std::size_t idx = static_cast<std::size_t>(b) * d + j;
                const Real dxh = d_pre_act[idx] * bn.gamma[static_cast<std::size_t>(j)];
                const Real diff = blk.pre_bn[idx] - blk.mu[static_cast<std::size_t>(j)];
                dgamma += d_pre_act[idx] * blk.xhat[idx];
                dbeta += d_pre_act[idx];
                dvar += dxh * diff;
                dmu_a += dxh;
                sum_diff += diff;
            }
            dvar *= Real(-0.5) * inv * inv * inv;
            const Real dmu = -dmu_a * inv + dvar * Real(-2) * sum_diff / Real(batch);
            gbn.gamma[static_cast<std::size_t>(j)] += dgamma;
            gbn.beta[static_cast<std::size_t>(j)] += dbeta;
            for (int b = 0; b < batch; ++b) {
                const std::size_t idx = static_cast<std::size_t>(b) * d + j;
                const Real dxh = d_pre_act[idx] * bn.gamma[static_cast<std::size_t>(j)];
                const Real diff = blk.pre_bn[idx] - blk.mu[static_cast<std::size_t>(j)];
                d_pre_bn[idx] = dxh * inv + dvar * Real(2) * diff / Real(batch) + dmu / Real(batch);
            }
        }

        // Affine of this block.
        const auto& aff = model.affine[static_cast<std::size_t>(h)];
        const std::vector<Real>& a_in =
            h == 0 ? cache.input : cache.blocks[static_cast<std::size_t>(h) - 1].out;
        auto& g = grads.affine[static_cast<std::size_t>(h)];
        detail::gemm_tn(d_pre_bn.data(), a_in.data(), g.weight.data(), aff.out, aff.in, batch, threads);
        for (int b = 0; b < batch; ++b)
            for (int j = 0; j < aff.out; ++j)
                g.bias[static_cast<std::size_t>(j)] += d_pre_bn[static_cast<std::size_t>(b) * aff.out + j];

        if (h > 0) {
            d_act.assign(static_cast<std::size_t>(batch) * aff.in, Real(0));
            detail::gemm_nn(d_pre_bn.data(), aff.weight.data(), d_act.data(), batch, aff.in, aff.out,
                            threads);
        }
    }

    for (const auto& g : grads.affine) {
        for (Real w : g.weight)
            require(std::isfinite(static_cast<double>(w)), ErrorKind::numeric, "non-finite gradient");
    }
    return loss;
}

struct TrainConfig {
    double lr = 0.001;
    double weight_decay = 0.005;
    int epochs = 200;
    int batch_size = 128;
    double sampling_rate = 0.20;
    std::uint64_t seed = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<int> hidden_dims = {1024, 1024, 1024};
    double dropout_rate = 0.5;
    ScalerMode scaler_mode = ScalerMode::standardize;
    MaskStrategy mask_strategy = MaskStrategy::vertex;
    std::string excluded_roi; // never sampled as predictors when set
    int threads = 1;
};

/// AdamW first/second moment state, laid out like the gradients.
template <typename Real>
struct AdamState {
    Gradients<Real> m, v;
    long t = 0;

    static AdamState zeros_like(const MlpModel<Real>& model) {
        AdamState s;
        auto init = [&](Gradients<Real>& g) {
            g.affine.assign(model.affine.size(), {});
            for (std::size_t l = 0; l < model.affine.size(); ++l) {
                g.affine[l].weight.assign(model.affine[l].weight.size(), Real(0));
                g.affine[l].bias.assign(model.affine[l].bias.size(), Real(0));
            }
            g.bn.assign(model.bn.size(), {});
            for (std::size_t h = 0; h < model.bn.size(); ++h) {
                g.bn[h].gamma.assign(model.bn[h].gamma.size(), Real(0));
                g.bn[h].beta.assign(model.bn[h].beta.size(), Real(0));
            }
        };
        init(s.m);
        init(s.v);
        return s;
    }
};

namespace detail {

// theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta.
// Decay applies to affine weights only.
template <typename Real>
void adamw_update(std::vector<Real>& theta, const std::vector<Real>& grad, std::vector<Real>& m,
                  std::vector<Real>& v, const TrainConfig& cfg, long t, bool decay) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        require(std::isfinite(g), ErrorKind::numeric, "non-finite gradient in optimizer");
        const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
        const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
        m[i] = static_cast<Real>(mi);
        v[i] = static_cast<Real>(vi);
        double step = cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
        if (decay) step += cfg.lr * cfg.weight_decay * static_cast<double>(theta[i]);
        theta[i] = static_cast<Real>(static_cast<double>(theta[i]) - step);
    }
}

} // namespace detail

/// One AdamW step (t is 1-based and tracked in `state`).
template <typename Real>
void adamw_step(MlpModel<Real>& model, const Gradients<Real>& grads, AdamState<Real>& state,
                const TrainConfig& cfg) {
    ++state.t;
    for (std::size_t l = 0; l < model.affine.size(); ++l) {
        detail::adamw_update(model.affine[l].weight, grads.affine[l].weight, state.m.affine[l].weight,
                             state.v.affine[l].weight, cfg, state.t, /*decay=*/true);
        detail::adamw_update(model.affine[l].bias, grads.affine[l].bias, state.m.affine[l].bias,
                             state.v.affine[l].bias, cfg, state.t, /*decay=*/false);
    }
    for (std::size_t h = 0; h < model.bn.size(); ++h) {
        detail::adamw_update(model.bn[h].gamma, grads.bn[h].gamma, state.m.bn[h].gamma,
                             state.v.bn[h].gamma, cfg, state.t, /*decay=*/false);
        detail::adamw_update(model.bn[h].beta, grads.bn[h].beta, state.m.bn[h].beta,
                             state.v.bn[h].beta, cfg, state.t, /*decay=*/false);
    }
}

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = -1; // 0-based
    double best_val = std::numeric_limits<double>::infinity();
};

template <typename Real>
struct TrainResult {
    MlpModel<Real> model;
    TrainHistory history;
};

/// Trains the self-reconstruction MLP. Fresh per-sample masks every epoch;
/// validation masks are fixed per subject (derived from the val stream) so
/// epochs are comparable, and the best-validation checkpoint is returned.
/// Deterministic for fixed seeds; results are independent of `cfg.threads`.
template <typename Real>
TrainResult<Real> train_mlp(std::uint64_t init_seed, const Cohort& train_c, const Cohort& val_c,
                            const TrainConfig& cfg, const Parcellation* parc = nullptr) {
    require(train_c.size() >= 1, ErrorKind::insufficient_data, "training cohort is empty");
    require(val_c.size() >= 1, ErrorKind::insufficient_data, "validation cohort is empty");
    require(val_c.p() == train_c.p(), ErrorKind::shape, "train/val vertex counts differ");
    require(cfg.epochs >= 1 && cfg.batch_size >= 1, ErrorKind::config, "bad epochs/batch size");
    require(cfg.sampling_rate > 0.0 && cfg.sampling_rate < 1.0, ErrorKind::config,
            "sampling rate must be in (0, 1)");
    if (!cfg.excluded_roi.empty() || cfg.mask_strategy == MaskStrategy::parcel)
        require(parc != nullptr, ErrorKind::config, "mask configuration requires a parcellation");

    const int p = train_c.p();
    const int n = train_c.size();

    MlpModel<Real> model = make_mlp<Real>(p, cfg.hidden_dims, init_seed, cfg.dropout_rate,
                                          cfg.sampling_rate);
    if (n >= 2) {
        model.scaler = fit_scaler(train_c, cfg.scaler_mode);
    } else {
        // Single-subject training: center on that subject, unit spread.
        model.scaler.mean.assign(train_c.subjects[0].thickness.begin(),
                                 train_c.subjects[0].thickness.end());
        model.scaler.stddev.assign(static_cast<std::size_t>(p), 1.0);
    }
    AdamState<Real> adam = AdamState<Real>::zeros_like(model);

    // Fixed validation masks, one per subject; the masked input matrix does
    // not change across epochs, so build it once and evaluate batched.
    std::vector<SamplingMask> val_masks;
    val_masks.reserve(static_cast<std::size_t>(val_c.size()));
    std::vector<Real> val_input(static_cast<std::size_t>(val_c.size()) * p);
    std::vector<Real> val_target(static_cast<std::size_t>(val_c.size()) * p);
    for (int j = 0; j < val_c.size(); ++j) {
        Rng rng(mix_seed(cfg.seed, 0x7A11DA5Cu, static_cast<std::uint64_t>(j)));
        val_masks.push_back(draw_mask(p, cfg.sampling_rate, cfg.mask_strategy, parc,
                                      cfg.excluded_roi, rng));
        const std::vector<Real> x_std =
            standardize<Real>(model.scaler, val_c.subjects[static_cast<std::size_t>(j)].thickness);
        for (int v = 0; v < p; ++v) {
            const std::size_t idx = static_cast<std::size_t>(j) * p + v;
            val_target[idx] = x_std[static_cast<std::size_t>(v)];
            val_input[idx] = val_masks.back().sampled[static_cast<std::size_t>(v)] ? x_std[static_cast<std::size_t>(v)] : Real(0);
        }
    }

    TrainHistory history;
    MlpModel<Real> best = model;

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0x5F0FFE1u, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int batch = std::min(cfg.batch_size, n - start);
            std::vector<Real> input(static_cast<std::size_t>(batch) * p);
            std::vector<Real> target(static_cast<std::size_t>(batch) * p);
            std::vector<SamplingMask> masks;
            masks.reserve(static_cast<std::size_t>(batch));
            for (int b = 0; b < batch; ++b) {
                const int subj = order[static_cast<std::size_t>(start + b)];
                Rng mask_rng(mix_seed(mix_seed(cfg.seed, 0x3A5C0DE5u, static_cast<std::uint64_t>(epoch)),
                                      static_cast<std::uint64_t>(subj)));
                masks.push_back(draw_mask(p, cfg.sampling_rate, cfg.mask_strategy, parc,
                                          cfg.excluded_roi, mask_rng));
                const std::vector<Real> x_std =
                    standardize<Real>(model.scaler, train_c.subjects[static_cast<std::size_t>(subj)].thickness);
                for (int v = 0; v < p; ++v) {
                    const std::size_t idx = static_cast<std::size_t>(b) * p + v;
                    target[idx] = x_std[static_cast<std::size_t>(v)];
                    input[idx] = masks.back().sampled[static_cast<std::size_t>(v)] ? x_std[static_cast<std::size_t>(v)] : Real(0);
                }
            }

            Rng drop_rng(mix_seed(mix_seed(cfg.seed, 0xD80900u, static_cast<std::uint64_t>(epoch)),
                                  static_cast<std::uint64_t>(start)));
            BatchCache<Real> cache;
            forward_batch(model, input, batch, RunMode::train, cache, &drop_rng, true, cfg.threads);
            Gradients<Real> grads;
            double batch_loss;
            try {
                batch_loss = backward_batch(model, cache, target, masks, grads, 1.0, cfg.threads);
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::numeric)
                    fail(ErrorKind::numeric, std::string(e.what()) + " at epoch " + std::to_string(epoch + 1));
                throw;
            }
            adamw_step(model, grads, adam, cfg);
            epoch_loss += batch_loss * batch;
        }
        epoch_loss /= n;
        require(std::isfinite(epoch_loss), ErrorKind::numeric,
                "non-finite training loss at epoch " + std::to_string(epoch + 1));
        history.train_loss.push_back(epoch_loss);

        // Masked-reconstruction error on the validation set, eval mode.
        const std::vector<Real> val_out = forward_eval(model, val_input, val_c.size(), cfg.threads);
        double val_loss = 0.0;
        for (int j = 0; j < val_c.size(); ++j) {
            const auto& mask = val_masks[static_cast<std::size_t>(j)];
            double acc = 0.0;
            for (int v = 0; v < p; ++v) {
                if (mask.sampled[static_cast<std::size_t>(v)]) continue;
                const std::size_t idx = static_cast<std::size_t>(j) * p + v;
                const double diff = static_cast<double>(val_out[idx]) -
                                    static_cast<double>(val_target[idx]);
                acc += diff * diff;
            }
            val_loss += acc / mask.non_sampled_count();
        }
        val_loss /= val_c.size();
        require(std::isfinite(val_loss), ErrorKind::numeric,
                "non-finite validation loss at epoch " + std::to_string(epoch + 1));
        history.val_loss.push_back(val_loss);

        if (val_loss < history.best_val) {
            history.best_val = val_loss;
            history.best_epoch = epoch;
            best = model;
        }
    }

    return {std::move(best), std::move(history)};
}

} // namespace scsr
