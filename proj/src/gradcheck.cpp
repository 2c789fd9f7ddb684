#include "ctwso/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "ctwso/optim.hpp"
#include "ctwso/rng.hpp"

namespace ctwso {

namespace {

struct LossProbe {
    std::vector<long double> logits;
    std::uint64_t signature = 0;  // hash of every ReLU sign and clamp state
};

void mix(std::uint64_t& h, std::uint64_t v) noexcept {
    h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
}

template <typename T>
void mix_signs(std::uint64_t& h, const Tensor<T>& t) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        word = (word << 1) | (t[i] > T(0) ? 1U : 0U);
        if ((i & 63) == 63) {
            mix(h, word);
            word = 0;
        }
    }
    mix(h, word);
}

template <typename T>
LossProbe probe(const ModelParams<T>& params, const NetworkConfig& cfg, const Tensor<T>& batch,
                const std::optional<WsoParams>& wso, Backend backend) {
    LossProbe out;
    std::uint64_t h = 0;
    Tensor<T> input = batch;
    if (wso) {
        input = wso_forward(batch, *wso);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const double y = wso->w * static_cast<double>(batch[i]) + wso->b;
            mix(h, y <= 0.0 ? 0U : (y >= wso->upper ? 2U : 1U));
        }
    }
    ForwardCache<T> cache;
    forward(params, cfg, input, &cache, backend);
    // Recompute the head from the cached final activations without rounding the
    // logit back to T; that rounding alone is comparable to h * |gradient|.
    const Tensor<T>& last = cache.block_act.back();
    const std::size_t cfinal = cfg.final_channels();
    const std::size_t side = cfg.block_spatial(cfg.num_blocks - 1);
    const std::size_t plane = side * side;
    const T* fc_w = params.at("fc.weight").data();
    const long double fc_b = params.at("fc.bias")[0];
    out.logits.resize(batch.dim(0));
    for (std::size_t n = 0; n < out.logits.size(); ++n) {
        long double z = fc_b;
        for (std::size_t c = 0; c < cfinal; ++c) {
            const T* p = last.data() + (n * cfinal + c) * plane;
            long double sum = 0.0L;
            for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            z += static_cast<long double>(fc_w[c]) * (sum / static_cast<long double>(plane));
        }
        out.logits[n] = z;
    }
    for (const auto& t : cache.block_raw) mix_signs(h, t);
    for (const auto& block : cache.bottleneck_raw) {
        for (const auto& t : block) mix_signs(h, t);
    }
    out.signature = h;
    return out;
}

// Summed BCE(plus) - BCE(minus) without forming either loss: the loss is O(1)
// and its rounding would swamp the O(h * grad) difference.
double loss_difference(const LossProbe& plus, const LossProbe& minus, std::span<const double> labels) {
    long double diff = 0.0L;
    for (std::size_t n = 0; n < plus.logits.size(); ++n) {
        const long double zp = plus.logits[n];
        const long double zm = minus.logits[n];
        const long double sm = 1.0L / (1.0L + std::exp(-zm));
        // softplus(zp) - softplus(zm) = log1p(sigmoid(zm) * expm1(zp - zm))
        diff += std::log1p(sm * std::expm1(zp - zm)) - static_cast<long double>(labels[n]) * (zp - zm);
    }
    return static_cast<double>(diff);
}

}  // namespace

template <typename T>
GradCheckReport gradient_check(const ModelParams<T>& params, const NetworkConfig& cfg,
                               const Tensor<T>& batch, std::span<const double> labels,
                               const GradCheckOptions& options,
                               const std::optional<WsoParams>& wso) {
    if (labels.size() != batch.dim(0)) {
        throw ShapeError("gradient_check: one label per batch sample required");
    }

    // Analytic gradients.
    Tensor<T> input = wso ? wso_forward(batch, *wso) : batch;
    ForwardCache<T> cache;
    const Tensor<T> logits = forward(params, cfg, input, &cache, options.backend);
    std::vector<T> dlogits(logits.size());
    for (std::size_t n = 0; n < logits.size(); ++n) {
        dlogits[n] = static_cast<T>(bce_loss(static_cast<double>(logits[n]), labels[n]).dlogit);
    }
    ModelParams<T> grads = zeros_like(params);
    const Tensor<T> dinput = backward(params, cfg, cache, std::span<const T>(dlogits), grads,
                                      options.backend);
    WsoGradients<T> wso_grads;
    if (wso) {
        wso_grads = wso_backward(batch, *wso, dinput);
    }

    const LossProbe base = probe(params, cfg, batch, wso, options.backend);
    GradCheckReport report;
    const double h = options.step;

    auto record = [&](GradCheckCoordinate c, bool kink) {
        if (kink) {
            report.excluded.push_back(std::move(c));
            return;
        }
        c.rel_error = relative_error(c.analytic, c.numeric);
        ++report.checked;
        if (report.checked == 1 || c.rel_error > report.max_rel_error) {
            report.max_rel_error = c.rel_error;
            report.worst = c;
        }
    };

    if (wso) {
        for (int which = 0; which < 2; ++which) {
            WsoParams plus = *wso;
            WsoParams minus = *wso;
            (which == 0 ? plus.w : plus.b) += h;
            (which == 0 ? minus.w : minus.b) -= h;
            const LossProbe lp = probe(params, cfg, batch, std::optional(plus), options.backend);
            const LossProbe lm = probe(params, cfg, batch, std::optional(minus), options.backend);
            GradCheckCoordinate c{which == 0 ? "wso.w" : "wso.b", 0,
                                  which == 0 ? wso_grads.dw : wso_grads.db,
                                  loss_difference(lp, lm, labels) / (2.0 * h), 0.0};
            record(std::move(c), lp.signature != base.signature || lm.signature != base.signature);
        }
    }

    const std::size_t total = params.total_elements();
    std::vector<std::size_t> offsets;
    std::size_t acc = 0;
    for (const auto& t : params.tensors) {
        offsets.push_back(acc);
        acc += t.size();
    }

    Rng rng(options.seed);
    std::unordered_set<std::size_t> seen;
    ModelParams<T> work = params;
    const std::size_t wanted = report.checked + std::min(options.samples, total);
    while (report.checked < wanted && seen.size() < total) {
        const auto flat = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
        if (!seen.insert(flat).second) {
            continue;
        }
        const std::size_t ti = static_cast<std::size_t>(
            std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
        const std::size_t ei = flat - offsets[ti];
        const T original = work.tensors[ti][ei];

        work.tensors[ti][ei] = static_cast<T>(static_cast<double>(original) + h);
        const double up = static_cast<double>(work.tensors[ti][ei]);
        const LossProbe lp = probe(work, cfg, batch, wso, options.backend);
        work.tensors[ti][ei] = static_cast<T>(static_cast<double>(original) - h);
        const double down = static_cast<double>(work.tensors[ti][ei]);
        const LossProbe lm = probe(work, cfg, batch, wso, options.backend);
        work.tensors[ti][ei] = original;

        GradCheckCoordinate c{params.names[ti], ei, static_cast<double>(grads.tensors[ti][ei]),
                              loss_difference(lp, lm, labels) / (up - down), 0.0};
        record(std::move(c), lp.signature != base.signature || lm.signature != base.signature);
    }

    report.passed = report.checked >= wanted && report.max_rel_error < options.tolerance;
    return report;
}

template GradCheckReport gradient_check<float>(const ModelParams<float>&, const NetworkConfig&,
                                               const Tensor<float>&, std::span<const double>,
                                               const GradCheckOptions&,
                                               const std::optional<WsoParams>&);
template GradCheckReport gradient_check<double>(const ModelParams<double>&, const NetworkConfig&,
                                                const Tensor<double>&, std::span<const double>,
                                                const GradCheckOptions&,
                                                const std::optional<WsoParams>&);

}  // namespace ctwso
