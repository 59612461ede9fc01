#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mpvad/mat.hpp"
#include "mpvad/rng.hpp"

namespace mpvad {

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

/// Fully gated GRU with reset applied before the candidate:
///   z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
///   r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
///   g_t = tanh(Wh x_t + Uh (r_t * h_{t-1}) + bh)
///   h_t = (1 - z_t) * h_{t-1} + z_t * g_t
template <typename T>
struct GruParams {
    int input_dim = 0;
    int hidden_dim = 0;
    Mat<T> wz, wr, wh;  // hidden x input
    Mat<T> uz, ur, uh;  // hidden x hidden
    Mat<T> bz, br, bh;  // hidden x 1

    GruParams() = default;
    GruParams(int input, int hidden)
        : input_dim(input),
          hidden_dim(hidden),
          wz(hidden, input),
          wr(hidden, input),
          wh(hidden, input),
          uz(hidden, hidden),
          ur(hidden, hidden),
          uh(hidden, hidden),
          bz(hidden, 1),
          br(hidden, 1),
          bh(hidden, 1) {}

    std::vector<Mat<T>*> tensors() { return {&wz, &wr, &wh, &uz, &ur, &uh, &bz, &br, &bh}; }
    std::vector<const Mat<T>*> tensors() const {
        return {&wz, &wr, &wh, &uz, &ur, &uh, &bz, &br, &bh};
    }

    template <typename U>
    GruParams<U> cast() const {
        GruParams<U> out(input_dim, hidden_dim);
        auto src = tensors();
        auto dst = out.tensors();
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
        return out;
    }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.
template <typename T>
void init_uniform(Mat<T>& m, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& x : m.v) x = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
GruParams<T> init_gru(int input_dim, int hidden_dim, Rng& rng) {
    GruParams<T> p(input_dim, hidden_dim);
    init_uniform(p.wz, input_dim, rng);
    init_uniform(p.wr, input_dim, rng);
    init_uniform(p.wh, input_dim, rng);
    init_uniform(p.uz, hidden_dim, rng);
    init_uniform(p.ur, hidden_dim, rng);
    init_uniform(p.uh, hidden_dim, rng);
    // biases start at zero
    return p;
}

/// Per-step activations retained for backpropagation through time.
template <typename T>
struct GruCache {
    Mat<T> x;   // T x input
    Mat<T> z, r, g, h;  // T x hidden
    std::vector<T> h0;
};

/// Runs the recurrence over x (T x input_dim) from h0 (hidden_dim, zeros if
/// empty); returns states (T x hidden_dim). Pass cache to enable backward.
template <typename T>
Mat<T> gru_forward(const GruParams<T>& p, const Mat<T>& x, std::span<const T> h0,
                   GruCache<T>* cache = nullptr) {
    if (x.cols != p.input_dim)
        throw ShapeError("gru_forward: input has " + std::to_string(x.cols) +
                         " columns, params expect " + std::to_string(p.input_dim));
    if (!h0.empty() && static_cast<int>(h0.size()) != p.hidden_dim)
        throw ShapeError("gru_forward: h0 size mismatch");

    const int steps = x.rows;
    const int H = p.hidden_dim;
    Mat<T> states(steps, H);
    std::vector<T> h_prev(H, T(0));
    if (!h0.empty()) h_prev.assign(h0.begin(), h0.end());

    Mat<T> zs, rs, gs;
    if (cache) {
        zs = Mat<T>(steps, H);
        rs = Mat<T>(steps, H);
        gs = Mat<T>(steps, H);
    }

    std::vector<T> az(H), ar(H), ah(H), rh(H);
    for (int t = 0; t < steps; ++t) {
        const T* xt = x.row(t);
        matvec(p.wz, xt, az.data());
        matvec(p.wr, xt, ar.data());
        matvec(p.wh, xt, ah.data());
        for (int i = 0; i < H; ++i) {
            const T* uzr = p.uz.row(i);
            const T* urr = p.ur.row(i);
            T acc_z = T(0), acc_r = T(0);
            for (int j = 0; j < H; ++j) {
                acc_z += uzr[j] * h_prev[j];
                acc_r += urr[j] * h_prev[j];
            }
            az[i] += acc_z + p.bz.v[i];
            ar[i] += acc_r + p.br.v[i];
        }
        for (int i = 0; i < H; ++i) {
            az[i] = sigmoid(az[i]);
            ar[i] = sigmoid(ar[i]);
            rh[i] = ar[i] * h_prev[i];
        }
        for (int i = 0; i < H; ++i) {
            const T* uhr = p.uh.row(i);
            T acc = T(0);
            for (int j = 0; j < H; ++j) acc += uhr[j] * rh[j];
            ah[i] = std::tanh(ah[i] + acc + p.bh.v[i]);
        }
        T* ht = states.row(t);
        for (int i = 0; i < H; ++i)
            ht[i] = (T(1) - az[i]) * h_prev[i] + az[i] * ah[i];

        if (cache) {
            std::copy(az.begin(), az.end(), zs.row(t));
            std::copy(ar.begin(), ar.end(), rs.row(t));
            std::copy(ah.begin(), ah.end(), gs.row(t));
        }
        std::copy(ht, ht + H, h_prev.begin());
    }

    if (cache) {
        cache->x = x;
        cache->z = std::move(zs);
        cache->r = std::move(rs);
        cache->g = std::move(gs);
        cache->h = states;
        cache->h0.assign(H, T(0));
        if (!h0.empty()) cache->h0.assign(h0.begin(), h0.end());
    }
    return states;
}

/// Exact BPTT. d_states is T x hidden (upstream gradient per step).
/// Parameter gradients accumulate into d_params; d_x and d_h0 are optional.
template <typename T>
void gru_backward(const GruParams<T>& p, const GruCache<T>& cache, const Mat<T>& d_states,
                  GruParams<T>& d_params, Mat<T>* d_x = nullptr,
                  std::vector<T>* d_h0 = nullptr) {
    const int steps = cache.x.rows;
    const int H = p.hidden_dim;
    if (d_states.rows != steps || d_states.cols != H)
        throw ShapeError("gru_backward: d_states shape mismatch with cache");
    if (d_params.input_dim != p.input_dim || d_params.hidden_dim != p.hidden_dim)
        throw ShapeError("gru_backward: d_params dims mismatch");

    if (d_x) *d_x = Mat<T>(steps, p.input_dim);

    std::vector<T> dh_next(H, T(0));
    std::vector<T> dh(H), daz(H), dar(H), dah(H), drh(H), rh(H);
    for (int t = steps - 1; t >= 0; --t) {
        const T* h_prev = (t == 0) ? cache.h0.data() : cache.h.row(t - 1);
        const T* z = cache.z.row(t);
        const T* r = cache.r.row(t);
        const T* g = cache.g.row(t);
        const T* xt = cache.x.row(t);

        for (int i = 0; i < H; ++i) dh[i] = d_states.at(t, i) + dh_next[i];
        for (int i = 0; i < H; ++i) {
            dah[i] = dh[i] * z[i] * (T(1) - g[i] * g[i]);
            daz[i] = dh[i] * (g[i] - h_prev[i]) * z[i] * (T(1) - z[i]);
            rh[i] = r[i] * h_prev[i];
        }
        std::fill(drh.begin(), drh.end(), T(0));
        matvec_transposed_acc(p.uh, dah.data(), drh.data());
        for (int i = 0; i < H; ++i)
            dar[i] = drh[i] * h_prev[i] * r[i] * (T(1) - r[i]);

        outer_acc(d_params.wz, daz.data(), xt);
        outer_acc(d_params.wr, dar.data(), xt);
        outer_acc(d_params.wh, dah.data(), xt);
        outer_acc(d_params.uz, daz.data(), h_prev);
        outer_acc(d_params.ur, dar.data(), h_prev);
        outer_acc(d_params.uh, dah.data(), rh.data());
        for (int i = 0; i < H; ++i) {
            d_params.bz.v[i] += daz[i];
            d_params.br.v[i] += dar[i];
            d_params.bh.v[i] += dah[i];
        }

        if (d_x) {
            T* dxt = d_x->row(t);
            matvec_transposed_acc(p.wz, daz.data(), dxt);
            matvec_transposed_acc(p.wr, dar.data(), dxt);
            matvec_transposed_acc(p.wh, dah.data(), dxt);
        }

        for (int i = 0; i < H; ++i) dh_next[i] = dh[i] * (T(1) - z[i]) + drh[i] * r[i];
        matvec_transposed_acc(p.uz, daz.data(), dh_next.data());
        matvec_transposed_acc(p.ur, dar.data(), dh_next.data());
    }
    if (d_h0) *d_h0 = dh_next;
}

/// y = W x + b.
template <typename T>
void fc_forward(const Mat<T>& w, const Mat<T>& b, const T* x, T* y) {
    matvec(w, x, y);
    for (int i = 0; i < w.rows; ++i) y[i] += b.v[i];
}

/// Accumulates dW, db and (optionally) dx for y = W x + b.
template <typename T>
void fc_backward(const Mat<T>& w, const T* x, const T* dy, Mat<T>& dw, Mat<T>& db,
                 T* dx = nullptr) {
    outer_acc(dw, dy, x);
    for (int i = 0; i < w.rows; ++i) db.v[i] += dy[i];
    if (dx) matvec_transposed_acc(w, dy, dx);
}

inline constexpr double kBceClamp = 1e-7;

/// Mean over elements of -[y ln p + (1-y) ln(1-p)], p clamped to
/// [1e-7, 1 - 1e-7]. d_p receives the gradient when non-null.
template <typename T>
T bce_loss(std::span<const T> p, std::span<const T> y, std::span<T> d_p = {}) {
    if (p.size() != y.size()) throw ShapeError("bce_loss: size mismatch");
    if (!d_p.empty() && d_p.size() != p.size()) throw ShapeError("bce_loss: gradient size");
    const T n = static_cast<T>(p.size());
    T loss = T(0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const T pc = std::clamp(p[i], static_cast<T>(kBceClamp), static_cast<T>(1.0 - kBceClamp));
        loss += -(y[i] * std::log(pc) + (T(1) - y[i]) * std::log(T(1) - pc));
        if (!d_p.empty()) {
            // Zero outside the clamp range: the clamped loss is flat there.
            const bool clamped = p[i] < static_cast<T>(kBceClamp) ||
                                 p[i] > static_cast<T>(1.0 - kBceClamp);
            d_p[i] = clamped ? T(0) : (pc - y[i]) / (pc * (T(1) - pc) * n);
        }
    }
    return loss / n;
}

/// AdamW with decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
template <typename T>
struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::int64_t step_count = 0;
    std::vector<std::vector<T>> m, v;

    void step(std::span<Mat<T>* const> params, std::span<const Mat<T>* const> grads) {
        if (params.size() != grads.size()) throw ShapeError("adamw: params/grads count mismatch");
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m[i].assign(params[i]->size(), T(0));
                v[i].assign(params[i]->size(), T(0));
            }
        }
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Mat<T>& theta = *params[i];
            const Mat<T>& grad = *grads[i];
            if (grad.size() != theta.size()) throw ShapeError("adamw: grad shape mismatch");
            for (std::size_t k = 0; k < theta.size(); ++k) {
                const double g = static_cast<double>(grad.v[k]);
                const double mk = beta1 * m[i][k] + (1.0 - beta1) * g;
                const double vk = beta2 * v[i][k] + (1.0 - beta2) * g * g;
                m[i][k] = static_cast<T>(mk);
                v[i][k] = static_cast<T>(vk);
                const double m_hat = mk / bc1;
                const double v_hat = vk / bc2;
                theta.v[k] = static_cast<T>(
                    theta.v[k] -
                    lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * theta.v[k]));
            }
        }
    }
};

/// Scales gradients so their global L2 norm is at most max_norm.
template <typename T>
void clip_grad_norm(std::span<Mat<T>* const> grads, double max_norm) {
    double sum_sq = 0.0;
    for (const Mat<T>* g : grads)
        for (T x : g->v) sum_sq += static_cast<double>(x) * x;
    const double norm = std::sqrt(sum_sq);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (Mat<T>* g : grads)
        for (T& x : g->v) x = static_cast<T>(x * scale);
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    int worst_tensor = -1;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Central finite differences over every parameter (seeded subsample above
/// 10 000). loss_fn re-evaluates the loss at the current parameter values;
/// analytic holds the gradients being verified.
GradCheckResult grad_check(const std::function<double()>& loss_fn,
                           std::span<Mat<double>* const> params,
                           std::span<const Mat<double>* const> analytic, double fd_step = 1e-5,
                           std::uint64_t seed = 0);

}  // namespace mpvad
