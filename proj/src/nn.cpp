#include "glyrl/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "glyrl/kernels.hpp"

namespace glyrl::nn {

namespace k = glyrl::kernels;

template <typename T>
void Grads<T>::zero() {
    for (auto& w : W) std::fill(w.a.begin(), w.a.end(), T(0));
    for (auto& bb : b) std::fill(bb.begin(), bb.end(), T(0));
}

template <typename T>
void Grads<T>::scale(T s) {
    for (auto& w : W)
        for (auto& v : w.a) v *= s;
    for (auto& bb : b)
        for (auto& v : bb) v *= s;
}

template <typename T>
Mlp<T> make_mlp(const std::vector<size_t>& sizes, OutAct out, Rng& rng) {
    if (sizes.size() < 2) throw std::invalid_argument("mlp needs at least input and output widths");
    Mlp<T> net;
    net.sizes = sizes;
    net.out = out;
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
        const size_t fan_in = sizes[l];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Mat<T> w(sizes[l + 1], sizes[l]);
        for (auto& v : w.a) v = static_cast<T>(rng.uniform(-bound, bound));
        std::vector<T> bb(sizes[l + 1]);
        for (auto& v : bb) v = static_cast<T>(rng.uniform(-bound, bound));
        net.W.push_back(std::move(w));
        net.b.push_back(std::move(bb));
    }
    return net;
}

template <typename T>
Grads<T> make_grads(const Mlp<T>& net) {
    Grads<T> g;
    for (size_t l = 0; l < net.layers(); ++l) {
        g.W.emplace_back(net.W[l].rows, net.W[l].cols);
        g.b.emplace_back(net.b[l].size(), T(0));
    }
    return g;
}

template <typename T>
AdamState<T> make_adam(const Mlp<T>& net) {
    AdamState<T> st;
    for (size_t l = 0; l < net.layers(); ++l) {
        st.mW.emplace_back(net.W[l].rows, net.W[l].cols);
        st.vW.emplace_back(net.W[l].rows, net.W[l].cols);
        st.mb.emplace_back(net.b[l].size(), T(0));
        st.vb.emplace_back(net.b[l].size(), T(0));
    }
    return st;
}

namespace {

template <typename T>
void apply_out_act(OutAct out, const T* pre, T* y, size_t n) {
    switch (out) {
        case OutAct::identity:
            for (size_t i = 0; i < n; ++i) y[i] = pre[i];
            break;
        case OutAct::tanh_out:
            for (size_t i = 0; i < n; ++i) y[i] = std::tanh(pre[i]);
            break;
        case OutAct::sigmoid:
            for (size_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-pre[i]));
            break;
    }
}

}  // namespace

template <typename T>
void forward(const Mlp<T>& net, const T* x, Tape<T>* tape, T* out) {
    const size_t L = net.layers();
    if (tape) {
        tape->pre.resize(L);
        tape->act.resize(L + 1);
        tape->act[0].assign(x, x + net.in_dim());
    }

    std::vector<T> cur(x, x + net.in_dim());
    std::vector<T> nxt;
    for (size_t l = 0; l < L; ++l) {
        const size_t rows = net.W[l].rows;
        nxt.resize(rows);
        k::matvec_bias(net.W[l].data(), cur.data(), net.b[l].data(), nxt.data(), rows, net.W[l].cols);
        if (tape) tape->pre[l] = nxt;
        if (l + 1 < L) {
            k::relu(nxt.data(), nxt.data(), rows);
        } else {
            apply_out_act(net.out, nxt.data(), nxt.data(), rows);
        }
        if (tape) tape->act[l + 1] = nxt;
        cur.swap(nxt);
    }
    std::copy(cur.begin(), cur.end(), out);
}

template <typename T>
void backward(const Mlp<T>& net, const Tape<T>& tape, const T* dy, Grads<T>* g, T* dx) {
    const size_t L = net.layers();
    const size_t out_n = net.out_dim();

    // gradient w.r.t. the output pre-activation
    std::vector<T> dpre(out_n);
    const auto& y = tape.act[L];
    switch (net.out) {
        case OutAct::identity:
            for (size_t i = 0; i < out_n; ++i) dpre[i] = dy[i];
            break;
        case OutAct::tanh_out:
            for (size_t i = 0; i < out_n; ++i) dpre[i] = dy[i] * (T(1) - y[i] * y[i]);
            break;
        case OutAct::sigmoid:
            for (size_t i = 0; i < out_n; ++i) dpre[i] = dy[i] * y[i] * (T(1) - y[i]);
            break;
    }

    std::vector<T> dact;
    for (size_t l = L; l-- > 0;) {
        const size_t rows = net.W[l].rows, cols = net.W[l].cols;
        if (g) {
            k::outer_acc(g->W[l].data(), dpre.data(), tape.act[l].data(), rows, cols);
            k::axpy(g->b[l].data(), T(1), dpre.data(), rows);
        }
        if (l == 0 && !dx) break;
        dact.resize(cols);
        k::matvec_t(net.W[l].data(), dpre.data(), dact.data(), rows, cols);
        if (l == 0) {
            std::copy(dact.begin(), dact.end(), dx);
        } else {
            dpre.resize(cols);
            k::relu_backward(tape.pre[l - 1].data(), dact.data(), dpre.data(), cols);
        }
    }
}

template <typename T>
void polyak_update(Mlp<T>& target, const Mlp<T>& net, T tau) {
    for (size_t l = 0; l < net.layers(); ++l) {
        k::lerp_to(target.W[l].data(), net.W[l].data(), tau, net.W[l].size());
        k::lerp_to(target.b[l].data(), net.b[l].data(), tau, net.b[l].size());
    }
}

namespace {

template <typename T>
void check_finite(const T* g, size_t n, const std::string& name, size_t layer, char kind) {
    const double s = k::reduce_abs_sum(g, n);
    if (!std::isfinite(s)) {
        throw std::runtime_error("non-finite gradient in " + name + "/" + kind + std::to_string(layer));
    }
}

}  // namespace

template <typename T>
void adam_step(Mlp<T>& net, const Grads<T>& g, AdamState<T>& st,
               T lr, T beta1, T beta2, T eps, const std::string& name) {
    st.t += 1;
    const T bc1 = T(1) / (T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(st.t))));
    const T bc2 = T(1) / (T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(st.t))));
    for (size_t l = 0; l < net.layers(); ++l) {
        check_finite(g.W[l].data(), g.W[l].size(), name, l, 'W');
        check_finite(g.b[l].data(), g.b[l].size(), name, l, 'b');
        k::adam_step(net.W[l].data(), g.W[l].data(), st.mW[l].data(), st.vW[l].data(),
                     net.W[l].size(), lr, beta1, beta2, eps, bc1, bc2);
        k::adam_step(net.b[l].data(), g.b[l].data(), st.mb[l].data(), st.vb[l].data(),
                     net.b[l].size(), lr, beta1, beta2, eps, bc1, bc2);
    }
}

Mlp<double> widen(const Mlp<float>& net) {
    Mlp<double> d;
    d.sizes = net.sizes;
    d.out = net.out;
    for (size_t l = 0; l < net.layers(); ++l) {
        Mat<double> w(net.W[l].rows, net.W[l].cols);
        for (size_t i = 0; i < w.size(); ++i) w.a[i] = static_cast<double>(net.W[l].a[i]);
        d.W.push_back(std::move(w));
        d.b.emplace_back(net.b[l].begin(), net.b[l].end());
    }
    return d;
}

template struct Mlp<float>;
template struct Mlp<double>;
template struct Grads<float>;
template struct Grads<double>;
template Mlp<float> make_mlp<float>(const std::vector<size_t>&, OutAct, Rng&);
template Mlp<double> make_mlp<double>(const std::vector<size_t>&, OutAct, Rng&);
template Grads<float> make_grads<float>(const Mlp<float>&);
template Grads<double> make_grads<double>(const Mlp<double>&);
template AdamState<float> make_adam<float>(const Mlp<float>&);
template AdamState<double> make_adam<double>(const Mlp<double>&);
template void forward<float>(const Mlp<float>&, const float*, Tape<float>*, float*);
template void forward<double>(const Mlp<double>&, const double*, Tape<double>*, double*);
template void backward<float>(const Mlp<float>&, const Tape<float>&, const float*, Grads<float>*, float*);
template void backward<double>(const Mlp<double>&, const Tape<double>&, const double*, Grads<double>*, double*);
template void polyak_update<float>(Mlp<float>&, const Mlp<float>&, float);
template void polyak_update<double>(Mlp<double>&, const Mlp<double>&, double);
template void adam_step<float>(Mlp<float>&, const Grads<float>&, AdamState<float>&, float, float, float, float, const std::string&);
template void adam_step<double>(Mlp<double>&, const Grads<double>&, AdamState<double>&, double, double, double, double, const std::string&);

}  // namespace glyrl::nn
