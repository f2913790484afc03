#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "glyrl/rng.hpp"

// Small fully-connected networks, float for training and double for
// finite-difference verification. All inner loops go through glyrl::kernels,
// so results are identical under the scalar and AVX2 backends.

namespace glyrl::nn {

template <typename T>
struct Mat {
    size_t rows = 0, cols = 0;
    std::vector<T> a;  // row-major

    Mat() = default;
    Mat(size_t r, size_t c) : rows(r), cols(c), a(r * c, T(0)) {}
    T* data() { return a.data(); }
    const T* data() const { return a.data(); }
    size_t size() const { return a.size(); }
};

enum class OutAct : uint8_t { identity = 0, tanh_out = 1, sigmoid = 2 };

// Hidden layers are ReLU; the output layer applies `out`.
template <typename T>
struct Mlp {
    std::vector<size_t> sizes;      // layer widths, len = layers + 1
    std::vector<Mat<T>> W;          // W[l] is sizes[l+1] x sizes[l]
    std::vector<std::vector<T>> b;  // b[l] has sizes[l+1] entries
    OutAct out = OutAct::identity;

    size_t layers() const { return W.size(); }
    size_t in_dim() const { return sizes.front(); }
    size_t out_dim() const { return sizes.back(); }
    size_t param_count() const {
        size_t n = 0;
        for (size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
        return n;
    }
};

// Intermediate activations captured by forward() for use in backward().
template <typename T>
struct Tape {
    std::vector<std::vector<T>> pre;  // pre[l] = W[l] act[l] + b[l]
    std::vector<std::vector<T>> act;  // act[0] = x; act[l+1] = h(pre[l])
};

template <typename T>
struct Grads {
    std::vector<Mat<T>> W;
    std::vector<std::vector<T>> b;

    void zero();
    void scale(T s);
};

template <typename T>
struct AdamState {
    std::vector<Mat<T>> mW, vW;
    std::vector<std::vector<T>> mb, vb;
    int64_t t = 0;
};

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights and biases; draw
// order (per layer: W row-major, then b) is part of the reproducibility
// contract.
template <typename T>
Mlp<T> make_mlp(const std::vector<size_t>& sizes, OutAct out, Rng& rng);

template <typename T>
Grads<T> make_grads(const Mlp<T>& net);

template <typename T>
AdamState<T> make_adam(const Mlp<T>& net);

// out must have room for net.out_dim(). tape may be null when no backward
// pass will follow.
template <typename T>
void forward(const Mlp<T>& net, const T* x, Tape<T>* tape, T* out);

// dy is d(loss)/d(output), length out_dim. Accumulates into g (when non-null)
// and writes d(loss)/d(input) to dx (when non-null).
template <typename T>
void backward(const Mlp<T>& net, const Tape<T>& tape, const T* dy, Grads<T>* g, T* dx);

template <typename T>
inline void forward(const Mlp<T>& net, const T* x, T* out) {
    forward(net, x, static_cast<Tape<T>*>(nullptr), out);
}

template <typename T>
inline void backward(const Mlp<T>& net, const Tape<T>& tape, const T* dy, Grads<T>& g) {
    backward(net, tape, dy, &g, static_cast<T*>(nullptr));
}

// input gradient only, skipping parameter gradients (actor loss through a
// frozen critic)
template <typename T>
inline void backward_input(const Mlp<T>& net, const Tape<T>& tape, const T* dy, T* dx) {
    backward(net, tape, dy, static_cast<Grads<T>*>(nullptr), dx);
}

// target <- tau * net + (1 - tau) * target
template <typename T>
void polyak_update(Mlp<T>& target, const Mlp<T>& net, T tau);

// One Adam step from accumulated gradients. Throws std::runtime_error naming
// the offending tensor ("<name>/W1") when a gradient is non-finite.
template <typename T>
void adam_step(Mlp<T>& net, const Grads<T>& g, AdamState<T>& st,
               T lr, T beta1, T beta2, T eps, const std::string& name);

// Exact copy of a float net at double precision (for finite-difference
// verification of the backward pass).
Mlp<double> widen(const Mlp<float>& net);

extern template struct Mlp<float>;
extern template struct Mlp<double>;

}  // namespace glyrl::nn
