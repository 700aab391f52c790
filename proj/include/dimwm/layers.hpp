#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dimwm/autograd.hpp"
#include "dimwm/random.hpp"

namespace dimwm::nn {

template <class T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

/// Uniform(-bound, bound) tensor.
template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.storage()) v = static_cast<T>(uniform(rng, -bound, bound));
    return t;
}

template <class T>
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        weight_ = Var<T>::parameter(uniform_tensor<T>({out, in}, bound, rng));
        bias_ = Var<T>::parameter(uniform_tensor<T>({out}, bound, rng));
    }
    Var<T> operator()(const Var<T>& x) const { return linear(x, weight_, bias_); }
    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight_});
        out.push_back({prefix + ".bias", bias_});
    }

private:
    Var<T> weight_, bias_;
};

template <class T>
class Conv3d {
public:
    Conv3d() = default;
    /// "Same" padding for odd kernels; stride applies to (D, H, W).
    Conv3d(std::size_t in, std::size_t out, std::array<std::size_t, 3> kernel, Rng& rng,
           std::array<std::size_t, 3> stride = {1, 1, 1}) {
        const double fan_in = static_cast<double>(in * kernel[0] * kernel[1] * kernel[2]);
        const double bound = 1.0 / std::sqrt(fan_in);
        weight_ = Var<T>::parameter(uniform_tensor<T>({out, in, kernel[0], kernel[1], kernel[2]}, bound, rng));
        bias_ = Var<T>::parameter(uniform_tensor<T>({out}, bound, rng));
        for (int i = 0; i < 3; ++i) {
            geom_.stride[i] = stride[i];
            geom_.padding[i] = kernel[i] / 2;
        }
    }
    Var<T> operator()(const Var<T>& x) const { return conv3d(x, weight_, bias_, geom_); }
    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight_});
        out.push_back({prefix + ".bias", bias_});
    }

private:
    Var<T> weight_, bias_;
    Conv3dGeometry geom_;
};

/// Group normalisation with up to four groups per layer.
template <class T>
class GroupNorm {
public:
    GroupNorm() = default;
    explicit GroupNorm(std::size_t channels)
        : gamma_(Var<T>::parameter(Tensor<T>({channels}, T(1)))),
          beta_(Var<T>::parameter(Tensor<T>({channels}))),
          groups_(channels % 4 == 0 ? 4 : 1) {}
    std::size_t groups() const { return groups_; }
    Var<T> operator()(const Var<T>& x) const { return group_norm(x, gamma_, beta_, groups_); }
    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".gamma", gamma_});
        out.push_back({prefix + ".beta", beta_});
    }

private:
    Var<T> gamma_, beta_;
    std::size_t groups_ = 1;
};

/// Conv - GroupNorm - ReLU.
template <class T>
class CNR {
public:
    CNR() = default;
    CNR(std::size_t in, std::size_t out, std::array<std::size_t, 3> kernel, Rng& rng,
        std::array<std::size_t, 3> stride = {1, 1, 1})
        : conv_(in, out, kernel, rng, stride), norm_(out) {}
    Var<T> operator()(const Var<T>& x) const { return relu(norm_(conv_(x))); }
    void collect(ParamList<T>& out, const std::string& prefix) const {
        conv_.collect(out, prefix + ".conv");
        norm_.collect(out, prefix + ".norm");
    }

private:
    Conv3d<T> conv_;
    GroupNorm<T> norm_;
};

}  // namespace dimwm::nn
