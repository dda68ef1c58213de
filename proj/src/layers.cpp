#include "fpan/layers.hpp"

#include <cmath>

namespace fpan {

template <typename T>
void init_he(Tensor<T>& weight, std::mt19937& rng) {
    const Shape4 s = weight.shape();
    const std::size_t fan_in = static_cast<std::size_t>(s.c) * s.h * s.w;
    if (fan_in == 0) throw UsageError("init_he: zero fan_in for " + s.str());
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : weight.data()) {
        const double u = rng() * (1.0 / 4294967296.0);  // [0,1)
        v = static_cast<T>((2.0 * u - 1.0) * bound);
    }
}

template void init_he<float>(Tensor<float>&, std::mt19937&);
template void init_he<double>(Tensor<double>&, std::mt19937&);

template <typename T>
ConvLayer<T>::ConvLayer(ParameterStore<T>& store, std::string layer_name, int cout,
                        int cin, int k, int layer_stride, std::mt19937& rng,
                        bool zero_init)
    : name(std::move(layer_name)), stride(layer_stride) {
    if (stride == 1) {
        if (k % 2 == 0) {
            throw UsageError("ConvLayer '" + name + "': stride-1 kernel must be odd");
        }
        pad = (k - 1) / 2;
    } else if (stride == 2 && k == 6) {
        pad = 2;
    } else {
        throw UsageError("ConvLayer '" + name + "': unsupported stride/kernel " +
                         std::to_string(layer_stride) + "/" + std::to_string(k));
    }

    Tensor<T> w(Shape4{cout, cin, k, k});
    if (zero_init) {
        init_zero(w);
    } else {
        init_he(w, rng);
    }
    weight = store.add(name + ".weight", std::move(w));
    bias = store.add(name + ".bias", Tensor<T>(Shape4{cout, 1, 1, 1}));
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;

}  // namespace fpan
