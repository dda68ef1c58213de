#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "fpan/tensor.hpp"

namespace fpan {

// Named trainable tensors in insertion order, with per-parameter optimizer
// slots. Single-writer contract: only the optimizer mutates values; forward
// passes are read-only.
template <typename T>
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        std::vector<T> m;  // Adam first-moment state, lazily sized
        std::vector<T> v;  // Adam second-moment state
    };

    Tensor<T>& add(const std::string& name, Tensor<T> tensor) {
        if (index_.count(name)) {
            throw UsageError("ParameterStore: duplicate parameter name '" + name + "'");
        }
        tensor.set_requires_grad(true);
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, std::move(tensor), {}, {}});
        return entries_.back().tensor;
    }

    [[nodiscard]] bool contains(const std::string& name) const {
        return index_.count(name) != 0;
    }
    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw UsageError("ParameterStore: unknown parameter '" + name + "'");
        }
        return entries_[it->second].tensor;
    }
    const Tensor<T>& get(const std::string& name) const {
        return const_cast<ParameterStore*>(this)->get(name);
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    [[nodiscard]] std::size_t size() const { return entries_.size(); }

    [[nodiscard]] std::size_t total_params() const {
        std::size_t total = 0;
        for (const auto& e : entries_) total += e.tensor.numel();
        return total;
    }

    void zero_grads() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// He-uniform initialization: values drawn from [-b, b], b = sqrt(6 / fan_in),
// fan_in = Cin*kh*kw of a [Cout,Cin,kh,kw] weight. Deterministic for a fixed
// rng state; samples use 32 bits of the mt19937 stream per value so results
// are identical across platforms.
template <typename T>
void init_he(Tensor<T>& weight, std::mt19937& rng);

template <typename T>
void init_he_seeded(Tensor<T>& weight, std::uint32_t seed) {
    std::mt19937 rng(seed);
    init_he(weight, rng);
}

template <typename T>
void init_zero(Tensor<T>& weight) {
    std::fill(weight.data().begin(), weight.data().end(), T(0));
}

// A named square-kernel convolution with bias. Padding is pinned to the
// layouts the network uses: stride-1 layers preserve spatial dims
// (pad = (k-1)/2, odd k), stride-2 layers are the 6x6/pad-2 downsamplers.
template <typename T>
struct ConvLayer {
    std::string name;
    Tensor<T> weight;  // [Cout,Cin,k,k]
    Tensor<T> bias;    // [Cout,1,1,1]
    int stride{1};
    int pad{0};

    ConvLayer() = default;

    // Registers name+".weight" / name+".bias" in the store. Weight is
    // He-uniform (or zero when zero_init), bias is zero.
    ConvLayer(ParameterStore<T>& store, std::string layer_name, int cout, int cin,
              int k, int layer_stride, std::mt19937& rng, bool zero_init = false);

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
        return conv2d(tape, x, weight, bias, stride, pad);
    }

    [[nodiscard]] int out_channels() const { return weight.shape().n; }
    [[nodiscard]] int in_channels() const { return weight.shape().c; }
    [[nodiscard]] int kernel() const { return weight.shape().h; }
};

}  // namespace fpan
