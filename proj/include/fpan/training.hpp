#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fpan/imaging.hpp"
#include "fpan/layers.hpp"
#include "fpan/model.hpp"
#include "fpan/tensor.hpp"

namespace fpan {

// Mean of |pred - target| over all elements (default), or per-image absolute
// sums averaged over the batch (sum mode, the strict per-image formulation).
enum class L1Mode { element_mean, image_sum_mean };

template <typename T>
Tensor<T> l1_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target,
                  L1Mode mode = L1Mode::element_mean);

// Bias-corrected Adam over every parameter in the store. Each parameter must
// carry a freshly computed gradient; gradients are consumed (cleared) by the
// step, which also makes stale-gradient reuse a detectable error.
template <typename T>
void adam_step(ParameterStore<T>& store, double lr, int t, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct TrainConfig {
    int batch_size{16};
    int lr_patch{48};
    double lr0{1e-4};
    int halve_every{200};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
    int epochs{1};
    std::uint64_t seed{0};
    int scale{2};
    DegradationSpec degradation{};
    L1Mode loss_mode{L1Mode::element_mean};
};

// lr0 halved every halve_every epochs.
double lr_at(int epoch, const TrainConfig& cfg);

struct Dataset {
    struct Item {
        std::string name;
        ImageU8 hr;  // cropped to a multiple of the scale
        ImageU8 lr;
    };
    std::vector<Item> items;
    int scale{0};
};

// Loads HR PNGs from hr_dir (lexicographic order), center-crops each to a
// multiple of the scale and degrades it per spec. When lr_dir is non-empty,
// pre-generated LR images with identical filenames are loaded instead.
Dataset load_dataset(const std::string& hr_dir, const DegradationSpec& spec,
                     const std::string& lr_dir = "");

// In-memory variant for tests and the overfit harness.
Dataset make_dataset(std::vector<ImageU8> hr_images, const DegradationSpec& spec);

struct SampleProvenance {
    int image_id{0};
    int crop_x{0};  // LR crop offset; the HR crop sits at scale * offset
    int crop_y{0};
    int augmentation_id{0};  // 0..7 dihedral id, 0 = untouched
};

struct SampleBatch {
    TensorF lr;  // [B,3,p,p]
    TensorF hr;  // [B,3,s*p,s*p]
    std::vector<SampleProvenance> provenance;
};

// The deterministic crop+augment used for each batch slot; exposed so tests
// can reproduce samples from their provenance.
std::pair<ImageU8, ImageU8> extract_sample(const Dataset& dataset,
                                           const SampleProvenance& prov, int lr_patch,
                                           int scale);

// Uniformly random image, crop offset and augmentation per slot.
SampleBatch sample_patch_batch(const Dataset& dataset, const TrainConfig& cfg,
                               std::mt19937& rng);

struct StepRecord {
    int step{0};
    int epoch{0};
    double lr{0.0};
    double loss{0.0};
};

// One line per step: "step epoch lr loss".
std::string format_loss_log(const std::vector<StepRecord>& records);

using EpochCallback = std::function<void(int epoch, const FpanModel<float>& model)>;

// Runs epochs x ceil(N/B) steps of sample/forward/L1/backward/Adam. Batches
// are seeded per global step index, so the trace is a pure function of
// (seed, config, dataset). A non-finite loss aborts with the step and lr in
// the message. start_epoch > 0 resumes step numbering for checkpointed runs.
std::vector<StepRecord> train(FpanModel<float>& model, const Dataset& dataset,
                              const TrainConfig& cfg,
                              const EpochCallback& on_epoch = {}, int start_epoch = 0);

}  // namespace fpan
