#include "fpan/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

namespace fpan {

template <typename T>
Tensor<T> l1_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target,
                  L1Mode mode) {
    if (!(pred.shape() == target.shape())) {
        throw ShapeError("l1_loss: shape mismatch " + pred.shape().str() + " vs " +
                         target.shape().str());
    }
    const std::size_t numel = pred.numel();
    const int batch = pred.shape().n;
    // element_mean divides by all elements; image_sum_mean keeps per-image
    // absolute sums and averages them over the batch.
    const T scale = mode == L1Mode::element_mean ? T(1) / static_cast<T>(numel)
                                                 : T(1) / static_cast<T>(batch);

    Tensor<T> out(Shape4{1, 1, 1, 1}, pred.requires_grad() || target.requires_grad());
    const auto& pd = pred.data();
    const auto& td = target.data();
    T acc = T(0);
    for (std::size_t i = 0; i < numel; ++i) acc += std::abs(pd[i] - td[i]);
    out.data()[0] = acc * scale;

    if (tape && out.requires_grad()) {
        Tensor<T> p = pred, t = target, o = out;
        tape->record(out, [p, t, o, scale]() mutable {
            const T g = o.grad()[0] * scale;
            const auto& pd = p.data();
            const auto& td = t.data();
            if (p.requires_grad()) {
                auto& gp = p.grad();
                for (std::size_t i = 0; i < pd.size(); ++i) {
                    const T d = pd[i] - td[i];
                    // subgradient 0 at exact ties
                    gp[i] += d > T(0) ? g : (d < T(0) ? -g : T(0));
                }
            }
            if (t.requires_grad()) {
                auto& gt = t.grad();
                for (std::size_t i = 0; i < pd.size(); ++i) {
                    const T d = pd[i] - td[i];
                    gt[i] += d > T(0) ? -g : (d < T(0) ? g : T(0));
                }
            }
        });
    }
    return out;
}

template Tensor<float> l1_loss<float>(Tape<float>*, const Tensor<float>&,
                                      const Tensor<float>&, L1Mode);
template Tensor<double> l1_loss<double>(Tape<double>*, const Tensor<double>&,
                                        const Tensor<double>&, L1Mode);

template <typename T>
void adam_step(ParameterStore<T>& store, double lr, int t, double beta1, double beta2,
               double eps) {
    if (t < 1) throw UsageError("adam_step: step index must be >= 1");
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& entry : store.entries()) {
        if (!entry.tensor.has_grad()) {
            throw UsageError("adam_step: missing gradient for '" + entry.name + "'");
        }
        auto& theta = entry.tensor.data();
        const auto& g = entry.tensor.grad();
        if (entry.m.empty()) {
            entry.m.assign(theta.size(), T(0));
            entry.v.assign(theta.size(), T(0));
        }
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = g[i];
            const double m = beta1 * entry.m[i] + (1.0 - beta1) * gi;
            const double v = beta2 * entry.v[i] + (1.0 - beta2) * gi * gi;
            entry.m[i] = static_cast<T>(m);
            entry.v[i] = static_cast<T>(v);
            theta[i] -= static_cast<T>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
        }
        // Consuming the gradient makes a step without a fresh backward fail.
        entry.tensor.clear_grad();
    }
}

template void adam_step<float>(ParameterStore<float>&, double, int, double, double,
                               double);
template void adam_step<double>(ParameterStore<double>&, double, int, double, double,
                                double);

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw UsageError("lr_at: negative epoch");
    return cfg.lr0 * std::pow(0.5, epoch / cfg.halve_every);
}

Dataset load_dataset(const std::string& hr_dir, const DegradationSpec& spec,
                     const std::string& lr_dir) {
    spec.validate();
    Dataset ds;
    ds.scale = spec.scale;
    const std::vector<std::string> files = list_png_files(hr_dir);
    for (std::size_t i = 0; i < files.size(); ++i) {
        Dataset::Item item;
        item.name = std::filesystem::path(files[i]).stem().string();
        item.hr = center_crop_to_multiple(load_png(files[i]), spec.scale);
        if (!lr_dir.empty()) {
            const auto lr_path =
                std::filesystem::path(lr_dir) / std::filesystem::path(files[i]).filename();
            item.lr = load_png(lr_path.string());
            if (item.lr.width != item.hr.width / spec.scale ||
                item.lr.height != item.hr.height / spec.scale) {
                throw ConfigError("load_dataset: LR dims of '" + lr_path.string() +
                                  "' do not match HR/scale");
            }
        } else {
            DegradationSpec per_image = spec;
            per_image.seed = spec.seed ^ static_cast<std::uint64_t>(i);
            item.lr = degrade(item.hr, per_image);
        }
        ds.items.push_back(std::move(item));
    }
    return ds;
}

Dataset make_dataset(std::vector<ImageU8> hr_images, const DegradationSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.scale = spec.scale;
    for (std::size_t i = 0; i < hr_images.size(); ++i) {
        Dataset::Item item;
        char name[32];
        std::snprintf(name, sizeof(name), "mem_%04zu", i);
        item.name = name;
        item.hr = center_crop_to_multiple(hr_images[i], spec.scale);
        DegradationSpec per_image = spec;
        per_image.seed = spec.seed ^ static_cast<std::uint64_t>(i);
        item.lr = degrade(item.hr, per_image);
        ds.items.push_back(std::move(item));
    }
    return ds;
}

std::pair<ImageU8, ImageU8> extract_sample(const Dataset& dataset,
                                           const SampleProvenance& prov, int lr_patch,
                                           int scale) {
    const auto& item = dataset.items.at(prov.image_id);
    ImageU8 lr = crop_image(item.lr, prov.crop_x, prov.crop_y, lr_patch, lr_patch);
    ImageU8 hr = crop_image(item.hr, scale * prov.crop_x, scale * prov.crop_y,
                            scale * lr_patch, scale * lr_patch);
    return {dihedral_transform(lr, prov.augmentation_id),
            dihedral_transform(hr, prov.augmentation_id)};
}

namespace {

void fill_batch_slot(TensorF& batch, int slot, const ImageU8& image) {
    const Shape4 s = batch.shape();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                batch.at(slot, c, y, x) = static_cast<float>(image.at(x, y, c)) / 255.f;
}

}  // namespace

SampleBatch sample_patch_batch(const Dataset& dataset, const TrainConfig& cfg,
                               std::mt19937& rng) {
    if (dataset.items.empty()) throw UsageError("sample_patch_batch: empty dataset");
    if (cfg.batch_size < 1) throw UsageError("sample_patch_batch: batch_size must be >= 1");
    const int p = cfg.lr_patch;
    const int s = cfg.scale;

    SampleBatch batch;
    batch.lr = TensorF(Shape4{cfg.batch_size, 3, p, p});
    batch.hr = TensorF(Shape4{cfg.batch_size, 3, s * p, s * p});
    for (int b = 0; b < cfg.batch_size; ++b) {
        SampleProvenance prov;
        prov.image_id = static_cast<int>(rng() % dataset.items.size());
        const auto& item = dataset.items[prov.image_id];
        if (item.lr.width < p || item.lr.height < p) {
            throw UsageError("sample_patch_batch: image '" + item.name +
                             "' smaller than the " + std::to_string(p) + "px patch");
        }
        prov.crop_x = static_cast<int>(rng() % (item.lr.width - p + 1));
        prov.crop_y = static_cast<int>(rng() % (item.lr.height - p + 1));
        prov.augmentation_id = static_cast<int>(rng() % 8);

        const auto [lr_crop, hr_crop] = extract_sample(dataset, prov, p, s);
        fill_batch_slot(batch.lr, b, lr_crop);
        fill_batch_slot(batch.hr, b, hr_crop);
        batch.provenance.push_back(prov);
    }
    return batch;
}

std::string format_loss_log(const std::vector<StepRecord>& records) {
    std::string out;
    char line[128];
    for (const auto& r : records) {
        std::snprintf(line, sizeof(line), "%d %d %.10g %.10g\n", r.step, r.epoch, r.lr,
                      r.loss);
        out += line;
    }
    return out;
}

namespace {

// Per-step batch seed: the trace depends only on (seed, step), never on how
// far ahead batch preparation runs.
std::uint32_t step_seed(std::uint64_t seed, int step) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(step);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    return static_cast<std::uint32_t>(z ^ (z >> 32));
}

}  // namespace

std::vector<StepRecord> train(FpanModel<float>& model, const Dataset& dataset,
                              const TrainConfig& cfg, const EpochCallback& on_epoch,
                              int start_epoch) {
    if (model.config.scale != cfg.scale || dataset.scale != cfg.scale) {
        throw ConfigError("train: scale mismatch between model (" +
                          std::to_string(model.config.scale) + "), dataset (" +
                          std::to_string(dataset.scale) + ") and config (" +
                          std::to_string(cfg.scale) + ")");
    }
    if (dataset.items.empty()) throw UsageError("train: empty dataset");
    for (const auto& item : dataset.items) {
        if (item.lr.width < cfg.lr_patch || item.lr.height < cfg.lr_patch) {
            throw UsageError("train: image '" + item.name + "' smaller than the patch");
        }
    }

    const int steps_per_epoch =
        (static_cast<int>(dataset.items.size()) + cfg.batch_size - 1) / cfg.batch_size;
    std::vector<StepRecord> trace;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        for (int k = 0; k < steps_per_epoch; ++k) {
            const int step = epoch * steps_per_epoch + k + 1;
            std::mt19937 rng(step_seed(cfg.seed, step));
            SampleBatch batch = sample_patch_batch(dataset, cfg, rng);

            TapeF tape;
            TensorF pred = model.forward(&tape, batch.lr);
            TensorF loss = l1_loss(&tape, pred, batch.hr, cfg.loss_mode);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw Error("train: non-finite loss at step " + std::to_string(step) +
                            " (lr = " + std::to_string(lr) + ")");
            }
            tape.backward(loss);
            adam_step(model.params, lr, step, cfg.beta1, cfg.beta2, cfg.eps);
            trace.push_back({step, epoch, lr, loss_value});
        }
        if (on_epoch) on_epoch(epoch, model);
    }
    return trace;
}

}  // namespace fpan
