#pragma once

#include "swintempo/image.hpp"
#include "swintempo/model.hpp"
#include "swintempo/preprocess.hpp"
#include "swintempo/random.hpp"
#include "swintempo/volume_io.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace swintempo {

constexpr double kBceEpsilon = 1e-7;

/// Mean per-pixel binary cross-entropy; predictions are clamped to [eps, 1 - eps].
/// Targets must be 0 or 1 and the extents must match.
double bce_loss(const Image& pred, const Image& target, double eps = kBceEpsilon);
double bce_loss(const ProbabilityMap& pred, const Image& target, double eps = kBceEpsilon);

/// Half-widths of the uniform ranges each augmentation parameter is drawn from.
struct AugmentConfig {
    double scale = 0.1;          // relative, around 1
    double rotation_deg = 15.0;
    double shear = 0.1;
    double translate_px = 4.0;
    double brightness = 0.1;     // additive, standardized units

    static AugmentConfig none() { return {0.0, 0.0, 0.0, 0.0, 0.0}; }
    void validate() const;
};

struct AffineParams {
    double scale = 1.0;
    double rotation_rad = 0.0;
    double shear = 0.0;
    double translate_x = 0.0;
    double translate_y = 0.0;
    double brightness = 0.0;
};

AffineParams sample_augmentation(const AugmentConfig& config, Rng& rng);

/// Applies one affine (about the image centre) to both images: bilinear with clamped borders
/// for the slice, nearest with zero fill for the target. Brightness is added to the slice only.
std::pair<Image, Image> apply_augmentation(const Image& slice, const Image& target, const AffineParams& params);

std::pair<Image, Image> augment(const Image& slice, const Image& target, const AugmentConfig& config, Rng& rng);

struct TrainConfig {
    ModelConfig model = ModelConfig::tiny();
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::size_t epochs = 1;
    std::size_t slices_per_step = 4;
    std::uint64_t seed = 0;
    AugmentConfig augment;
    StandardizeScope scope = StandardizeScope::PerVolume;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// Adam with decoupled weight decay: p <- p * (1 - lr * wd) - lr * m^ / (sqrt(v^) + eps).
class AdamW {
public:
    AdamW(ParamStore& params, double learning_rate, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double epsilon = 1e-8);

    /// Consumes the accumulated gradients; parameters without a gradient are treated as zero-gradient.
    void step();

    std::uint64_t steps() const { return step_; }
    const std::vector<std::vector<double>>& exp_avg() const { return m_; }
    const std::vector<std::vector<double>>& exp_avg_sq() const { return v_; }
    void set_state(std::uint64_t steps, std::vector<std::vector<double>> exp_avg,
                   std::vector<std::vector<double>> exp_avg_sq);

private:
    ParamStore& params_;
    double lr_;
    double wd_;
    double beta1_;
    double beta2_;
    double eps_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    std::size_t epoch = 0;
    double loss = 0.0;
    std::string rng_state;
    std::uint64_t optimizer_steps = 0;
    std::vector<NamedArray> params;
    std::vector<NamedArray> exp_avg;
    std::vector<NamedArray> exp_avg_sq;
};

constexpr int kCheckpointVersion = 1;

/// Snapshot of a model (and optionally its optimizer) in parameter-name order.
Checkpoint capture(const Model& model, const AdamW* optimizer = nullptr);

/// Copies parameters into `model`. Throws CheckpointError when the variant, architecture or
/// any parameter name or shape differs.
void restore(Model& model, const Checkpoint& checkpoint);
Model model_from_checkpoint(const Checkpoint& checkpoint);

/// External parameter name -> model parameter name.
using WeightMapping = std::map<std::string, std::string>;

/// Reads a JSON object whose keys and values are parameter names.
WeightMapping read_weight_mapping(const std::filesystem::path& path);

/// Copies each mapped source array into the model. Throws CheckpointError when a mapped
/// name is missing on either side or the shapes differ. Returns the number copied.
std::size_t import_weights(Model& model, std::span<const NamedArray> source, const WeightMapping& mapping);

/// Single file: magic, manifest length, JSON manifest, manifest CRC-32, then raw
/// little-endian float64 payloads each with their own CRC-32 in the manifest.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Throws CheckpointError on a bad magic, version, checksum or truncation. When `expected`
/// is given, a differing model configuration is also a CheckpointError.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

/// A preprocessed scan and its per-voxel nodule target.
struct TrainingVolume {
    CTVolume volume;
    BinaryVolume target;
};

/// Reads every scan of a dataset directory, preprocesses it and rasterizes its annotations.
std::vector<TrainingVolume> load_training_set(const std::filesystem::path& directory,
                                              StandardizeScope scope = StandardizeScope::PerVolume);

struct LogEntry {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss = 0.0;
};

struct TrainResult {
    Checkpoint best;
    Checkpoint last;
    std::vector<LogEntry> log;
    /// Mean step loss per epoch.
    std::vector<double> epoch_loss;
};

struct TrainOptions {
    /// When set, receives train_log.csv, best.ckpt and config.json.
    std::filesystem::path output_dir;
    std::function<void(const LogEntry&)> on_step;
    /// Runs on the freshly seeded model before the optimizer is built.
    std::function<void(Model&)> initialize;
};

/// Truncated backpropagation through time over contiguous windows of `slices_per_step`
/// slices. The hidden state is carried (detached) from one window to the next within a
/// volume and reset between volumes. Each window gets one augmentation draw shared by its
/// slices. Volume order is reshuffled every epoch from the seeded generator.
/// Throws TrainingError on a non-finite loss.
TrainResult train(const std::vector<TrainingVolume>& data, const TrainConfig& config,
                  const TrainOptions& options = {});

TrainResult train(const std::filesystem::path& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

void write_train_log(const std::vector<LogEntry>& log, const std::filesystem::path& path);

}  // namespace swintempo
