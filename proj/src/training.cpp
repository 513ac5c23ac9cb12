#include "swintempo/training.hpp"

#include "swintempo/errors.hpp"
#include "swintempo/ops.hpp"
#include "swintempo/text.hpp"

#include "json.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace swintempo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'W', 'T', 'M', 'P', 'C', 'K', 'P'};

void check_target(const Image& target) {
    for (double v : target.values) {
        if (v != 0.0 && v != 1.0) {
            throw ValidationError("bce_loss: target values must be 0 or 1");
        }
    }
}

Image target_slice(const BinaryVolume& target, std::size_t z) {
    Image out(target.shape[1], target.shape[2]);
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) {
        out.values[i] = target.data[z * n + i];
    }
    return out;
}

}  // namespace

double bce_loss(const Image& pred, const Image& target, double eps) {
    if (pred.height != target.height || pred.width != target.width) {
        throw ValidationError("bce_loss: prediction is " + std::to_string(pred.height) + "x" +
                              std::to_string(pred.width) + ", target is " + std::to_string(target.height) + "x" +
                              std::to_string(target.width));
    }
    if (pred.size() == 0) {
        throw ValidationError("bce_loss: empty map");
    }
    check_target(target);
    NoGradGuard guard;
    const Tensor p(Shape{pred.size()}, pred.values);
    return ops::bce_loss(p, std::make_shared<const std::vector<double>>(target.values), eps).item();
}

double bce_loss(const ProbabilityMap& pred, const Image& target, double eps) {
    return bce_loss(pred.values, target, eps);
}

void AugmentConfig::validate() const {
    for (double v : {scale, rotation_deg, shear, translate_px, brightness}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ConfigError("augment: ranges must be finite and non-negative");
        }
    }
    if (scale >= 1.0) {
        throw ConfigError("augment: scale range must be below 1");
    }
}

AffineParams sample_augmentation(const AugmentConfig& config, Rng& rng) {
    // Every draw is taken even for zero ranges so the stream position does not depend on them.
    AffineParams p;
    p.scale = 1.0 + rng.uniform(-config.scale, config.scale);
    p.rotation_rad = rng.uniform(-config.rotation_deg, config.rotation_deg) * std::numbers::pi / 180.0;
    p.shear = rng.uniform(-config.shear, config.shear);
    p.translate_x = rng.uniform(-config.translate_px, config.translate_px);
    p.translate_y = rng.uniform(-config.translate_px, config.translate_px);
    p.brightness = rng.uniform(-config.brightness, config.brightness);
    return p;
}

std::pair<Image, Image> apply_augmentation(const Image& slice, const Image& target, const AffineParams& params) {
    if (slice.height != target.height || slice.width != target.width) {
        throw ValidationError("augment: slice and target extents differ");
    }
    const std::size_t h = slice.height;
    const std::size_t w = slice.width;
    // Forward map: d = R * Sh * S * (s - c) + c + t. Sampling needs its inverse.
    const double c = std::cos(params.rotation_rad);
    const double s = std::sin(params.rotation_rad);
    const double k = params.scale;
    const double m00 = c * k;
    const double m01 = (c * params.shear - s) * k;
    const double m10 = s * k;
    const double m11 = (s * params.shear + c) * k;
    const double det = m00 * m11 - m01 * m10;
    const double i00 = m11 / det;
    const double i01 = -m01 / det;
    const double i10 = -m10 / det;
    const double i11 = m00 / det;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double max_x = static_cast<double>(w - 1);
    const double max_y = static_cast<double>(h - 1);

    Image out_slice(h, w);
    Image out_target(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - cx - params.translate_x;
            const double dy = static_cast<double>(y) - cy - params.translate_y;
            const double sx = i00 * dx + i01 * dy + cx;
            const double sy = i10 * dx + i11 * dy + cy;

            const double bx = std::clamp(sx, 0.0, max_x);
            const double by = std::clamp(sy, 0.0, max_y);
            const auto x0 = static_cast<std::size_t>(std::floor(bx));
            const auto y0 = static_cast<std::size_t>(std::floor(by));
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            const double fx = bx - static_cast<double>(x0);
            const double fy = by - static_cast<double>(y0);
            const double top = (1.0 - fx) * slice.at(y0, x0) + fx * slice.at(y0, x1);
            const double bottom = (1.0 - fx) * slice.at(y1, x0) + fx * slice.at(y1, x1);
            out_slice.at(y, x) = (1.0 - fy) * top + fy * bottom + params.brightness;

            const double nx = std::floor(sx + 0.5);
            const double ny = std::floor(sy + 0.5);
            if (nx >= 0.0 && ny >= 0.0 && nx <= max_x && ny <= max_y) {
                out_target.at(y, x) = target.at(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
            }
        }
    }
    return {std::move(out_slice), std::move(out_target)};
}

std::pair<Image, Image> augment(const Image& slice, const Image& target, const AugmentConfig& config, Rng& rng) {
    return apply_augmentation(slice, target, sample_augmentation(config, rng));
}

void TrainConfig::validate() const {
    model.validate();
    augment.validate();
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train: learning_rate must be positive");
    }
    if (!(weight_decay >= 0.0) || learning_rate * weight_decay >= 1.0) {
        throw ConfigError("train: weight_decay must be non-negative with lr * wd < 1");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_epsilon > 0.0)) {
        throw ConfigError("train: Adam betas must lie in [0, 1) and epsilon must be positive");
    }
    if (epochs < 1) {
        throw ConfigError("train: epochs must be at least 1");
    }
    if (slices_per_step < 1) {
        throw ConfigError("train: slices_per_step must be at least 1");
    }
}

std::string TrainConfig::to_json() const {
    json j;
    j["model"] = json::parse(model.to_json());
    j["learning_rate"] = learning_rate;
    j["weight_decay"] = weight_decay;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["adam_epsilon"] = adam_epsilon;
    j["epochs"] = epochs;
    j["slices_per_step"] = slices_per_step;
    j["seed"] = seed;
    j["augment"] = {{"scale", augment.scale},
                    {"rotation_deg", augment.rotation_deg},
                    {"shear", augment.shear},
                    {"translate_px", augment.translate_px},
                    {"brightness", augment.brightness}};
    j["standardize"] = scope == StandardizeScope::PerVolume ? "volume" : "slice";
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        TrainConfig cfg;
        cfg.model = ModelConfig::from_json(j.at("model").dump());
        cfg.learning_rate = j.at("learning_rate").get<double>();
        cfg.weight_decay = j.at("weight_decay").get<double>();
        cfg.beta1 = j.at("beta1").get<double>();
        cfg.beta2 = j.at("beta2").get<double>();
        cfg.adam_epsilon = j.at("adam_epsilon").get<double>();
        cfg.epochs = j.at("epochs").get<std::size_t>();
        cfg.slices_per_step = j.at("slices_per_step").get<std::size_t>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
        const json& a = j.at("augment");
        cfg.augment.scale = a.at("scale").get<double>();
        cfg.augment.rotation_deg = a.at("rotation_deg").get<double>();
        cfg.augment.shear = a.at("shear").get<double>();
        cfg.augment.translate_px = a.at("translate_px").get<double>();
        cfg.augment.brightness = a.at("brightness").get<double>();
        const std::string scope = j.at("standardize").get<std::string>();
        if (scope != "volume" && scope != "slice") {
            throw ConfigError("train: standardize must be 'volume' or 'slice'");
        }
        cfg.scope = scope == "volume" ? StandardizeScope::PerVolume : StandardizeScope::PerSlice;
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw FormatError(std::string("train config: ") + e.what());
    }
}

AdamW::AdamW(ParamStore& params, double learning_rate, double weight_decay, double beta1, double beta2,
             double epsilon)
    : params_(params), lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void AdamW::step() {
    ++step_;
    const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    const double decay = 1.0 - lr_ * wd_;
    std::size_t k = 0;
    for (auto& [name, t] : params_) {
        auto value = t.mutable_values();
        const bool has_grad = t.has_grad();
        const auto grad = has_grad ? t.grad() : std::span<const double>();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = has_grad ? grad[i] : 0.0;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            value[i] = value[i] * decay - lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        }
        ++k;
    }
}

void AdamW::set_state(std::uint64_t steps, std::vector<std::vector<double>> exp_avg,
                      std::vector<std::vector<double>> exp_avg_sq) {
    if (exp_avg.size() != m_.size() || exp_avg_sq.size() != v_.size()) {
        throw CheckpointError("optimizer state does not match the parameter set");
    }
    for (std::size_t k = 0; k < m_.size(); ++k) {
        if (exp_avg[k].size() != m_[k].size() || exp_avg_sq[k].size() != v_[k].size()) {
            throw CheckpointError("optimizer state does not match the parameter set");
        }
    }
    step_ = steps;
    m_ = std::move(exp_avg);
    v_ = std::move(exp_avg_sq);
}

Checkpoint capture(const Model& model, const AdamW* optimizer) {
    Checkpoint ck;
    ck.model = model.config();
    std::size_t k = 0;
    for (const auto& [name, t] : model.params()) {
        ck.params.push_back({name, t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
        if (optimizer) {
            ck.exp_avg.push_back({name, t.shape(), optimizer->exp_avg()[k]});
            ck.exp_avg_sq.push_back({name, t.shape(), optimizer->exp_avg_sq()[k]});
        }
        ++k;
    }
    if (optimizer) {
        ck.optimizer_steps = optimizer->steps();
    }
    return ck;
}

void restore(Model& model, const Checkpoint& checkpoint) {
    if (checkpoint.model.to_json() != model.config().to_json()) {
        throw CheckpointError("checkpoint is incompatible: it was written for " + checkpoint.model.to_json() +
                              " but the model is " + model.config().to_json());
    }
    if (checkpoint.params.size() != model.params().size()) {
        throw CheckpointError("checkpoint is incompatible: parameter count differs");
    }
    std::size_t k = 0;
    for (auto& [name, t] : model.params()) {
        const NamedArray& a = checkpoint.params[k++];
        if (a.name != name || a.shape != t.shape()) {
            throw CheckpointError("checkpoint is incompatible: expected " + name + " " + shape_str(t.shape()) +
                                  ", found " + a.name + " " + shape_str(a.shape));
        }
        std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
    }
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
    Model model(checkpoint.model, 0);
    restore(model, checkpoint);
    return model;
}

WeightMapping read_weight_mapping(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text::read_file(path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("weight mapping '" + path.string() + "': " + e.what());
    }
    if (!j.is_object()) {
        throw FormatError("weight mapping '" + path.string() + "' must be a JSON object");
    }
    WeightMapping out;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_string()) {
            throw FormatError("weight mapping '" + path.string() + "': value of '" + key + "' is not a string");
        }
        out.emplace(key, value.get<std::string>());
    }
    return out;
}

std::size_t import_weights(Model& model, std::span<const NamedArray> source, const WeightMapping& mapping) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : source) {
        by_name.emplace(a.name, &a);
    }
    for (const auto& [from, to] : mapping) {
        const auto it = by_name.find(from);
        if (it == by_name.end()) {
            throw CheckpointError("import: source has no parameter '" + from + "'");
        }
        if (!model.params().contains(to)) {
            throw CheckpointError("import: model has no parameter '" + to + "'");
        }
        const Tensor& t = model.params().at(to);
        if (it->second->shape != t.shape()) {
            throw CheckpointError("import: '" + from + "' " + shape_str(it->second->shape) + " does not fit '" + to +
                                  "' " + shape_str(t.shape()));
        }
    }
    for (const auto& [from, to] : mapping) {
        const auto& values = by_name.at(from)->values;
        std::copy(values.begin(), values.end(), model.params().at(to).mutable_values().begin());
    }
    return mapping.size();
}

namespace {

void append_le_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

void append_le_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

std::uint64_t read_le(const std::string& in, std::size_t offset, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    }
    return v;
}

std::uint32_t crc_of(const char* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks to stay within range.
    while (size > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1U << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
    std::string payload;
    json tensors = json::array();
    auto emit = [&](const std::vector<NamedArray>& group, const char* kind) {
        for (const auto& a : group) {
            const std::size_t offset = payload.size();
            for (double v : a.values) {
                append_le_u64(payload, std::bit_cast<std::uint64_t>(v));
            }
            const std::size_t bytes = payload.size() - offset;
            tensors.push_back({{"name", a.name},
                               {"group", kind},
                               {"shape", a.shape},
                               {"dtype", "float64"},
                               {"offset", offset},
                               {"bytes", bytes},
                               {"crc32", crc_of(payload.data() + offset, bytes)}});
        }
    };
    emit(checkpoint.params, "param");
    emit(checkpoint.exp_avg, "exp_avg");
    emit(checkpoint.exp_avg_sq, "exp_avg_sq");

    json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["model"] = json::parse(checkpoint.model.to_json());
    manifest["train"] = json::parse(checkpoint.train.to_json());
    manifest["epoch"] = checkpoint.epoch;
    manifest["loss"] = checkpoint.loss;
    manifest["rng_state"] = checkpoint.rng_state;
    manifest["optimizer_steps"] = checkpoint.optimizer_steps;
    manifest["tensors"] = std::move(tensors);
    const std::string text = manifest.dump();

    std::string out(kMagic, sizeof(kMagic));
    append_le_u64(out, text.size());
    out += text;
    append_le_u32(out, crc_of(text.data(), text.size()));
    out += payload;

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw IoError("cannot write checkpoint '" + path.string() + "'");
    }
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) {
        throw IoError("failed writing checkpoint '" + path.string() + "'");
    }
}

Checkpoint load_checkpoint(const fs::path& path, const ModelConfig* expected) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open checkpoint '" + path.string() + "'");
    }
    std::ostringstream buffer;
    buffer << file.rdbuf();
    const std::string in = buffer.str();
    const std::string where = "checkpoint '" + path.string() + "': ";

    if (in.size() < sizeof(kMagic) + 8 || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(where + "not a checkpoint file");
    }
    const std::uint64_t manifest_size = read_le(in, sizeof(kMagic), 8);
    const std::size_t manifest_start = sizeof(kMagic) + 8;
    if (manifest_size > in.size() - manifest_start || in.size() - manifest_start - manifest_size < 4) {
        throw CheckpointError(where + "truncated manifest");
    }
    const std::string text = in.substr(manifest_start, manifest_size);
    const std::size_t crc_at = manifest_start + manifest_size;
    if (read_le(in, crc_at, 4) != crc_of(text.data(), text.size())) {
        throw CheckpointError(where + "manifest checksum mismatch");
    }
    const std::size_t payload_start = crc_at + 4;
    const std::size_t payload_size = in.size() - payload_start;

    Checkpoint ck;
    try {
        const json manifest = json::parse(text);
        const int version = manifest.at("format_version").get<int>();
        if (version != kCheckpointVersion) {
            throw CheckpointError(where + "incompatible format version " + std::to_string(version) +
                                  " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
        }
        ck.model = ModelConfig::from_json(manifest.at("model").dump());
        ck.train = TrainConfig::from_json(manifest.at("train").dump());
        ck.epoch = manifest.at("epoch").get<std::size_t>();
        ck.loss = manifest.at("loss").get<double>();
        ck.rng_state = manifest.at("rng_state").get<std::string>();
        ck.optimizer_steps = manifest.at("optimizer_steps").get<std::uint64_t>();
        for (const json& t : manifest.at("tensors")) {
            NamedArray a;
            a.name = t.at("name").get<std::string>();
            a.shape = t.at("shape").get<Shape>();
            if (t.at("dtype").get<std::string>() != "float64") {
                throw CheckpointError(where + "unsupported dtype for " + a.name);
            }
            const std::size_t offset = t.at("offset").get<std::size_t>();
            const std::size_t bytes = t.at("bytes").get<std::size_t>();
            if (bytes != numel(a.shape) * 8 || offset > payload_size || bytes > payload_size - offset) {
                throw CheckpointError(where + "truncated or inconsistent payload for " + a.name);
            }
            const char* data = in.data() + payload_start + offset;
            if (crc_of(data, bytes) != t.at("crc32").get<std::uint32_t>()) {
                throw CheckpointError(where + "checksum mismatch in " + a.name);
            }
            a.values.resize(numel(a.shape));
            for (std::size_t i = 0; i < a.values.size(); ++i) {
                a.values[i] = std::bit_cast<double>(read_le(in, payload_start + offset + 8 * i, 8));
            }
            const std::string group = t.at("group").get<std::string>();
            if (group == "param") {
                ck.params.push_back(std::move(a));
            } else if (group == "exp_avg") {
                ck.exp_avg.push_back(std::move(a));
            } else if (group == "exp_avg_sq") {
                ck.exp_avg_sq.push_back(std::move(a));
            } else {
                throw CheckpointError(where + "unknown tensor group '" + group + "'");
            }
        }
    } catch (const json::exception& e) {
        throw CheckpointError(where + "malformed manifest: " + e.what());
    } catch (const FormatError& e) {
        throw CheckpointError(where + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(where + e.what());
    }
    if (expected && expected->to_json() != ck.model.to_json()) {
        throw CheckpointError(where + "incompatible model configuration: file has " + ck.model.to_json() +
                              ", expected " + expected->to_json());
    }
    return ck;
}

std::vector<TrainingVolume> load_training_set(const fs::path& directory, StandardizeScope scope) {
    const auto entries = list_dataset(directory);
    if (entries.empty()) {
        throw ValidationError("training set '" + directory.string() + "' contains no volumes");
    }
    const auto annotations = read_annotations(dataset_annotations(directory));
    std::vector<TrainingVolume> out;
    for (const auto& entry : entries) {
        CTVolume volume = read_volume(entry.volume);
        if (!volume.preprocessed) {
            if (entry.mask.empty()) {
                volume = preprocess_volume(volume, nullptr, scope);
            } else {
                const LungMask mask = read_mask(entry.mask);
                volume = preprocess_volume(volume, &mask, scope);
            }
        }
        std::vector<Annotation> own;
        std::copy_if(annotations.begin(), annotations.end(), std::back_inserter(own),
                     [&](const Annotation& a) { return a.series_id == volume.series_id; });
        BinaryVolume target = rasterize_annotations(volume.shape, volume.spacing_mm, volume.origin_mm, own);
        out.push_back({std::move(volume), std::move(target)});
    }
    return out;
}

void write_train_log(const std::vector<LogEntry>& log, const fs::path& path) {
    std::string out = "step,epoch,loss\n";
    for (const auto& e : log) {
        out += std::to_string(e.step) + "," + std::to_string(e.epoch) + "," + text::format_double(e.loss) + "\n";
    }
    text::write_file(path.string(), out);
}

TrainResult train(const std::vector<TrainingVolume>& data, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    if (data.empty()) {
        throw ValidationError("train: no training volumes");
    }
    for (const auto& tv : data) {
        tv.volume.validate();
        if (!tv.volume.preprocessed) {
            throw ValidationError("train: volume '" + tv.volume.series_id + "' has not been preprocessed");
        }
        if (tv.target.shape != tv.volume.shape) {
            throw ValidationError("train: target shape differs from volume '" + tv.volume.series_id + "'");
        }
    }
    if (!options.output_dir.empty()) {
        std::error_code ec;
        fs::create_directories(options.output_dir, ec);
        if (ec) {
            throw IoError("cannot create '" + options.output_dir.string() + "': " + ec.message());
        }
        text::write_file((options.output_dir / "config.json").string(), config.to_json());
    }

    Model model(config.model, config.seed);
    if (options.initialize) {
        options.initialize(model);
    }
    AdamW optimizer(model.params(), config.learning_rate, config.weight_decay, config.beta1, config.beta2,
                    config.adam_epsilon);
    Rng rng(config.seed ^ 0x547261696e000000ULL);
    const std::size_t n = config.model.image_size;

    TrainResult result;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t step = 0;
    std::vector<std::size_t> order(data.size());
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        }
        double epoch_total = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t v : order) {
            const CTVolume& volume = data[v].volume;
            const std::size_t depth = volume.shape[0];
            HiddenState state = model.initial_state();
            for (std::size_t start = 0; start < depth; start += config.slices_per_step) {
                const std::size_t end = std::min(start + config.slices_per_step, depth);
                const AffineParams aug = sample_augmentation(config.augment, rng);
                std::vector<Tensor> losses;
                for (std::size_t z = start; z < end; ++z) {
                    Image slice = slice_image(volume, z);
                    Image target = target_slice(data[v].target, z);
                    if (slice.height != n || slice.width != n) {
                        slice = resize_slice(slice, n);
                        target = resize_nearest(target, n, n);
                    }
                    auto [s, t] = apply_augmentation(slice, target, aug);
                    SliceResult out = model.forward(Tensor({n, n}, std::move(s.values)), state, static_cast<long>(z));
                    losses.push_back(
                        ops::bce_with_logits(out.logits, std::make_shared<const std::vector<double>>(std::move(t.values))));
                    state = std::move(out.state);
                }
                const Tensor loss = ops::mean_of(losses);
                const double value = loss.item();
                ++step;
                if (!std::isfinite(value)) {
                    throw TrainingError("train: non-finite loss at step " + std::to_string(step) + " (series '" +
                                        volume.series_id + "', slices " + std::to_string(start) + ".." +
                                        std::to_string(end - 1) + ")");
                }
                model.params().zero_grad();
                loss.backward();
                optimizer.step();
                state = {state.state.detach(), state.slice_index_last};

                const LogEntry entry{step, epoch, value};
                result.log.push_back(entry);
                if (options.on_step) {
                    options.on_step(entry);
                }
                epoch_total += value;
                ++epoch_steps;
            }
        }
        const double epoch_loss = epoch_total / static_cast<double>(epoch_steps);
        result.epoch_loss.push_back(epoch_loss);

        Checkpoint snapshot = capture(model, &optimizer);
        snapshot.train = config;
        snapshot.epoch = epoch;
        snapshot.loss = epoch_loss;
        snapshot.rng_state = rng.state();
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            result.best = snapshot;
            if (!options.output_dir.empty()) {
                save_checkpoint(result.best, options.output_dir / "best.ckpt");
            }
        }
        result.last = std::move(snapshot);
    }
    if (!options.output_dir.empty()) {
        save_checkpoint(result.last, options.output_dir / "last.ckpt");
        write_train_log(result.log, options.output_dir / "train_log.csv");
    }
    return result;
}

TrainResult train(const fs::path& dataset, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    return train(load_training_set(dataset, config.scope), config, options);
}

}  // namespace swintempo
