#include "swintempo/cli.hpp"

#include "swintempo/candidate_extract.hpp"
#include "swintempo/errors.hpp"
#include "swintempo/froc_eval.hpp"
#include "swintempo/model.hpp"
#include "swintempo/preprocess.hpp"
#include "swintempo/text.hpp"
#include "swintempo/training.hpp"
#include "swintempo/volume_io.hpp"

#include "CLI11.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

namespace swintempo::cli {

namespace fs = std::filesystem;

namespace {

StandardizeScope parse_scope(const std::string& name) {
    return name == "slice" ? StandardizeScope::PerSlice : StandardizeScope::PerVolume;
}

std::string scope_name(StandardizeScope scope) {
    return scope == StandardizeScope::PerSlice ? "slice" : "volume";
}

void ensure_directory(const fs::path& dir) {
    if (dir.empty()) {
        return;
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    }
}

/// Writes the subcommand's resolved options as a TOML section that `--config` reads back.
void echo_config(const CLI::App& sub, const fs::path& path) {
    ensure_directory(path.parent_path());
    text::write_file(path.string(), "[" + sub.get_name() + "]\n" + sub.config_to_str(true, false));
}

fs::path sidecar(const fs::path& file, const std::string& ext) {
    fs::path p = file;
    p.replace_extension(ext);
    return p;
}

std::uint32_t crc_update(std::uint32_t crc, const std::string& bytes) {
    return static_cast<std::uint32_t>(
        crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

/// Cache key over the stored volume, its mask and the standardization scope.
std::string cache_key(const DatasetEntry& entry, StandardizeScope scope) {
    std::uint32_t crc = static_cast<std::uint32_t>(crc32(0L, Z_NULL, 0));
    crc = crc_update(crc, text::read_file(sidecar(entry.volume, ".json").string()));
    crc = crc_update(crc, text::read_file(sidecar(entry.volume, ".raw").string()));
    if (!entry.mask.empty()) {
        crc = crc_update(crc, text::read_file(sidecar(entry.mask, ".json").string()));
        crc = crc_update(crc, text::read_file(sidecar(entry.mask, ".raw").string()));
    }
    crc = crc_update(crc, scope_name(scope));
    char hex[9];
    std::snprintf(hex, sizeof hex, "%08x", crc);
    return entry.series_id + "_" + hex;
}

/// Reads and preprocesses one scan, going through $SWINTEMPO_CACHE when it is set.
CTVolume prepared_volume(const DatasetEntry& entry, StandardizeScope scope) {
    CTVolume raw = read_volume(entry.volume);
    if (raw.preprocessed) {
        return raw;
    }
    const char* env = std::getenv("SWINTEMPO_CACHE");
    std::optional<fs::path> cached;
    if (env != nullptr && *env != '\0') {
        cached = fs::path(env) / cache_key(entry, scope);
        if (fs::exists(sidecar(*cached, ".json")) && fs::exists(sidecar(*cached, ".raw"))) {
            return read_volume(*cached);
        }
    }
    CTVolume out;
    if (entry.mask.empty()) {
        out = preprocess_volume(raw, nullptr, scope);
    } else {
        const LungMask mask = read_mask(entry.mask);
        out = preprocess_volume(raw, &mask, scope);
    }
    if (cached) {
        ensure_directory(cached->parent_path());
        write_volume(out, *cached);
    }
    return out;
}

std::vector<TrainingVolume> training_volumes(std::span<const DatasetEntry> entries,
                                             std::span<const Annotation> annotations, StandardizeScope scope) {
    std::vector<TrainingVolume> out;
    for (const auto& entry : entries) {
        CTVolume volume = prepared_volume(entry, scope);
        std::vector<Annotation> own;
        std::copy_if(annotations.begin(), annotations.end(), std::back_inserter(own),
                     [&](const Annotation& a) { return a.series_id == volume.series_id; });
        BinaryVolume target = rasterize_annotations(volume.shape, volume.spacing_mm, volume.origin_mm, own);
        out.push_back({std::move(volume), std::move(target)});
    }
    return out;
}

std::vector<DatasetEntry> nonempty_dataset(const fs::path& dir) {
    auto entries = list_dataset(dir);
    if (entries.empty()) {
        throw ValidationError("dataset '" + dir.string() + "' contains no volumes");
    }
    return entries;
}

struct TrainArgs {
    std::string variant = "swin_tempo";
    std::string preset = "tiny";
    std::size_t epochs = 1;
    double lr = 1e-4;
    double wd = 1e-4;
    std::size_t slices_per_step = 4;
    std::uint64_t seed = 0;
    std::string scope = "volume";
    AugmentConfig augment;
    bool no_augment = false;
    std::string pretrained;
    std::string pretrained_map;

    void add(CLI::App* sub) {
        sub->add_option("--variant", variant, "Model variant")
            ->check(CLI::IsMember({"baseline_unet", "swin_enhanced", "swin_tempo"}))
            ->capture_default_str();
        sub->add_option("--preset", preset, "Architecture size: tiny (64 px) or default (224 px)")
            ->check(CLI::IsMember({"tiny", "default"}))
            ->capture_default_str();
        sub->add_option("--epochs", epochs, "Passes over the training set")->capture_default_str();
        sub->add_option("--lr", lr, "AdamW learning rate")->capture_default_str();
        sub->add_option("--wd", wd, "AdamW decoupled weight decay")->capture_default_str();
        sub->add_option("--slices-per-step", slices_per_step, "Slices per truncated BPTT window")
            ->capture_default_str();
        sub->add_option("--seed", seed, "Seed for initialization, shuffling and augmentation")->capture_default_str();
        sub->add_option("--scope", scope, "Standardization scope")
            ->check(CLI::IsMember({"volume", "slice"}))
            ->capture_default_str();
        sub->add_option("--aug-scale", augment.scale, "Relative scale half-range")->capture_default_str();
        sub->add_option("--aug-rotation", augment.rotation_deg, "Rotation half-range in degrees")
            ->capture_default_str();
        sub->add_option("--aug-shear", augment.shear, "Shear half-range")->capture_default_str();
        sub->add_option("--aug-translate", augment.translate_px, "Translation half-range in pixels")
            ->capture_default_str();
        sub->add_option("--aug-brightness", augment.brightness, "Additive brightness half-range")
            ->capture_default_str();
        sub->add_flag("--no-augment", no_augment, "Disable augmentation");
        auto* ck = sub->add_option("--pretrained", pretrained, "Checkpoint to import weights from");
        auto* map = sub->add_option("--pretrained-map", pretrained_map,
                                    "JSON object mapping source parameter names to model names");
        ck->needs(map);
        map->needs(ck);
    }

    TrainConfig config() const {
        TrainConfig cfg;
        const Variant v = parse_variant(variant);
        if (preset == "tiny") {
            cfg.model = ModelConfig::tiny(v);
        } else {
            cfg.model = ModelConfig{};
            cfg.model.variant = v;
        }
        cfg.epochs = epochs;
        cfg.learning_rate = lr;
        cfg.weight_decay = wd;
        cfg.slices_per_step = slices_per_step;
        cfg.seed = seed;
        cfg.scope = parse_scope(scope);
        cfg.augment = no_augment ? AugmentConfig::none() : augment;
        cfg.validate();
        return cfg;
    }

    TrainOptions options(const fs::path& out_dir, std::ostream& out) const {
        TrainOptions opts;
        opts.output_dir = out_dir;
        if (!pretrained.empty()) {
            const Checkpoint source = load_checkpoint(pretrained);
            const WeightMapping mapping = read_weight_mapping(pretrained_map);
            opts.initialize = [source, mapping, &out](Model& model) {
                const std::size_t n = import_weights(model, source.params, mapping);
                out << "imported " << n << " parameter tensors\n";
            };
        }
        return opts;
    }
};

struct ExtractArgs {
    ExtractOptions options;
    std::size_t jobs = 1;

    void add(CLI::App* sub) {
        sub->add_option("--threshold", options.threshold, "Probability threshold, exclusive")
            ->capture_default_str();
        sub->add_option("--eps", options.eps_mm, "DBSCAN radius in millimetres")->capture_default_str();
        sub->add_option("--min-pts", options.min_pts, "DBSCAN core-point neighbour count")->capture_default_str();
        sub->add_option("--jobs", jobs, "Volumes processed in parallel")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
    }
};

/// Probability maps and candidates for each volume, computed on up to `jobs` threads. Each
/// volume runs with its own fresh state, so the result does not depend on `jobs`.
std::vector<NoduleCandidate> detect(const Model& model, std::span<const CTVolume> volumes,
                                    const ExtractOptions& options, std::size_t jobs, const fs::path& maps_dir) {
    std::vector<std::vector<NoduleCandidate>> per_volume(volumes.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_lock;
    auto worker = [&] {
        for (std::size_t i = next++; i < volumes.size(); i = next++) {
            try {
                const CTVolume& volume = volumes[i];
                const auto maps = model.process_volume(volume);
                per_volume[i] = extract(maps, options, SeriesGeometry::of(volume));
                if (!maps_dir.empty()) {
                    CTVolume prob;
                    prob.series_id = volume.series_id + "_prob";
                    prob.shape = volume.shape;
                    prob.spacing_mm = volume.spacing_mm;
                    prob.origin_mm = volume.origin_mm;
                    prob.voxels.reserve(volume.voxels.size());
                    for (const auto& m : maps) {
                        for (double p : m.values.values) {
                            prob.voxels.push_back(static_cast<float>(p));
                        }
                    }
                    write_volume(prob, maps_dir / prob.series_id);
                }
            } catch (...) {
                std::lock_guard lock(failure_lock);
                if (!failure) {
                    failure = std::current_exception();
                }
                next = volumes.size();
            }
        }
    };
    const std::size_t n_threads = std::min(std::max<std::size_t>(jobs, 1), std::max<std::size_t>(volumes.size(), 1));
    std::vector<std::thread> threads;
    for (std::size_t t = 1; t < n_threads; ++t) {
        threads.emplace_back(worker);
    }
    worker();
    for (auto& t : threads) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    std::vector<NoduleCandidate> all;
    for (auto& c : per_volume) {
        all.insert(all.end(), c.begin(), c.end());
    }
    sort_candidates(all);
    return all;
}

int cmd_synth(const CLI::App& sub, const PhantomConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    const auto cases = generate_phantom(cfg);
    ensure_directory(out_dir);
    write_dataset(cases, out_dir);
    echo_config(sub, out_dir / "effective_config.toml");
    std::size_t nodules = 0;
    for (const auto& c : cases) {
        nodules += c.annotations.size();
    }
    out << "wrote " << cases.size() << " volumes with " << nodules << " nodules to " << out_dir.string() << "\n";
    return kExitOk;
}

int cmd_preprocess(const CLI::App& sub, const fs::path& in_dir, const fs::path& out_dir, const std::string& scope,
                   std::ostream& out) {
    const auto entries = nonempty_dataset(in_dir);
    ensure_directory(out_dir);
    for (const auto& entry : entries) {
        write_volume(prepared_volume(entry, parse_scope(scope)), out_dir / entry.series_id);
        if (!entry.mask.empty()) {
            write_mask(read_mask(entry.mask), read_volume(entry.volume), out_dir / (entry.series_id + "_mask"));
        }
    }
    const fs::path annotations = dataset_annotations(in_dir);
    if (fs::exists(annotations)) {
        write_annotations(read_annotations(annotations), dataset_annotations(out_dir));
    }
    echo_config(sub, out_dir / "effective_config.toml");
    out << "preprocessed " << entries.size() << " volumes into " << out_dir.string() << "\n";
    return kExitOk;
}

int cmd_train(const CLI::App& sub, const TrainArgs& args, const fs::path& data_dir, const fs::path& out_dir,
              std::ostream& out) {
    const TrainConfig cfg = args.config();
    const auto entries = nonempty_dataset(data_dir);
    const auto annotations = read_annotations(dataset_annotations(data_dir));
    const auto data = training_volumes(entries, annotations, cfg.scope);
    ensure_directory(out_dir);
    echo_config(sub, out_dir / "effective_config.toml");
    const TrainResult result = train(data, cfg, args.options(out_dir, out));
    out << "trained " << args.variant << " for " << cfg.epochs << " epochs; best epoch " << result.best.epoch
        << " loss " << text::format_double(result.best.loss) << "\n";
    return kExitOk;
}

int cmd_infer(const CLI::App& sub, const fs::path& checkpoint, const std::string& volume_path,
              const std::string& mask_path, const std::string& data_dir, const ExtractArgs& args,
              const fs::path& out_path, const std::string& maps_dir, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Model model = model_from_checkpoint(ck);
    std::vector<DatasetEntry> entries;
    if (!volume_path.empty()) {
        DatasetEntry entry;
        entry.volume = volume_path;
        entry.series_id = sidecar(volume_path, "").filename().string();
        entry.mask = mask_path;
        entries.push_back(std::move(entry));
    } else {
        entries = nonempty_dataset(data_dir);
    }
    std::vector<CTVolume> volumes;
    for (const auto& entry : entries) {
        volumes.push_back(prepared_volume(entry, ck.train.scope));
    }
    if (!maps_dir.empty()) {
        ensure_directory(maps_dir);
    }
    const auto candidates = detect(model, volumes, args.options, args.jobs, maps_dir);
    ensure_directory(out_path.parent_path());
    write_candidates(candidates, out_path);
    echo_config(sub, sidecar(out_path, ".config.toml"));
    out << "wrote " << candidates.size() << " candidates from " << volumes.size() << " volumes to "
        << out_path.string() << "\n";
    return kExitOk;
}

int cmd_evaluate(const CLI::App& sub, const fs::path& candidates_path, const fs::path& annotations_path,
                 std::size_t n_scans, bool keep_duplicates, const fs::path& out_path, std::ostream& out) {
    const auto candidates = read_candidates(candidates_path);
    const auto annotations = read_annotations(annotations_path);
    const FROCReport report = evaluate(candidates, annotations, n_scans, MatchOptions{!keep_duplicates});
    ensure_directory(out_path.parent_path());
    write_report(report, out_path);
    echo_config(sub, sidecar(out_path, ".config.toml"));
    out << "CPM " << text::format_double(report.cpm) << ", detected " << report.detected << " of "
        << report.total_annotations << " nodules\n";
    return kExitOk;
}

int cmd_crossval(const CLI::App& sub, const TrainArgs& train_args, const ExtractArgs& extract_args,
                 const fs::path& data_dir, std::size_t folds, bool keep_duplicates, const fs::path& out_dir,
                 std::ostream& out) {
    const TrainConfig base = train_args.config();
    const auto entries = nonempty_dataset(data_dir);
    const auto annotations = read_annotations(dataset_annotations(data_dir));
    std::vector<std::string> ids;
    for (const auto& e : entries) {
        ids.push_back(e.series_id);
    }
    const auto split = kfold_split(ids, folds, train_args.seed);
    const auto data = training_volumes(entries, annotations, base.scope);
    ensure_directory(out_dir);
    echo_config(sub, out_dir / "effective_config.toml");

    std::vector<NoduleCandidate> pooled;
    for (std::size_t k = 0; k < split.size(); ++k) {
        std::vector<TrainingVolume> train_set;
        std::vector<CTVolume> held_out;
        for (const auto& tv : data) {
            if (std::find(split[k].begin(), split[k].end(), tv.volume.series_id) != split[k].end()) {
                held_out.push_back(tv.volume);
            } else {
                train_set.push_back(tv);
            }
        }
        if (train_set.empty()) {
            throw ValidationError("crossval: fold " + std::to_string(k) + " leaves no training volumes");
        }
        TrainConfig cfg = base;
        cfg.seed = base.seed + k;
        const fs::path fold_dir = out_dir / ("fold_" + std::to_string(k));
        const TrainResult result = train(train_set, cfg, train_args.options(fold_dir, out));
        const Model model = model_from_checkpoint(result.best);
        const auto found = detect(model, held_out, extract_args.options, extract_args.jobs, {});
        write_candidates(found, fold_dir / "candidates.csv");
        pooled.insert(pooled.end(), found.begin(), found.end());
        out << "fold " << k << ": " << held_out.size() << " held out, " << found.size() << " candidates\n";
    }
    sort_candidates(pooled);
    write_candidates(pooled, out_dir / "candidates.csv");
    const FROCReport report = evaluate(pooled, annotations, entries.size(), MatchOptions{!keep_duplicates});
    write_report(report, out_dir / "report.json");
    out << "pooled CPM " << text::format_double(report.cpm) << "\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Lung nodule detection on CT volumes treated as slice sequences.", "swintempo"};
    app.set_config("--config", "", "TOML file; each [subcommand] section supplies that subcommand's options");
    app.require_subcommand(1);
    app.fallthrough();

    // Output locations are not configurable so the echoed config is independent of them.
    PhantomConfig synth_cfg;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a seeded phantom dataset");
    synth->add_option("--out", synth_out, "Output dataset directory")->required()->configurable(false);
    synth->add_option("--n-volumes", synth_cfg.n_volumes, "Number of scans")->capture_default_str();
    synth->add_option("--seed", synth_cfg.seed, "Generator seed")->capture_default_str();
    synth->add_option("--depth", synth_cfg.shape[0], "Slices per scan")->capture_default_str();
    synth->add_option("--height", synth_cfg.shape[1], "Rows per slice")->capture_default_str();
    synth->add_option("--width", synth_cfg.shape[2], "Columns per slice")->capture_default_str();
    synth->add_option("--spacing-z", synth_cfg.spacing_mm[0], "Slice spacing in mm")->capture_default_str();
    synth->add_option("--spacing-y", synth_cfg.spacing_mm[1], "Row spacing in mm")->capture_default_str();
    synth->add_option("--spacing-x", synth_cfg.spacing_mm[2], "Column spacing in mm")->capture_default_str();
    synth->add_option("--min-nodules", synth_cfg.nodules_per_volume.first, "Fewest nodules per scan")
        ->capture_default_str();
    synth->add_option("--max-nodules", synth_cfg.nodules_per_volume.second, "Most nodules per scan")
        ->capture_default_str();
    synth->add_option("--min-radius", synth_cfg.nodule_radius_mm.first, "Smallest nodule radius in mm")
        ->capture_default_str();
    synth->add_option("--max-radius", synth_cfg.nodule_radius_mm.second, "Largest nodule radius in mm")
        ->capture_default_str();
    synth->add_option("--texture", synth_cfg.background_texture, "Background noise std in HU")
        ->capture_default_str();
    synth->add_option("--prefix", synth_cfg.series_prefix, "Series id prefix")->capture_default_str();

    std::string pre_in;
    std::string pre_out;
    std::string pre_scope = "volume";
    auto* pre = app.add_subcommand("preprocess", "Clip, mask and standardize a dataset");
    pre->add_option("--in", pre_in, "Input dataset directory")->required();
    pre->add_option("--out", pre_out, "Output dataset directory")->required()->configurable(false);
    pre->add_option("--scope", pre_scope, "Standardization scope")
        ->check(CLI::IsMember({"volume", "slice"}))
        ->capture_default_str();

    TrainArgs train_args;
    std::string train_data;
    std::string train_out;
    auto* train_cmd = app.add_subcommand("train", "Train one model variant");
    train_cmd->add_option("--data", train_data, "Dataset directory")->required();
    train_cmd->add_option("--out", train_out, "Run directory")->required()->configurable(false);
    train_args.add(train_cmd);

    ExtractArgs infer_args;
    std::string infer_ck;
    std::string infer_volume;
    std::string infer_mask;
    std::string infer_data;
    std::string infer_out;
    std::string infer_maps;
    auto* infer = app.add_subcommand("infer", "Detect nodule candidates");
    infer->add_option("--checkpoint", infer_ck, "Checkpoint file")->required();
    auto* vol_opt = infer->add_option("--volume", infer_volume, "Single volume (stem or .json)");
    infer->add_option("--mask", infer_mask, "Lung mask for --volume")->needs(vol_opt);
    auto* data_opt = infer->add_option("--data", infer_data, "Dataset directory");
    vol_opt->excludes(data_opt);
    infer->add_option("--out", infer_out, "Candidates CSV")->required()->configurable(false);
    infer->add_option("--maps-dir", infer_maps, "Directory for per-volume probability maps")->configurable(false);
    infer_args.add(infer);

    std::string eval_cands;
    std::string eval_anns;
    std::size_t eval_scans = 0;
    bool eval_keep = false;
    std::string eval_out = "report.json";
    auto* eval = app.add_subcommand("evaluate", "FROC analysis of a candidates CSV");
    eval->add_option("--candidates", eval_cands, "Candidates CSV")->required();
    eval->add_option("--annotations", eval_anns, "Annotations CSV")->required();
    eval->add_option("--n-scans", eval_scans, "Number of scans the candidates came from")
        ->required()
        ->check(CLI::PositiveNumber);
    eval->add_flag("--keep-duplicates", eval_keep, "Ignore extra hits on a detected nodule instead of counting FPs");
    eval->add_option("--out", eval_out, "Report JSON; the plot is written next to it")
        ->configurable(false)
        ->capture_default_str();

    TrainArgs cv_train;
    ExtractArgs cv_extract;
    std::string cv_data;
    std::string cv_out;
    std::size_t cv_folds = 5;
    bool cv_keep = false;
    auto* cv = app.add_subcommand("crossval", "K-fold train, infer and pooled evaluation");
    cv->add_option("--data", cv_data, "Dataset directory")->required();
    cv->add_option("--out", cv_out, "Run directory")->required()->configurable(false);
    cv->add_option("--folds", cv_folds, "Number of folds")->capture_default_str();
    cv->add_flag("--keep-duplicates", cv_keep, "Ignore extra hits on a detected nodule instead of counting FPs");
    cv_train.add(cv);
    cv_extract.add(cv);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::FileError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitValidation;
    }

    try {
        if (synth->parsed()) {
            return cmd_synth(*synth, synth_cfg, synth_out, out);
        }
        if (pre->parsed()) {
            return cmd_preprocess(*pre, pre_in, pre_out, pre_scope, out);
        }
        if (train_cmd->parsed()) {
            return cmd_train(*train_cmd, train_args, train_data, train_out, out);
        }
        if (infer->parsed()) {
            if (infer_volume.empty() && infer_data.empty()) {
                throw ValidationError("infer: one of --volume or --data is required");
            }
            return cmd_infer(*infer, infer_ck, infer_volume, infer_mask, infer_data, infer_args, infer_out,
                             infer_maps, out);
        }
        if (eval->parsed()) {
            return cmd_evaluate(*eval, eval_cands, eval_anns, eval_scans, eval_keep, eval_out, out);
        }
        return cmd_crossval(*cv, cv_train, cv_extract, cv_data, cv_folds, cv_keep, cv_out, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const TrainingError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const GenerationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace swintempo::cli
