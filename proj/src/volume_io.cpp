#include "swintempo/volume_io.hpp"

#include "swintempo/errors.hpp"
#include "swintempo/random.hpp"
#include "swintempo/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace swintempo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kAnnotationHeader = "series_id,coord_x,coord_y,coord_z,diameter_mm";
constexpr int kPlacementAttempts = 2000;

fs::path with_extension(const fs::path& path, const char* ext) {
    fs::path p = path;
    if (p.extension() == ".json" || p.extension() == ".raw") {
        p.replace_extension(ext);
    } else {
        p += ext;
    }
    return p;
}

std::uint32_t to_little_endian(std::uint32_t bits) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((bits & 0xFFU) << 24) | ((bits & 0xFF00U) << 8) | ((bits >> 8) & 0xFF00U) | (bits >> 24);
    }
    return bits;
}

Extent3 parse_extent(const json& node, const std::string& where) {
    if (!node.is_array() || node.size() != 3) {
        throw FormatError(where + ": expected a 3-element array");
    }
    Extent3 out{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!node[i].is_number_integer() || node[i].get<long long>() < 0) {
            throw FormatError(where + ": expected non-negative integers");
        }
        out[i] = node[i].get<std::size_t>();
    }
    return out;
}

Axis3 parse_axis(const json& node, const std::string& where) {
    if (!node.is_array() || node.size() != 3) {
        throw FormatError(where + ": expected a 3-element array");
    }
    Axis3 out{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!node[i].is_number()) {
            throw FormatError(where + ": expected numbers");
        }
        out[i] = node[i].get<double>();
    }
    return out;
}

std::string series_name(const PhantomConfig& config, std::size_t index) {
    std::ostringstream out;
    out << config.series_prefix << '_' << config.seed << '_' << std::setw(3) << std::setfill('0') << index;
    return out.str();
}

}  // namespace

double distance_mm(const WorldPoint& a, const WorldPoint& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

WorldPoint CTVolume::voxel_to_world(double z, double y, double x) const {
    return WorldPoint{origin_mm[2] + x * spacing_mm[2], origin_mm[1] + y * spacing_mm[1],
                      origin_mm[0] + z * spacing_mm[0]};
}

void CTVolume::validate() const {
    for (std::size_t i = 0; i < 3; ++i) {
        if (shape[i] < 1) {
            throw ValidationError("volume '" + series_id + "': every dimension must be >= 1");
        }
        if (!(spacing_mm[i] > 0.0) || !std::isfinite(spacing_mm[i])) {
            throw ValidationError("volume '" + series_id + "': spacing must be positive");
        }
        if (!std::isfinite(origin_mm[i])) {
            throw ValidationError("volume '" + series_id + "': origin must be finite");
        }
    }
    if (voxels.size() != shape[0] * shape[1] * shape[2]) {
        throw ValidationError("volume '" + series_id + "': voxel count does not match shape");
    }
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        if (!std::isfinite(voxels[i])) {
            throw ValidationError("volume '" + series_id + "': non-finite voxel at flat index " +
                                  std::to_string(i));
        }
    }
}

std::size_t BinaryVolume::count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

CTVolume read_volume(const fs::path& path) {
    const fs::path sidecar = with_extension(path, ".json");
    const fs::path payload = with_extension(path, ".raw");

    json meta;
    try {
        meta = json::parse(text::read_file(sidecar.string()));
    } catch (const json::exception& e) {
        throw FormatError("volume sidecar '" + sidecar.string() + "': " + e.what());
    }
    CTVolume volume;
    try {
        volume.series_id = meta.at("series_id").get<std::string>();
        volume.shape = parse_extent(meta.at("shape"), sidecar.string() + " shape");
        volume.spacing_mm = parse_axis(meta.at("spacing_mm"), sidecar.string() + " spacing_mm");
        volume.origin_mm = parse_axis(meta.at("origin_mm"), sidecar.string() + " origin_mm");
        volume.preprocessed = meta.value("preprocessed", false);
    } catch (const json::exception& e) {
        throw FormatError("volume sidecar '" + sidecar.string() + "': " + e.what());
    }

    const std::size_t count = volume.shape[0] * volume.shape[1] * volume.shape[2];
    std::ifstream in(payload, std::ios::binary);
    if (!in) {
        throw FormatError("volume payload '" + payload.string() + "' is missing");
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != count * 4) {
        throw FormatError("volume payload '" + payload.string() + "' has " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(count * 4));
    }
    volume.voxels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        std::memcpy(&bits, bytes.data() + 4 * i, 4);
        volume.voxels[i] = std::bit_cast<float>(to_little_endian(bits));
    }
    try {
        volume.validate();
    } catch (const ValidationError& e) {
        throw FormatError(std::string("volume '") + path.string() + "': " + e.what());
    }
    return volume;
}

void write_volume(const CTVolume& volume, const fs::path& path) {
    volume.validate();
    const fs::path sidecar = with_extension(path, ".json");
    const fs::path payload = with_extension(path, ".raw");

    json meta;
    meta["series_id"] = volume.series_id;
    meta["shape"] = volume.shape;
    meta["spacing_mm"] = volume.spacing_mm;
    meta["origin_mm"] = volume.origin_mm;
    if (volume.preprocessed) {
        meta["preprocessed"] = true;
    }

    std::string bytes(volume.voxels.size() * 4, '\0');
    for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
        const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(volume.voxels[i]));
        std::memcpy(bytes.data() + 4 * i, &bits, 4);
    }
    text::write_file(payload.string(), bytes);
    text::write_file(sidecar.string(), meta.dump(2) + "\n");
}

LungMask read_mask(const fs::path& path) {
    const CTVolume volume = read_volume(path);
    LungMask mask(volume.shape);
    for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
        const float v = volume.voxels[i];
        if (v != 0.0F && v != 1.0F) {
            throw FormatError("mask '" + path.string() + "': values must be 0 or 1");
        }
        mask.data[i] = v == 1.0F ? 1 : 0;
    }
    return mask;
}

void write_mask(const LungMask& mask, const CTVolume& geometry, const fs::path& path) {
    if (mask.shape != geometry.shape) {
        throw ValidationError("write_mask: mask shape differs from its volume");
    }
    CTVolume out;
    out.series_id = geometry.series_id;
    out.shape = geometry.shape;
    out.spacing_mm = geometry.spacing_mm;
    out.origin_mm = geometry.origin_mm;
    out.voxels.assign(mask.data.begin(), mask.data.end());
    write_volume(out, path);
}

std::vector<Annotation> read_annotations(const fs::path& path) {
    const std::string contents = text::read_file(path.string());
    std::vector<Annotation> out;
    std::istringstream in(contents);
    std::string line;
    std::size_t line_number = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_number;
        const std::string_view row = text::trim(line);
        if (row.empty()) {
            continue;
        }
        if (!header_seen) {
            if (row != kAnnotationHeader) {
                throw FormatError(path.string() + ":" + std::to_string(line_number) + ": expected header '" +
                                  kAnnotationHeader + "'");
            }
            header_seen = true;
            continue;
        }
        const auto fields = text::split(row, ',');
        Annotation a;
        double values[4] = {};
        bool ok = fields.size() == 5 && !text::trim(fields[0]).empty();
        for (std::size_t i = 0; ok && i < 4; ++i) {
            ok = text::parse_double(fields[i + 1], values[i]) && std::isfinite(values[i]);
        }
        if (!ok) {
            throw FormatError(path.string() + ":" + std::to_string(line_number) + ": malformed annotation row");
        }
        a.series_id = std::string(text::trim(fields[0]));
        a.center_mm = WorldPoint{values[0], values[1], values[2]};
        a.diameter_mm = values[3];
        if (!(a.diameter_mm > 0.0)) {
            throw ValidationError(path.string() + ":" + std::to_string(line_number) +
                                  ": diameter_mm must be positive");
        }
        out.push_back(std::move(a));
    }
    if (!header_seen) {
        throw FormatError(path.string() + ": missing header");
    }
    return out;
}

void write_annotations(std::span<const Annotation> annotations, const fs::path& path) {
    std::string out = std::string(kAnnotationHeader) + "\n";
    for (const auto& a : annotations) {
        out += a.series_id + "," + text::format_double(a.center_mm.x) + "," + text::format_double(a.center_mm.y) +
               "," + text::format_double(a.center_mm.z) + "," + text::format_double(a.diameter_mm) + "\n";
    }
    text::write_file(path.string(), out);
}

BinaryVolume rasterize_annotations(const Extent3& shape, const Axis3& spacing_mm, const Axis3& origin_mm,
                                   std::span<const Annotation> annotations) {
    for (double s : spacing_mm) {
        if (!(s > 0.0)) {
            throw ValidationError("rasterize_annotations: spacing must be positive");
        }
    }
    BinaryVolume mask(shape);
    for (const auto& a : annotations) {
        const double radius = a.diameter_mm / 2.0;
        const double center[3] = {a.center_mm.z, a.center_mm.y, a.center_mm.x};
        std::ptrdiff_t lo[3];
        std::ptrdiff_t hi[3];
        bool empty = false;
        for (std::size_t axis = 0; axis < 3; ++axis) {
            const double c = (center[axis] - origin_mm[axis]) / spacing_mm[axis];
            const double r = radius / spacing_mm[axis];
            lo[axis] = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(c - r)));
            hi[axis] = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(shape[axis]) - 1,
                                                static_cast<std::ptrdiff_t>(std::ceil(c + r)));
            empty = empty || lo[axis] > hi[axis];
        }
        if (empty) {
            continue;
        }
        const double r2 = radius * radius;
        for (std::ptrdiff_t z = lo[0]; z <= hi[0]; ++z) {
            const double dz = origin_mm[0] + static_cast<double>(z) * spacing_mm[0] - center[0];
            for (std::ptrdiff_t y = lo[1]; y <= hi[1]; ++y) {
                const double dy = origin_mm[1] + static_cast<double>(y) * spacing_mm[1] - center[1];
                for (std::ptrdiff_t x = lo[2]; x <= hi[2]; ++x) {
                    const double dx = origin_mm[2] + static_cast<double>(x) * spacing_mm[2] - center[2];
                    if (dx * dx + dy * dy + dz * dz <= r2) {
                        mask.data[mask.index(static_cast<std::size_t>(z), static_cast<std::size_t>(y),
                                             static_cast<std::size_t>(x))] = 1;
                    }
                }
            }
        }
    }
    return mask;
}

void PhantomConfig::validate() const {
    if (n_volumes == 0) {
        throw ValidationError("phantom: n_volumes must be >= 1");
    }
    for (auto d : shape) {
        if (d < 8) {
            throw ValidationError("phantom: every shape component must be >= 8");
        }
    }
    for (double s : spacing_mm) {
        if (!(s > 0.0)) {
            throw ValidationError("phantom: spacing must be positive");
        }
    }
    if (nodules_per_volume.first < 0 || nodules_per_volume.first > nodules_per_volume.second) {
        throw ValidationError("phantom: nodules_per_volume range is empty");
    }
    if (!(nodule_radius_mm.first > 0.0) || nodule_radius_mm.first > nodule_radius_mm.second) {
        throw ValidationError("phantom: nodule_radius_mm range is empty or non-positive");
    }
    if (!(background_texture >= 0.0)) {
        throw ValidationError("phantom: background_texture must be non-negative");
    }
}

std::vector<PhantomCase> generate_phantom(const PhantomConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const auto [nz, ny, nx] = config.shape;
    const double cz = (static_cast<double>(nz) - 1.0) / 2.0;
    const double cy = (static_cast<double>(ny) - 1.0) / 2.0;
    const double cx = (static_cast<double>(nx) - 1.0) / 2.0;
    const double body_ax = 0.46 * static_cast<double>(nx);
    const double body_ay = 0.40 * static_cast<double>(ny);
    const double lung_ax = 0.17 * static_cast<double>(nx);
    const double lung_ay = 0.30 * static_cast<double>(ny);
    const double lung_az = 0.60 * static_cast<double>(nz);
    const double lung_offset = 0.22 * static_cast<double>(nx);

    const auto in_lung = [&](double z, double y, double x) {
        for (double side : {-1.0, 1.0}) {
            const double ex = (x - (cx + side * lung_offset)) / lung_ax;
            const double ey = (y - cy) / lung_ay;
            const double ez = (z - cz) / lung_az;
            if (ex * ex + ey * ey + ez * ez <= 1.0) {
                return true;
            }
        }
        return false;
    };

    std::vector<PhantomCase> cases;
    cases.reserve(config.n_volumes);
    for (std::size_t v = 0; v < config.n_volumes; ++v) {
        PhantomCase pc;
        CTVolume& vol = pc.volume;
        vol.series_id = series_name(config, v);
        vol.shape = config.shape;
        vol.spacing_mm = config.spacing_mm;
        for (std::size_t axis = 0; axis < 3; ++axis) {
            vol.origin_mm[axis] = -(static_cast<double>(config.shape[axis]) - 1.0) * config.spacing_mm[axis] / 2.0;
        }

        pc.lung_mask = LungMask(config.shape);
        for (std::size_t z = 0; z < nz; ++z) {
            for (std::size_t y = 0; y < ny; ++y) {
                for (std::size_t x = 0; x < nx; ++x) {
                    if (in_lung(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x))) {
                        pc.lung_mask.data[pc.lung_mask.index(z, y, x)] = 1;
                    }
                }
            }
        }

        // Place nodules: fully inside the lung mask and inside the grid, pairwise disjoint.
        const auto count = rng.uniform_int(config.nodules_per_volume.first, config.nodules_per_volume.second);
        for (std::int64_t n = 0; n < count; ++n) {
            bool placed = false;
            for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
                const double radius = rng.uniform(config.nodule_radius_mm.first, config.nodule_radius_mm.second);
                const double pz = rng.uniform(0.0, static_cast<double>(nz) - 1.0);
                const double py = rng.uniform(0.0, static_cast<double>(ny) - 1.0);
                const double px = rng.uniform(0.0, static_cast<double>(nx) - 1.0);
                const WorldPoint center = vol.voxel_to_world(pz, py, px);

                const double extent[3] = {pz, py, px};
                bool fits = true;
                for (std::size_t axis = 0; axis < 3 && fits; ++axis) {
                    const double r = radius / config.spacing_mm[axis];
                    fits = extent[axis] - r >= 0.0 && extent[axis] + r <= static_cast<double>(config.shape[axis]) - 1.0;
                }
                for (const auto& other : pc.annotations) {
                    if (!fits) {
                        break;
                    }
                    fits = distance_mm(center, other.center_mm) > radius + other.diameter_mm / 2.0 + 1.0;
                }
                if (!fits) {
                    continue;
                }
                const Annotation candidate{vol.series_id, center, 2.0 * radius};
                const BinaryVolume sphere = rasterize_annotations(vol.shape, vol.spacing_mm, vol.origin_mm,
                                                                  std::span<const Annotation>(&candidate, 1));
                bool inside = sphere.count() > 0;
                for (std::size_t i = 0; i < sphere.data.size() && inside; ++i) {
                    inside = !sphere.data[i] || pc.lung_mask.data[i];
                }
                if (inside) {
                    pc.annotations.push_back(candidate);
                    placed = true;
                }
            }
            if (!placed) {
                throw GenerationError("phantom '" + vol.series_id + "': could not place nodule " +
                                      std::to_string(n + 1) + " without overlap");
            }
        }
        pc.nodule_voxels = rasterize_annotations(vol.shape, vol.spacing_mm, vol.origin_mm, pc.annotations);

        vol.voxels.resize(nz * ny * nx);
        for (std::size_t z = 0; z < nz; ++z) {
            for (std::size_t y = 0; y < ny; ++y) {
                for (std::size_t x = 0; x < nx; ++x) {
                    const std::size_t i = vol.index(z, y, x);
                    float base = kAirHu;
                    const double ex = (static_cast<double>(x) - cx) / body_ax;
                    const double ey = (static_cast<double>(y) - cy) / body_ay;
                    if (ex * ex + ey * ey <= 1.0) {
                        base = kTissueHu;
                    }
                    if (pc.lung_mask.data[i]) {
                        base = kLungHu;
                    }
                    if (pc.nodule_voxels.data[i]) {
                        base = kNoduleHu;
                    }
                    vol.voxels[i] = static_cast<float>(base + config.background_texture * rng.normal());
                }
            }
        }
        cases.push_back(std::move(pc));
    }
    return cases;
}

std::vector<DatasetEntry> list_dataset(const fs::path& directory) {
    if (!fs::is_directory(directory)) {
        throw IoError("dataset directory '" + directory.string() + "' does not exist");
    }
    std::vector<DatasetEntry> entries;
    for (const auto& item : fs::directory_iterator(directory)) {
        const fs::path p = item.path();
        if (p.extension() != ".json") {
            continue;
        }
        const std::string stem = p.stem().string();
        if (stem.ends_with("_mask") || stem == "config" || stem.starts_with("manifest")) {
            continue;
        }
        if (!fs::exists(with_extension(p, ".raw"))) {
            continue;
        }
        DatasetEntry entry;
        entry.series_id = stem;
        entry.volume = p;
        const fs::path mask = directory / (stem + "_mask.json");
        if (fs::exists(mask)) {
            entry.mask = mask;
        }
        entries.push_back(std::move(entry));
    }
    std::sort(entries.begin(), entries.end(),
              [](const DatasetEntry& a, const DatasetEntry& b) { return a.series_id < b.series_id; });
    return entries;
}

fs::path dataset_annotations(const fs::path& directory) { return directory / "annotations.csv"; }

void write_dataset(std::span<const PhantomCase> cases, const fs::path& directory) {
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec) {
        throw IoError("cannot create '" + directory.string() + "': " + ec.message());
    }
    std::vector<Annotation> all;
    for (const auto& pc : cases) {
        write_volume(pc.volume, directory / (pc.volume.series_id + ".json"));
        write_mask(pc.lung_mask, pc.volume, directory / (pc.volume.series_id + "_mask.json"));
        all.insert(all.end(), pc.annotations.begin(), pc.annotations.end());
    }
    write_annotations(all, dataset_annotations(directory));
}

}  // namespace swintempo
