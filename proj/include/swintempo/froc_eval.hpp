#pragma once

#include "swintempo/candidate_extract.hpp"
#include "swintempo/volume_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace swintempo {

/// False positives per scan at which sensitivity is reported.
inline constexpr std::array<double, 7> kFrocRates = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

/// Ignored is only produced for duplicate hits when duplicates are not counted as FPs.
enum class MatchLabel { TruePositive, FalsePositive, Ignored };

struct MatchOptions {
    bool duplicates_as_fp = true;
};

struct MatchResult {
    std::vector<MatchLabel> labels;      // per candidate, input order
    std::vector<long> matched;           // annotation index or -1, per candidate
    std::vector<bool> detected;          // per annotation

    std::size_t true_positives() const;
    std::size_t false_positives() const;
    std::size_t false_negatives() const;
};

/// A candidate hits an annotation when its centre lies strictly within diameter/2.
bool is_hit(const NoduleCandidate& candidate, const Annotation& annotation);

/// Greedy matching in descending probability (ties by input order). A candidate claims the
/// nearest unclaimed annotation it hits; one that only hits claimed annotations is a
/// duplicate. Candidates and annotations are assumed to belong to one series.
MatchResult match(std::span<const NoduleCandidate> candidates, std::span<const Annotation> annotations,
                  const MatchOptions& options = {});

/// TP / (TP + FN). Throws UndefinedInputError when both are zero.
double sensitivity(std::size_t tp, std::size_t fn);

/// A matched candidate reduced to what the threshold sweep needs.
struct ScoredCandidate {
    double probability = 0.0;
    MatchLabel label = MatchLabel::FalsePositive;
};

struct FrocPoint {
    double threshold = 0.0;
    double fp_per_scan = 0.0;
    double sensitivity = 0.0;
};

struct FROCReport {
    /// One point per distinct candidate score, from the highest threshold down.
    std::vector<FrocPoint> curve;
    std::array<double, 7> sensitivities{};
    double cpm = 0.0;
    std::size_t n_scans = 0;
    std::size_t total_annotations = 0;
    /// Annotations hit by any candidate at all.
    std::size_t detected = 0;

    double detection_ratio() const;
    std::string to_json() const;
};

/// Global threshold sweep. Sensitivity at rate f is the best sensitivity among operating
/// points with fp_per_scan <= f (0 when none qualifies).
FROCReport froc(std::span<const ScoredCandidate> scored, std::size_t total_annotations, std::size_t n_scans);

/// Matches every series independently and sweeps over the pooled scores. Annotations of
/// series without candidates count as misses.
FROCReport evaluate(std::span<const NoduleCandidate> candidates, std::span<const Annotation> annotations,
                    std::size_t n_scans, const MatchOptions& options = {});

/// Writes the report JSON and an SVG FROC plot next to it (same stem, `.svg`).
void write_report(const FROCReport& report, const std::filesystem::path& json_path);
std::string froc_svg(const FROCReport& report);

/// Seeded shuffle then round-robin assignment; fold sizes differ by at most one.
std::vector<std::vector<std::string>> kfold_split(std::span<const std::string> series_ids, std::size_t k,
                                                  std::uint64_t seed);

}  // namespace swintempo
