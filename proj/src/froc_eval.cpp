#include "swintempo/froc_eval.hpp"

#include "swintempo/errors.hpp"
#include "swintempo/random.hpp"
#include "swintempo/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace swintempo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<const char*, 7> kRateKeys = {"0.125", "0.25", "0.5", "1", "2", "4", "8"};

}  // namespace

std::size_t MatchResult::true_positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), MatchLabel::TruePositive));
}

std::size_t MatchResult::false_positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), MatchLabel::FalsePositive));
}

std::size_t MatchResult::false_negatives() const {
    return static_cast<std::size_t>(std::count(detected.begin(), detected.end(), false));
}

bool is_hit(const NoduleCandidate& candidate, const Annotation& annotation) {
    return distance_mm(candidate.center_mm, annotation.center_mm) < annotation.diameter_mm / 2.0;
}

MatchResult match(std::span<const NoduleCandidate> candidates, std::span<const Annotation> annotations,
                  const MatchOptions& options) {
    MatchResult r;
    r.labels.assign(candidates.size(), MatchLabel::FalsePositive);
    r.matched.assign(candidates.size(), -1);
    r.detected.assign(annotations.size(), false);

    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return candidates[a].probability > candidates[b].probability;
    });
    for (std::size_t i : order) {
        long best = -1;
        double best_distance = 0.0;
        bool duplicate = false;
        for (std::size_t a = 0; a < annotations.size(); ++a) {
            if (!is_hit(candidates[i], annotations[a])) {
                continue;
            }
            if (r.detected[a]) {
                duplicate = true;
                continue;
            }
            const double d = distance_mm(candidates[i].center_mm, annotations[a].center_mm);
            if (best < 0 || d < best_distance) {
                best = static_cast<long>(a);
                best_distance = d;
            }
        }
        if (best >= 0) {
            r.labels[i] = MatchLabel::TruePositive;
            r.matched[i] = best;
            r.detected[static_cast<std::size_t>(best)] = true;
        } else if (duplicate && !options.duplicates_as_fp) {
            r.labels[i] = MatchLabel::Ignored;
        }
    }
    return r;
}

double sensitivity(std::size_t tp, std::size_t fn) {
    if (tp + fn == 0) {
        throw UndefinedInputError("sensitivity: no annotated nodules (TP + FN = 0)");
    }
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double FROCReport::detection_ratio() const {
    return sensitivity(detected, total_annotations - detected);
}

FROCReport froc(std::span<const ScoredCandidate> scored, std::size_t total_annotations, std::size_t n_scans) {
    if (n_scans < 1) {
        throw ValidationError("froc: n_scans must be at least 1");
    }
    if (total_annotations == 0) {
        throw UndefinedInputError("froc: sensitivity is undefined without annotations");
    }
    std::vector<ScoredCandidate> sorted(scored.begin(), scored.end());
    for (const auto& s : sorted) {
        if (!(s.probability >= 0.0 && s.probability <= 1.0)) {
            throw ValidationError("froc: candidate probability outside [0, 1]");
        }
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const ScoredCandidate& a, const ScoredCandidate& b) { return a.probability > b.probability; });

    FROCReport report;
    report.n_scans = n_scans;
    report.total_annotations = total_annotations;
    const auto scans = static_cast<double>(n_scans);
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        const double threshold = sorted[i].probability;
        for (; i < sorted.size() && sorted[i].probability == threshold; ++i) {
            if (sorted[i].label == MatchLabel::TruePositive) {
                ++tp;
            } else if (sorted[i].label == MatchLabel::FalsePositive) {
                ++fp;
            }
        }
        if (tp > total_annotations) {
            throw ValidationError("froc: more true positives than annotations");
        }
        report.curve.push_back({threshold, static_cast<double>(fp) / scans, sensitivity(tp, total_annotations - tp)});
    }
    report.detected = tp;
    double total = 0.0;
    for (std::size_t r = 0; r < kFrocRates.size(); ++r) {
        double best = 0.0;
        for (const auto& p : report.curve) {
            if (p.fp_per_scan <= kFrocRates[r]) {
                best = std::max(best, p.sensitivity);
            }
        }
        report.sensitivities[r] = best;
        total += best;
    }
    report.cpm = total / static_cast<double>(kFrocRates.size());
    return report;
}

FROCReport evaluate(std::span<const NoduleCandidate> candidates, std::span<const Annotation> annotations,
                    std::size_t n_scans, const MatchOptions& options) {
    std::map<std::string, std::pair<std::vector<NoduleCandidate>, std::vector<Annotation>>> series;
    for (const auto& c : candidates) {
        series[c.series_id].first.push_back(c);
    }
    for (const auto& a : annotations) {
        series[a.series_id].second.push_back(a);
    }
    std::vector<ScoredCandidate> scored;
    for (const auto& [id, group] : series) {
        const MatchResult m = match(group.first, group.second, options);
        for (std::size_t i = 0; i < group.first.size(); ++i) {
            scored.push_back({group.first[i].probability, m.labels[i]});
        }
    }
    return froc(scored, annotations.size(), n_scans);
}

std::string FROCReport::to_json() const {
    json j;
    json sens = json::object();
    for (std::size_t r = 0; r < kRateKeys.size(); ++r) {
        sens[kRateKeys[r]] = sensitivities[r];
    }
    j["sensitivities"] = std::move(sens);
    j["cpm"] = cpm;
    json points = json::array();
    for (const auto& p : curve) {
        points.push_back({p.fp_per_scan, p.sensitivity});
    }
    j["curve"] = std::move(points);
    json thresholds = json::array();
    for (const auto& p : curve) {
        thresholds.push_back(p.threshold);
    }
    j["thresholds"] = std::move(thresholds);
    j["n_scans"] = n_scans;
    j["total_annotations"] = total_annotations;
    j["detected"] = detected;
    j["detection_ratio"] = detection_ratio();
    return j.dump(2);
}

std::string froc_svg(const FROCReport& report) {
    constexpr double width = 520.0;
    constexpr double height = 380.0;
    constexpr double left = 60.0;
    constexpr double right = 20.0;
    constexpr double top = 40.0;
    constexpr double bottom = 50.0;
    const double pw = width - left - right;
    const double ph = height - top - bottom;
    // log2 axis from 1/8 to 8 FPs per scan.
    auto px = [&](double fp) {
        const double v = std::clamp(std::log2(std::max(fp, 0.125)), -3.0, 3.0);
        return left + (v + 3.0) / 6.0 * pw;
    };
    auto py = [&](double s) { return top + (1.0 - s) * ph; };
    auto num = [](double v) { return text::format_double(std::round(v * 100.0) / 100.0); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">FROC (CPM "
        << text::format_double(std::round(report.cpm * 10000.0) / 10000.0) << ")</text>\n";
    for (std::size_t r = 0; r < kFrocRates.size(); ++r) {
        const double x = px(kFrocRates[r]);
        svg << "<line x1=\"" << num(x) << "\" y1=\"" << top << "\" x2=\"" << num(x) << "\" y2=\"" << top + ph
            << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << num(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << kRateKeys[r]
            << "</text>\n";
    }
    for (int t = 0; t <= 4; ++t) {
        const double s = t / 4.0;
        svg << "<line x1=\"" << left << "\" y1=\"" << num(py(s)) << "\" x2=\"" << left + pw << "\" y2=\""
            << num(py(s)) << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << left - 8 << "\" y=\"" << num(py(s) + 4) << "\" text-anchor=\"end\">"
            << text::format_double(s) << "</text>\n";
    }
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
        << "\" text-anchor=\"middle\">false positives per scan</text>\n";
    svg << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << top + ph / 2 << ")\">sensitivity</text>\n";

    // Step curve: each operating point holds until the next one.
    std::ostringstream path;
    double prev_s = 0.0;
    path << num(px(0.0)) << "," << num(py(0.0));
    for (const auto& p : report.curve) {
        if (p.fp_per_scan > 8.0) {
            break;
        }
        path << " " << num(px(p.fp_per_scan)) << "," << num(py(prev_s));
        path << " " << num(px(p.fp_per_scan)) << "," << num(py(p.sensitivity));
        prev_s = p.sensitivity;
    }
    path << " " << num(px(8.0)) << "," << num(py(prev_s));
    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"" << path.str() << "\"/>\n";
    for (std::size_t r = 0; r < kFrocRates.size(); ++r) {
        svg << "<circle cx=\"" << num(px(kFrocRates[r])) << "\" cy=\"" << num(py(report.sensitivities[r]))
            << "\" r=\"4\" fill=\"#d62728\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_report(const FROCReport& report, const fs::path& json_path) {
    text::write_file(json_path.string(), report.to_json() + "\n");
    fs::path svg = json_path;
    svg.replace_extension(".svg");
    text::write_file(svg.string(), froc_svg(report));
}

std::vector<std::vector<std::string>> kfold_split(std::span<const std::string> series_ids, std::size_t k,
                                                  std::uint64_t seed) {
    if (k < 1 || k > series_ids.size()) {
        throw ValidationError("kfold_split: k=" + std::to_string(k) + " must lie in [1, " +
                              std::to_string(series_ids.size()) + "]");
    }
    std::vector<std::string> ids(series_ids.begin(), series_ids.end());
    std::vector<std::string> unique = ids;
    std::sort(unique.begin(), unique.end());
    if (std::adjacent_find(unique.begin(), unique.end()) != unique.end()) {
        throw ValidationError("kfold_split: duplicate series id");
    }
    Rng rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i) {
        std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    std::vector<std::vector<std::string>> folds(k);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        folds[i % k].push_back(std::move(ids[i]));
    }
    return folds;
}

}  // namespace swintempo
