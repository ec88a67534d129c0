#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lanecascade/classifier.hpp"
#include "lanecascade/errors.hpp"
#include "lanecascade/geometry.hpp"
#include "lanecascade/taxonomy.hpp"

namespace lanecascade {

struct EvalCounts {
    std::int64_t matched_points = 0;        // sum of per-image correctly matched points
    std::int64_t gt_points = 0;             // sum of per-image ground-truth points
    std::int64_t false_positive_lanes = 0;  // erroneously detected lanes
    std::int64_t predicted_lanes = 0;
    std::int64_t missed_lanes = 0;  // annotated lanes never identified
    std::int64_t gt_lanes = 0;

    void merge(const EvalCounts& other) {
        matched_points += other.matched_points;
        gt_points += other.gt_points;
        false_positive_lanes += other.false_positive_lanes;
        predicted_lanes += other.predicted_lanes;
        missed_lanes += other.missed_lanes;
        gt_lanes += other.gt_lanes;
    }
};

struct MatchConfig {
    double threshold_px = 20.0;      // strict horizontal distance bound for a point match
    double fraction_cutoff = 0.85;   // assigned pred lanes matching less than this fraction
                                     // of their gt's points count as false positives

    void validate() const {
        if (threshold_px <= 0.0) throw InvalidArgumentError("match threshold must be positive");
        if (fraction_cutoff < 0.0 || fraction_cutoff > 1.0)
            throw InvalidArgumentError("fraction cutoff must be in [0,1]");
    }
};

struct LaneMatchResult {
    EvalCounts counts;
    std::vector<std::pair<int, int>> assignments;  // (pred index, gt index), original indices
    std::vector<int> false_positive_preds;
    std::vector<int> missed_gts;
};

namespace detail {

struct AssignScore {
    std::int64_t matched = 0;
    int good = 0;
    int assigned = 0;

    bool operator>(const AssignScore& o) const {
        if (matched != o.matched) return matched > o.matched;
        if (good != o.good) return good > o.good;
        return assigned > o.assigned;
    }
};

}  // namespace detail

// One image's lane-level matching. Assigns each ground-truth lane at most one
// distinct predicted lane (only pairs sharing at least one matched point are
// assignable) so as to maximize, lexicographically: total matched points, then
// pairs meeting the fraction cutoff, then assigned pairs. All three count
// outputs are determined by the optimum, so the result is invariant to lane
// ordering on both sides. Lanes with zero points are dropped up front.
inline LaneMatchResult match_lanes(const std::vector<Polyline>& pred, const std::vector<Polyline>& gt,
                                   const MatchConfig& config = {}) {
    config.validate();
    std::vector<int> pred_idx, gt_idx;
    for (int i = 0; i < static_cast<int>(pred.size()); ++i)
        if (pred[static_cast<std::size_t>(i)].point_count() > 0) pred_idx.push_back(i);
    for (int i = 0; i < static_cast<int>(gt.size()); ++i)
        if (gt[static_cast<std::size_t>(i)].point_count() > 0) gt_idx.push_back(i);
    const int np = static_cast<int>(pred_idx.size()), ng = static_cast<int>(gt_idx.size());

    LaneMatchResult result;
    result.counts.predicted_lanes = np;
    result.counts.gt_lanes = ng;
    for (int g = 0; g < ng; ++g)
        result.counts.gt_points += gt[static_cast<std::size_t>(gt_idx[static_cast<std::size_t>(g)])].point_count();

    // Pairwise matched-point counts.
    std::vector<std::vector<std::int64_t>> matched(static_cast<std::size_t>(np),
                                                   std::vector<std::int64_t>(static_cast<std::size_t>(ng), 0));
    std::vector<std::vector<char>> good(static_cast<std::size_t>(np),
                                        std::vector<char>(static_cast<std::size_t>(ng), 0));
    for (int p = 0; p < np; ++p)
        for (int g = 0; g < ng; ++g) {
            const auto& pl = pred[static_cast<std::size_t>(pred_idx[static_cast<std::size_t>(p)])];
            const auto& gl = gt[static_cast<std::size_t>(gt_idx[static_cast<std::size_t>(g)])];
            const PointMatch pm = point_match_count(pl, gl, config.threshold_px);
            matched[static_cast<std::size_t>(p)][static_cast<std::size_t>(g)] = pm.matched;
            good[static_cast<std::size_t>(p)][static_cast<std::size_t>(g)] =
                static_cast<double>(pm.matched) >= config.fraction_cutoff * static_cast<double>(gl.point_count());
        }

    // Exhaustive search over injective gt->pred assignments; the operating
    // range is at most 4x4 lanes, so enumeration is cheap.
    std::vector<int> current(static_cast<std::size_t>(ng), -1), best_assign(static_cast<std::size_t>(ng), -1);
    std::vector<char> used(static_cast<std::size_t>(np), 0);
    detail::AssignScore best;
    best.assigned = -1;  // any real assignment (even empty) beats the sentinel
    detail::AssignScore cur;
    auto recurse = [&](auto&& self, int g) -> void {
        if (g == ng) {
            if (best.assigned < 0 || cur > best) {
                best = cur;
                best_assign = current;
            }
            return;
        }
        self(self, g + 1);  // leave gt g unmatched
        for (int p = 0; p < np; ++p) {
            if (used[static_cast<std::size_t>(p)] ||
                matched[static_cast<std::size_t>(p)][static_cast<std::size_t>(g)] <= 0)
                continue;
            used[static_cast<std::size_t>(p)] = 1;
            current[static_cast<std::size_t>(g)] = p;
            cur.matched += matched[static_cast<std::size_t>(p)][static_cast<std::size_t>(g)];
            cur.good += good[static_cast<std::size_t>(p)][static_cast<std::size_t>(g)];
            cur.assigned += 1;
            self(self, g + 1);
            used[static_cast<std::size_t>(p)] = 0;
            current[static_cast<std::size_t>(g)] = -1;
            cur.matched -= matched[static_cast<std::size_t>(p)][static_cast<std::size_t>(g)];
            cur.good -= good[static_cast<std::size_t>(p)][static_cast<std::size_t>(g)];
            cur.assigned -= 1;
        }
    };
    recurse(recurse, 0);

    std::vector<char> pred_assigned_good(static_cast<std::size_t>(np), 0);
    std::vector<char> pred_assigned(static_cast<std::size_t>(np), 0);
    for (int g = 0; g < ng; ++g) {
        const int p = best_assign[static_cast<std::size_t>(g)];
        if (p < 0) {
            result.missed_gts.push_back(gt_idx[static_cast<std::size_t>(g)]);
            ++result.counts.missed_lanes;
            continue;
        }
        result.assignments.emplace_back(pred_idx[static_cast<std::size_t>(p)], gt_idx[static_cast<std::size_t>(g)]);
        result.counts.matched_points += matched[static_cast<std::size_t>(p)][static_cast<std::size_t>(g)];
        pred_assigned[static_cast<std::size_t>(p)] = 1;
        pred_assigned_good[static_cast<std::size_t>(p)] = good[static_cast<std::size_t>(p)][static_cast<std::size_t>(g)];
    }
    for (int p = 0; p < np; ++p)
        if (!pred_assigned[static_cast<std::size_t>(p)] || !pred_assigned_good[static_cast<std::size_t>(p)]) {
            result.false_positive_preds.push_back(pred_idx[static_cast<std::size_t>(p)]);
            ++result.counts.false_positive_lanes;
        }
    return result;
}

// Fraction of ground-truth points correctly matched.
inline double accuracy(const EvalCounts& counts) {
    if (counts.gt_points == 0) throw UndefinedMetricError("accuracy undefined: no ground-truth points");
    return static_cast<double>(counts.matched_points) / static_cast<double>(counts.gt_points);
}

// Erroneously detected lanes over predicted lanes; no predictions means no
// false positives.
inline double fp_rate(const EvalCounts& counts) {
    if (counts.predicted_lanes == 0) return 0.0;
    return static_cast<double>(counts.false_positive_lanes) / static_cast<double>(counts.predicted_lanes);
}

// Unidentified lanes over annotated lanes.
inline double fn_rate(const EvalCounts& counts) {
    if (counts.gt_lanes == 0) throw UndefinedMetricError("fn rate undefined: no annotated lanes");
    return static_cast<double>(counts.missed_lanes) / static_cast<double>(counts.gt_lanes);
}

// Exact-match fraction after remapping; ignored labels are excluded.
inline double classification_accuracy(const std::vector<int>& predicted, const std::vector<ClassLabel>& labels,
                                      TaxonomyScheme scheme) {
    if (predicted.size() != labels.size())
        throw InvalidArgumentError("classification_accuracy: prediction/label count mismatch");
    std::int64_t counted = 0, correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto target = remap_class(labels[i], scheme);
        if (!target) continue;
        ++counted;
        if (predicted[i] == *target) ++correct;
    }
    if (counted == 0) throw UndefinedMetricError("classification accuracy undefined: every label is ignored");
    return static_cast<double>(correct) / static_cast<double>(counted);
}

struct MetricsConfigEcho {
    double threshold_px = 20.0;
    double fraction_cutoff = 0.85;
    int min_points = 3;
    int eval_width = 512;
    int eval_height = 256;
    bool rescale_to_native = false;
};

struct MetricsReport {
    double accuracy = 0.0;
    double fp_rate = 0.0;
    double fn_rate = 0.0;
    std::vector<EvalCounts> per_image;
    EvalCounts totals;
    MetricsConfigEcho config;

    std::string to_text() const {
        std::ostringstream os;
        os << "evaluation report\n";
        os << "  images:          " << per_image.size() << "\n";
        os << "  accuracy:        " << accuracy << "\n";
        os << "  fp_rate:         " << fp_rate << "\n";
        os << "  fn_rate:         " << fn_rate << "\n";
        os << "  matched_points:  " << totals.matched_points << "/" << totals.gt_points << "\n";
        os << "  predicted_lanes: " << totals.predicted_lanes << " (fp " << totals.false_positive_lanes << ")\n";
        os << "  gt_lanes:        " << totals.gt_lanes << " (missed " << totals.missed_lanes << ")\n";
        os << "  config: threshold_px=" << config.threshold_px << " fraction_cutoff=" << config.fraction_cutoff
           << " min_points=" << config.min_points << " eval_resolution=" << config.eval_width << "x"
           << config.eval_height << " rescale_to_native=" << (config.rescale_to_native ? "true" : "false") << "\n";
        return os.str();
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "metric,value\n";
        os << "accuracy," << accuracy << "\n";
        os << "fp_rate," << fp_rate << "\n";
        os << "fn_rate," << fn_rate << "\n";
        return os.str();
    }
};

// One cell of the descriptor-size ablation grid.
struct AblationCell {
    int size = 0;
    TaxonomyScheme scheme = TaxonomyScheme::two_class;
    std::optional<double> accuracy;
    std::string error;  // set when this cell's training failed
};

inline std::string ablation_table_csv(const std::vector<AblationCell>& cells) {
    std::ostringstream os;
    os << "size,scheme,accuracy\n";
    for (const auto& cell : cells) {
        os << cell.size << "," << scheme_token(cell.scheme) << ",";
        if (cell.accuracy)
            os << *cell.accuracy;
        else
            os << "error:" << cell.error;
        os << "\n";
    }
    return os.str();
}

}  // namespace lanecascade
