// Acceptance gates for the cascaded lane pipeline. Each criterion prints one
// [PASS]/[FAIL] line; the process exits nonzero if any gate fails. Gates that
// train models share one trained segmentation network (criterion 4 产 feeds 8
// and 10) so the whole suite stays inside its runtime budgets.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lanecascade/pipeline.hpp"

using namespace lanecascade;

namespace {

constexpr std::uint64_t kRootSeed = 20240815;

struct SharedState {
    std::optional<SegTrainResult> seg_training;
    std::vector<Sample> train_scenes;
    std::vector<Sample> holdout_scenes;
};
SharedState g_shared;

SceneSpec scene_proto() {
    SceneSpec spec;
    spec.width = 128;
    spec.height = 64;
    return spec;
}

std::string fail(const std::string& why) { return why; }

// ---------------------------------------------------------------------------
// Criterion 1: lane matching vs an exhaustive assignment oracle
// ---------------------------------------------------------------------------

Polyline c1_random_lane(Rng& rng) {
    Polyline p;
    for (int r = 0; r < 20; ++r)
        if (rng.uniform() < 0.5) p.push_point(r, rng.uniform() * 250.0);
    if (p.point_count() == 0) p.push_point(10, rng.uniform() * 250.0);
    return p;
}

struct OracleBest {
    std::int64_t matched = -1;
    int good = -1;
    int assigned = -1;
};

OracleBest c1_oracle(const std::vector<Polyline>& pred, const std::vector<Polyline>& gt, const MatchConfig& cfg) {
    const int np = static_cast<int>(pred.size()), ng = static_cast<int>(gt.size());
    std::vector<std::vector<std::int64_t>> matched(np, std::vector<std::int64_t>(ng, 0));
    std::vector<std::vector<bool>> good(np, std::vector<bool>(ng, false));
    for (int p = 0; p < np; ++p)
        for (int g = 0; g < ng; ++g) {
            const auto pm = point_match_count(pred[p], gt[g], cfg.threshold_px);
            matched[p][g] = pm.matched;
            good[p][g] = static_cast<double>(pm.matched) >= cfg.fraction_cutoff * gt[g].point_count();
        }
    OracleBest best;
    std::int64_t total_maps = 1;
    for (int g = 0; g < ng; ++g) total_maps *= np + 1;
    for (std::int64_t code = 0; code < total_maps; ++code) {
        std::int64_t c = code;
        bool feasible = true;
        std::vector<bool> used(np, false);
        std::int64_t m = 0;
        int good_count = 0, assigned = 0;
        for (int g = 0; g < ng && feasible; ++g) {
            const int p = static_cast<int>(c % (np + 1));
            c /= np + 1;
            if (p == np) continue;
            if (used[p] || matched[p][g] <= 0) {
                feasible = false;
                break;
            }
            used[p] = true;
            m += matched[p][g];
            good_count += good[p][g] ? 1 : 0;
            ++assigned;
        }
        if (!feasible) continue;
        if (m > best.matched || (m == best.matched && good_count > best.good) ||
            (m == best.matched && good_count == best.good && assigned > best.assigned))
            best = {m, good_count, assigned};
    }
    return best;
}

std::string criterion1() {
    Rng rng(derive_seed(kRootSeed, "c1", 0));
    MatchConfig cfg;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Polyline> pred, gt;
        const int np = static_cast<int>(rng.uniform_int(0, 4));
        const int ng = static_cast<int>(rng.uniform_int(1, 4));
        for (int i = 0; i < np; ++i) pred.push_back(c1_random_lane(rng));
        for (int i = 0; i < ng; ++i) gt.push_back(c1_random_lane(rng));

        const LaneMatchResult r = match_lanes(pred, gt, cfg);
        const OracleBest o = c1_oracle(pred, gt, cfg);
        std::int64_t gt_points = 0;
        for (const auto& g : gt) gt_points += g.point_count();

        const double oracle_acc = static_cast<double>(o.matched) / static_cast<double>(gt_points);
        const double oracle_fp =
            np == 0 ? 0.0 : static_cast<double>(np - o.good) / static_cast<double>(np);
        const double oracle_fn = static_cast<double>(ng - o.assigned) / static_cast<double>(ng);

        if (r.counts.matched_points != o.matched)
            return fail("trial " + std::to_string(trial) + ": matched points " +
                        std::to_string(r.counts.matched_points) + " vs oracle " + std::to_string(o.matched));
        if (std::abs(accuracy(r.counts) - oracle_acc) > 1e-9 || std::abs(fp_rate(r.counts) - oracle_fp) > 1e-9 ||
            std::abs(fn_rate(r.counts) - oracle_fn) > 1e-9)
            return fail("trial " + std::to_string(trial) + ": a rate deviates from the oracle by more than 1e-9");
    }
    return {};
}

// ---------------------------------------------------------------------------
// Criterion 2: rasterization soundness against a brute-force distance oracle
// ---------------------------------------------------------------------------

double c2_segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
    const double vx = x1 - x0, vy = y1 - y0;
    const double wx = px - x0, wy = py - y0;
    const double c1 = vx * wx + vy * wy;
    if (c1 <= 0.0) return std::hypot(wx, wy);
    const double c2 = vx * vx + vy * vy;
    if (c2 <= c1) return std::hypot(px - x1, py - y1);
    const double t = c1 / c2;
    return std::hypot(px - (x0 + t * vx), py - (y0 + t * vy));
}

double c2_chain_distance(double px, double py, const std::vector<std::pair<int, double>>& pts) {
    double best = std::numeric_limits<double>::infinity();
    if (pts.size() == 1) return std::hypot(px - pts[0].second, py - pts[0].first);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i)
        best = std::min(best, c2_segment_distance(px, py, pts[i].second, pts[i].first, pts[i + 1].second,
                                                  pts[i + 1].first));
    return best;
}

std::string criterion2() {
    Rng rng(derive_seed(kRootSeed, "c2", 0));
    const int W = 512, H = 256;
    const double radius = 2.5, eps = 1e-9;
    int checked_polylines = 0;
    for (int image = 0; checked_polylines < 100; ++image) {
        std::vector<Polyline> polys;
        const int n = static_cast<int>(rng.uniform_int(1, 4));
        for (int i = 0; i < n && checked_polylines + i < 100; ++i) {
            Polyline p;
            for (int r = 0; r < H; ++r)
                if (rng.uniform() < 0.12) p.push_point(r, rng.uniform() * (W - 1));
            while (p.point_count() < 2) {
                Polyline q;
                q.push_point(static_cast<int>(rng.uniform_int(0, H / 2)), rng.uniform() * (W - 1));
                q.push_point(static_cast<int>(rng.uniform_int(H / 2 + 1, H - 1)), rng.uniform() * (W - 1));
                p = q;
            }
            polys.push_back(std::move(p));
        }
        checked_polylines += static_cast<int>(polys.size());

        const InstanceMap map = rasterize_boundaries(polys, 5, W, H);
        std::vector<std::vector<std::pair<int, double>>> pts;
        for (const auto& p : polys) pts.push_back(p.points());

        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int id = map.at(x, y);
                if (id > 0) {
                    const double d = c2_chain_distance(x, y, pts[id - 1]);
                    if (d > radius + eps)
                        return fail("pixel (" + std::to_string(x) + "," + std::to_string(y) + ") labeled " +
                                    std::to_string(id) + " but lies " + std::to_string(d) + " px from its boundary");
                } else {
                    for (std::size_t k = 0; k < pts.size(); ++k) {
                        const double d = c2_chain_distance(x, y, pts[k]);
                        if (d < radius - eps)
                            return fail("pixel (" + std::to_string(x) + "," + std::to_string(y) +
                                        ") unlabeled but lies " + std::to_string(d) + " px inside boundary " +
                                        std::to_string(k + 1));
                    }
                }
            }
    }
    return {};
}

// ---------------------------------------------------------------------------
// Criterion 3: instance-loss identity, permutation invariance, gradients
// ---------------------------------------------------------------------------

std::string criterion3() {
    const InstanceLossConfig cfg;

    // Identity: bit-identical logit columns inside each instance give an
    // exactly zero loss and exactly zero gradients.
    {
        InstanceMap map(8, 8);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) map.at(x, y) = x < 3 ? 1 : (x >= 5 ? 2 : 0);
        nn::Tensor logits({1, kMaxInstances + 1, 8, 8});
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) logits.at(0, map.at(x, y), y, x) = 60.0f;
        const InstanceMap* mp = &map;
        nn::Tensor dlogits;
        const double loss = instance_pair_loss_grad(logits, {mp}, cfg, 5, &dlogits);
        if (loss != 0.0) return fail("identity loss is " + std::to_string(loss) + ", expected exactly 0");
        for (float g : dlogits.data)
            if (g != 0.0f) return fail("identity gradient has a nonzero entry");
    }

    // Channel-permutation invariance over all 120 permutations.
    {
        Rng rng(derive_seed(kRootSeed, "c3_perm", 0));
        InstanceMap map(8, 8);
        for (auto& v : map.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, kMaxInstances));
        nn::Tensor logits({1, kMaxInstances + 1, 8, 8});
        for (auto& v : logits.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));
        InstanceLossConfig pc = cfg;
        pc.pair_budget = 256;
        const InstanceMap* mp = &map;
        const double base = instance_pair_loss_grad(logits, {mp}, pc, 9, nullptr);

        std::array<int, 5> perm = {0, 1, 2, 3, 4};
        int tested = 0;
        do {
            nn::Tensor permuted(logits.shape);
            for (int c = 0; c < 5; ++c)
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) permuted.at(0, perm[c], y, x) = logits.at(0, c, y, x);
            const double loss = instance_pair_loss_grad(permuted, {mp}, pc, 9, nullptr);
            if (std::abs(loss - base) > 1e-6)
                return fail("permutation " + std::to_string(tested) + " shifts the loss by " +
                            std::to_string(std::abs(loss - base)));
            ++tested;
        } while (std::next_permutation(perm.begin(), perm.end()));
        if (tested != 120) return fail("expected 120 permutations, tested " + std::to_string(tested));
    }

    // Analytic gradient vs central finite differences.
    {
        Rng rng(derive_seed(kRootSeed, "c3_fd", 0));
        InstanceMap map(6, 5);
        for (auto& v : map.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
        nn::Tensor logits({1, kMaxInstances + 1, 5, 6});
        for (auto& v : logits.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        InstanceLossConfig fc = cfg;
        fc.pair_budget = 128;
        const InstanceMap* mp = &map;
        nn::Tensor dlogits;
        instance_pair_loss_grad(logits, {mp}, fc, 31, &dlogits);

        double num = 0.0, den_a = 0.0, den_f = 0.0;
        const float h = 1e-2f;
        for (std::size_t i = 0; i < logits.data.size(); ++i) {
            const float orig = logits.data[i];
            logits.data[i] = orig + h;
            const double hi = static_cast<double>(logits.data[i]);
            const double fp = instance_pair_loss_grad(logits, {mp}, fc, 31, nullptr);
            logits.data[i] = orig - h;
            const double lo = static_cast<double>(logits.data[i]);
            const double fm = instance_pair_loss_grad(logits, {mp}, fc, 31, nullptr);
            logits.data[i] = orig;
            const double fd = (fp - fm) / (hi - lo);
            const double an = dlogits.data[i];
            num += (an - fd) * (an - fd);
            den_a += an * an;
            den_f += fd * fd;
        }
        const double rel = std::sqrt(num) / std::max({std::sqrt(den_a), std::sqrt(den_f), 1e-12});
        if (!(rel < 1e-3)) return fail("gradient relative error " + std::to_string(rel) + " is not < 1e-3");
    }
    return {};
}

// ---------------------------------------------------------------------------
// Criterion 4: curriculum training gate on synthetic scenes
// ---------------------------------------------------------------------------

std::string criterion4() {
    const std::uint64_t seed = derive_seed(kRootSeed, "c4", 0);
    g_shared.train_scenes = make_scene_corpus(scene_proto(), 64, derive_seed(seed, "train", 0));
    const auto val_scenes = make_scene_corpus(scene_proto(), 13, derive_seed(seed, "val", 0));
    g_shared.holdout_scenes = make_scene_corpus(scene_proto(), 16, derive_seed(seed, "holdout", 0));

    SegModelConfig mc;
    mc.architecture = SegArch::mini;
    mc.input_width = 128;
    mc.input_height = 64;

    SegTrainConfig tc;
    tc.epochs = 40;
    tc.switch_epoch = 20;
    tc.batch_size = 4;
    tc.augment = false;

    SegTrainResult result = train_segmentation(g_shared.train_scenes, val_scenes, mc, tc, seed);

    const auto& losses = result.report.train_losses;
    if (losses.size() != 40) return fail("expected 40 epochs, got " + std::to_string(losses.size()));
    double best_binary = losses[0];
    for (int e = 0; e < 20; ++e) {
        if (result.report.phases[e] != TrainPhase::binary) return fail("epoch " + std::to_string(e) + " left the warm-up phase early");
        best_binary = std::min(best_binary, losses[e]);
    }
    if (!(best_binary <= 0.5 * losses[0]))
        return fail("warm-up loss only fell from " + std::to_string(losses[0]) + " to " +
                    std::to_string(best_binary) + " in 20 epochs (needs a 50% drop)");
    for (int e = 20; e < 40; ++e) {
        if (result.report.phases[e] != TrainPhase::instance) return fail("epoch " + std::to_string(e) + " is not in the instance phase");
        if (!std::isfinite(losses[e])) return fail("instance-phase loss diverged at epoch " + std::to_string(e));
    }

    // Held-out decoding accuracy at 20 px.
    EvalCounts totals;
    for (const auto& scene : g_shared.holdout_scenes) {
        const NetSample net = materialize_at_network(scene, 128, 64);
        const SegOutput out = result.model.forward(image_to_input(net.image), false);
        const auto decoded = decode_instances(out, 0, 3);
        std::vector<Polyline> pred;
        for (const auto& inst : decoded) pred.push_back(inst.polyline);
        totals.merge(match_lanes(pred, net.boundaries).counts);
    }
    const double acc = accuracy(totals);
    g_shared.seg_training = std::move(result);
    if (!(acc >= 0.90))
        return fail("held-out accuracy " + std::to_string(acc) + " is below the 0.90 gate (binary " +
                    std::to_string(losses[0]) + "->" + std::to_string(best_binary) + ")");
    return {};
}

// ---------------------------------------------------------------------------
// Criterion 5: descriptor identities
// ---------------------------------------------------------------------------

std::string criterion5() {
    Rng rng(derive_seed(kRootSeed, "c5", 0));

    // Exact reshape: a boundary of exactly S*S pixels copies colors verbatim.
    {
        const int S = 8;
        Image image(32, 32);
        for (auto& v : image.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        std::vector<Pixel> pixels;
        for (int k = 0; k < S * S; ++k) pixels.push_back({k % 32, (k * 7) % 32});
        const Descriptor d = extract_descriptor(image, pixels, S);
        for (int k = 0; k < S * S; ++k)
            for (int c = 0; c < 3; ++c)
                if (d.pixels.at(k % S, k / S, c) != image.at(pixels[k].x, pixels[k].y, c))
                    return fail("exact-reshape descriptor differs at sample " + std::to_string(k));
    }

    // Resampling equals the nearest-index oracle for 1000 random lengths.
    for (int trial = 0; trial < 1000; ++trial) {
        const int len = static_cast<int>(rng.uniform_int(1, 5000));
        const int count = static_cast<int>(rng.uniform_int(1, 256));
        const auto idx = resample_indices(len, count);
        if (static_cast<int>(idx.size()) != count) return fail("resample returned the wrong count");
        for (int k = 0; k < count; ++k) {
            const int expect =
                count == 1 ? 0
                           : static_cast<int>(std::floor(static_cast<double>(k) * (len - 1) / (count - 1) + 0.5));
            if (idx[k] != expect)
                return fail("resample(" + std::to_string(len) + "," + std::to_string(count) + ")[" +
                            std::to_string(k) + "] = " + std::to_string(idx[k]) + ", oracle " +
                            std::to_string(expect));
        }
    }

    // Repainting pixels off the boundary never changes the descriptor.
    {
        Image image(64, 48, 90);
        std::vector<Pixel> pixels;
        for (int y = 0; y < 48; ++y) pixels.push_back({y % 64, y});
        const Descriptor before = extract_descriptor(image, pixels, 16);
        Image repainted = image;
        for (int i = 0; i < 500; ++i) {
            const int x = static_cast<int>(rng.uniform_int(0, 63));
            const int y = static_cast<int>(rng.uniform_int(0, 47));
            if (std::find(pixels.begin(), pixels.end(), Pixel{x, y}) != pixels.end()) continue;
            repainted.set_pixel(x, y, 255, 0, 255);
        }
        const Descriptor after = extract_descriptor(repainted, pixels, 16);
        if (before.pixels.data != after.pixels.data)
            return fail("repainting non-boundary pixels changed the descriptor");
    }
    return {};
}

// ---------------------------------------------------------------------------
// Criterion 6: classifier separability gates on ground-truth descriptors
// ---------------------------------------------------------------------------

std::vector<LabeledDescriptor> c6_descriptors(const std::vector<Sample>& scenes, int S, TaxonomyScheme scheme) {
    std::vector<LabeledDescriptor> pairs;
    for (const auto& scene : scenes) {
        const InstanceMap map =
            rasterize_boundaries(scene.boundaries, kBoundaryStrokeWidth, scene.image.width, scene.image.height);
        std::vector<std::vector<Pixel>> by_id(scene.boundaries.size());
        for (int y = 0; y < map.height; ++y)
            for (int x = 0; x < map.width; ++x) {
                const int id = map.at(x, y);
                if (id > 0) by_id[static_cast<std::size_t>(id - 1)].push_back({x, y});
            }
        for (std::size_t i = 0; i < by_id.size(); ++i) {
            if (by_id[i].empty()) continue;
            const auto target = remap_class(scene.classes[i], scheme);
            if (!target) continue;
            pairs.push_back({extract_descriptor(scene.image, by_id[i], S), *target});
        }
    }
    return pairs;
}

std::string c6_gate(TaxonomyScheme scheme, double gate, const std::vector<Sample>& train_scenes,
                    const std::vector<Sample>& eval_scenes) {
    const int S = 32;
    const auto train_pairs = c6_descriptors(train_scenes, S, scheme);
    const auto eval_pairs = c6_descriptors(eval_scenes, S, scheme);
    if (train_pairs.empty() || eval_pairs.empty()) return fail("no descriptors were produced");

    ClsModelConfig mc;
    mc.descriptor_size = S;
    mc.outputs = num_outputs(scheme);
    mc.conv_blocks = {16, 32, 64};
    mc.fc_widths = {64};
    ClsTrainConfig tc;
    tc.learning_rate = 2e-3;
    tc.epochs = 40;
    tc.batch_size = 32;
    tc.seed = derive_seed(kRootSeed, "c6", static_cast<std::uint64_t>(num_outputs(scheme)));

    ClsTrainResult trained = train_classifier(train_pairs, mc, tc);
    const double acc = eval_classifier_accuracy(trained.model, eval_pairs);
    if (!(acc >= gate))
        return fail(std::string(scheme_token(scheme)) + " held-out accuracy " + std::to_string(acc) +
                    " is below the " + std::to_string(gate) + " gate (" + std::to_string(train_pairs.size()) +
                    " train pairs)");
    return {};
}

std::string criterion6() {
    const std::uint64_t seed = derive_seed(kRootSeed, "c6_data", 0);
    const auto train_scenes = make_scene_corpus(scene_proto(), 120, derive_seed(seed, "train", 0));
    const auto eval_scenes = make_scene_corpus(scene_proto(), 40, derive_seed(seed, "eval", 0));

    if (auto e = c6_gate(TaxonomyScheme::two_class, 0.95, train_scenes, eval_scenes); !e.empty()) return e;
    return c6_gate(TaxonomyScheme::three_class, 0.90, train_scenes, eval_scenes);
}

// ---------------------------------------------------------------------------
// Criterion 7: exhaustive class remapping table
// ---------------------------------------------------------------------------

std::string criterion7() {
    using L = ClassLabel;
    struct Row {
        L label;
        std::optional<int> two, three;
    };
    const std::vector<Row> table = {
        {L::single_white_continuous, 0, 0}, {L::double_white_continuous, 0, 0},
        {L::single_yellow_continuous, 0, 0}, {L::double_yellow_continuous, 0, 0},
        {L::dashed, 1, 1},                  {L::double_dashed, 1, 2},
        {L::botts_dots, 1, 1},              {L::unknown, std::nullopt, std::nullopt}};
    if (table.size() != static_cast<std::size_t>(kNumClasses)) return fail("table does not cover every class");
    for (const auto& row : table) {
        if (remap_class(row.label, TaxonomyScheme::two_class) != row.two)
            return fail(std::string("two-class mapping wrong for ") + std::string(class_token(row.label)));
        if (remap_class(row.label, TaxonomyScheme::three_class) != row.three)
            return fail(std::string("three-class mapping wrong for ") + std::string(class_token(row.label)));
        if (remap_class(row.label, TaxonomyScheme::full) != static_cast<int>(row.label))
            return fail(std::string("full mapping is not the identity for ") + std::string(class_token(row.label)));
    }
    return {};
}

// ---------------------------------------------------------------------------
// Criterion 8: cascade contract (2 forwards per image, reproducible bytes)
// ---------------------------------------------------------------------------

std::string c8_serialize(const std::vector<CascadeResult>& results) {
    std::ostringstream os;
    os << std::hexfloat;
    for (const auto& r : results) {
        os << "frame " << r.boundaries.size() << "\n";
        for (const auto& b : r.boundaries) {
            os << b.output_index << " " << b.confidence << " " << b.pixels.size() << "\n";
            for (const auto& [row, x] : b.polyline.points()) os << row << ":" << x << " ";
            os << "\n";
            for (const auto& px : b.pixels) os << px.x << "," << px.y << " ";
            os << "\n";
        }
    }
    return os.str();
}

std::string criterion8() {
    if (!g_shared.seg_training) return fail("requires the segmentation model trained by criterion 4");
    SegModel& seg = g_shared.seg_training->model;

    PipelineConfig cfg;
    cfg.seed = derive_seed(kRootSeed, "c8", 0);
    cfg.segmentation = seg.config();
    cfg.descriptor_size = 16;
    cfg.classifier.scheme = TaxonomyScheme::two_class;
    cfg.classifier.epochs = 10;

    ClsTrainResult cls = train_classification(seg, g_shared.train_scenes, cfg);
    const Checkpoint seg_ckpt = make_seg_checkpoint(seg, TrainPhase::instance);
    const Checkpoint cls_ckpt = make_cls_checkpoint(cls.model, cfg.classifier.scheme);

    const auto scenes = make_scene_corpus(scene_proto(), 50, derive_seed(cfg.seed, "scenes", 0));

    auto run_all = [&](std::vector<CascadeResult>& out) -> std::string {
        CascadePipeline pipeline(seg_ckpt, cls_ckpt, cfg.min_points, cfg.descriptor_size);
        for (const auto& scene : scenes) out.push_back(pipeline.run(scene.image));
        if (pipeline.seg().forward_count() != 50)
            return fail("segmentation ran " + std::to_string(pipeline.seg().forward_count()) +
                        " forwards over 50 images");
        if (pipeline.cls().forward_count() != 50)
            return fail("classifier ran " + std::to_string(pipeline.cls().forward_count()) +
                        " forwards over 50 images (a frame decoded no boundaries)");
        return {};
    };

    std::vector<CascadeResult> first, second;
    if (auto e = run_all(first); !e.empty()) return e;
    for (std::size_t i = 0; i < first.size(); ++i) {
        const auto& r = first[i];
        if (r.boundaries.empty() || r.boundaries.size() > static_cast<std::size_t>(kMaxInstances))
            return fail("frame " + std::to_string(i) + " emitted " + std::to_string(r.boundaries.size()) +
                        " boundaries");
        for (const auto& b : r.boundaries) {
            if (b.polyline.point_count() < 3)
                return fail("frame " + std::to_string(i) + " emitted a boundary with fewer than 3 points");
            if (b.output_index < 0 || b.output_index >= num_outputs(TaxonomyScheme::two_class))
                return fail("frame " + std::to_string(i) + " emitted an out-of-range class");
        }
    }
    if (auto e = run_all(second); !e.empty()) return e;
    if (c8_serialize(first) != c8_serialize(second)) return fail("two identically seeded runs serialized differently");
    return {};
}

// ---------------------------------------------------------------------------
// Criterion 9: annotation round-trip and malformed-record errors
// ---------------------------------------------------------------------------

std::string c9_random_record(Rng& rng) {
    std::vector<int> rows;
    int r = static_cast<int>(rng.uniform_int(0, 10));
    while (r < 720 && static_cast<int>(rows.size()) < 56) {
        rows.push_back(r);
        r += static_cast<int>(rng.uniform_int(1, 18));
    }
    json j;
    j["h_samples"] = rows;
    json lanes = json::array();
    const int n = static_cast<int>(rng.uniform_int(0, 4));
    for (int lane = 0; lane < n; ++lane) {
        json xs = json::array();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rng.uniform() < 0.35)
                xs.push_back(-2);
            else
                xs.push_back(rng.uniform() * 1280.0);
        }
        lanes.push_back(xs);
    }
    j["lanes"] = lanes;
    j["raw_file"] = "clips/" + std::to_string(rng.uniform_int(0, 999999)) + "/20.jpg";
    return j.dump();
}

bool c9_samples_equal(const Sample& a, const Sample& b) {
    if (a.source_id != b.source_id || a.grid_rows != b.grid_rows || a.boundaries.size() != b.boundaries.size() ||
        a.classes != b.classes)
        return false;
    for (std::size_t i = 0; i < a.boundaries.size(); ++i)
        if (a.boundaries[i].points() != b.boundaries[i].points()) return false;
    return true;
}

std::string criterion9() {
    Rng rng(derive_seed(kRootSeed, "c9", 0));
    for (int trial = 0; trial < 500; ++trial) {
        const std::string line = c9_random_record(rng);
        const Sample once = parse_tusimple_line(line, trial);
        const Sample twice = parse_tusimple_line(serialize_tusimple_line(once), trial);
        if (!c9_samples_equal(once, twice)) return fail("round trip changed record " + std::to_string(trial));
    }

    const auto expect = [](const char* what, const std::string& line, auto reject) -> std::string {
        try {
            parse_tusimple_line(line, 1);
        } catch (const std::exception& e) {
            return reject(e) ? std::string{} : fail(std::string(what) + " raised the wrong error type");
        }
        return fail(std::string(what) + " was accepted");
    };
    const auto is_malformed = [](const std::exception& e) { return dynamic_cast<const MalformedRecordError*>(&e) != nullptr; };
    const auto is_budget = [](const std::exception& e) { return dynamic_cast<const InstanceBudgetError*>(&e) != nullptr; };

    const std::string five_lanes =
        R"({"lanes": [[1],[2],[3],[4],[5]], "h_samples": [10], "raw_file": "a.jpg"})";
    for (const auto& [what, line] : std::vector<std::pair<const char*, std::string>>{
             {"unparseable json", "{oops"},
             {"missing lanes key", R"({"h_samples": [1,2], "raw_file": "a.jpg"})"},
             {"non-array lanes", R"({"lanes": 5, "h_samples": [1,2], "raw_file": "a.jpg"})"},
             {"non-increasing h_samples", R"({"lanes": [[1,2]], "h_samples": [5,5], "raw_file": "a.jpg"})"},
             {"lane length mismatch", R"({"lanes": [[1,2,3]], "h_samples": [1,2], "raw_file": "a.jpg"})"},
             {"non-numeric x", R"({"lanes": [["x",2]], "h_samples": [1,2], "raw_file": "a.jpg"})"}}) {
        if (auto e = expect(what, line, is_malformed); !e.empty()) return e;
    }
    return expect("fifth lane", five_lanes, is_budget);
}

// ---------------------------------------------------------------------------
// Criterion 10: descriptor-size ablation table, reproducible cell-by-cell
// ---------------------------------------------------------------------------

std::string criterion10() {
    if (!g_shared.seg_training) return fail("requires the segmentation model trained by criterion 4");
    SegModel& seg = g_shared.seg_training->model;

    PipelineConfig cfg;
    cfg.seed = derive_seed(kRootSeed, "c10", 0);
    cfg.segmentation = seg.config();
    cfg.classifier.epochs = 8;

    const std::vector<int> sizes = {16, 32};
    const std::vector<TaxonomyScheme> schemes = {TaxonomyScheme::two_class, TaxonomyScheme::three_class};
    const auto cells =
        ablate_descriptor_sizes(seg, g_shared.train_scenes, g_shared.holdout_scenes, cfg, sizes, schemes);
    if (cells.size() != 4) return fail("expected 4 cells, got " + std::to_string(cells.size()));
    for (const auto& cell : cells)
        if (!cell.accuracy)
            return fail("cell " + std::to_string(cell.size) + "/" + scheme_token(cell.scheme) +
                        " failed: " + cell.error);

    const std::string csv = ablation_table_csv(cells);
    if (csv.rfind("size,scheme,accuracy\n", 0) != 0) return fail("table is missing its header");
    if (std::count(csv.begin(), csv.end(), '\n') != 5) return fail("table does not have 4 data rows");
    for (const char* prefix : {"\n16,two_class,", "\n16,three_class,", "\n32,two_class,", "\n32,three_class,"})
        if (csv.find(prefix) == std::string::npos) return fail(std::string("table is missing the row ") + prefix);

    // Re-running one cell in isolation reproduces its accuracy exactly.
    const auto rerun = ablate_descriptor_sizes(seg, g_shared.train_scenes, g_shared.holdout_scenes, cfg, {32},
                                               {TaxonomyScheme::three_class});
    if (rerun.size() != 1 || !rerun[0].accuracy) return fail("isolated cell re-run failed");
    if (*rerun[0].accuracy != *cells[3].accuracy)
        return fail("isolated re-run accuracy " + std::to_string(*rerun[0].accuracy) +
                    " differs from the grid's " + std::to_string(*cells[3].accuracy));
    return {};
}

struct Gate {
    int id;
    const char* what;
    std::function<std::string()> run;
    double budget_s;  // 0 = no stated budget
};

}  // namespace

int main() {
    const std::vector<Gate> gates = {
        {1, "lane matching agrees with an exhaustive assignment oracle", criterion1, 60.0},
        {2, "rasterized labels respect the stroke radius in both directions", criterion2, 120.0},
        {3, "instance-loss identity, permutation invariance, and gradient check", criterion3, 0.0},
        {4, "curriculum training reaches the held-out accuracy gate", criterion4, 900.0},
        {5, "descriptor resampling identities", criterion5, 0.0},
        {6, "classifier separates stroke patterns at the required accuracies", criterion6, 300.0},
        {7, "class remapping reproduces the full taxonomy table", criterion7, 0.0},
        {8, "cascade runs two network passes per image with reproducible output", criterion8, 0.0},
        {9, "annotation records round-trip and malformed input is rejected by name", criterion9, 0.0},
        {10, "descriptor-size ablation emits a reproducible table", criterion10, 0.0},
    };

    bool all_pass = true;
    for (const auto& gate : gates) {
        const auto t0 = std::chrono::steady_clock::now();
        std::string error;
        try {
            error = gate.run();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (error.empty() && gate.budget_s > 0.0 && seconds > gate.budget_s)
            error = "took " + std::to_string(seconds) + "s, budget is " + std::to_string(gate.budget_s) + "s";
        std::ostringstream line;
        line.precision(1);
        line << std::fixed;
        if (error.empty()) {
            line << "[PASS] criterion " << gate.id << ": " << gate.what << " (" << seconds << "s)";
        } else {
            line << "[FAIL] criterion " << gate.id << ": " << gate.what << " — " << error << " (" << seconds << "s)";
            all_pass = false;
        }
        std::cout << line.str() << std::endl;
    }
    return all_pass ? 0 : 1;
}
