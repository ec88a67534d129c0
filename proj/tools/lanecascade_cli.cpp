// Command-line front end for the cascaded lane-boundary pipeline.
//
// Verbs: gen-data, train-seg, train-cls, infer, eval, ablate, overlay.
// Every run writes the effective configuration (after command-line overrides)
// to <output>/config_snapshot.json so results can be reproduced exactly.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lanecascade/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lanecascade;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    std::string device = "cpu";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "pipeline config file (JSON key tree)");
    cmd->add_option("--seed", args.seed, "root seed override");
    cmd->add_option("--output", args.output, "output directory override");
    cmd->add_option("--device", args.device, "compute device (only 'cpu' is available)");
}

PipelineConfig resolve_config(const CommonArgs& args) {
    PipelineConfig cfg;
    if (!args.config_path.empty()) cfg = load_pipeline_config(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (args.output) cfg.output_dir = *args.output;
    if (args.device != "cpu") throw ConfigError("unknown device '" + args.device + "' (valid: cpu)");
    cfg.validate();
    return cfg;
}

fs::path prepare_output(const PipelineConfig& cfg) {
    fs::path out(cfg.output_dir);
    fs::create_directories(out);
    save_pipeline_config(cfg, out / "config_snapshot.json");
    return out;
}

Checkpoint load_ckpt(const std::string& flag_value, const fs::path& fallback, const char* what) {
    const fs::path path = flag_value.empty() ? fallback : fs::path(flag_value);
    if (!fs::exists(path))
        throw CheckpointError(std::string(what) + " checkpoint not found at " + path.string());
    return load_checkpoint(path.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

int run_gen_data(const CommonArgs& common, int count_override) {
    PipelineConfig cfg = resolve_config(common);
    if (count_override > 0) cfg.data.synthetic_count = count_override;
    const fs::path out = prepare_output(cfg);
    SceneSpec proto = cfg.data.scene;
    auto corpus = make_scene_corpus(proto, cfg.data.synthetic_count, derive_seed(cfg.seed, "corpus_train", 0));
    write_dataset(std::move(corpus), out / "dataset");
    std::cout << "wrote " << cfg.data.synthetic_count << " scenes under " << (out / "dataset").string() << "\n";
    return 0;
}

int run_train_seg(const CommonArgs& common, int epochs_override, const std::string& resume_path,
                  int stop_after) {
    PipelineConfig cfg = resolve_config(common);
    if (epochs_override > 0) cfg.seg_train.epochs = epochs_override;
    const fs::path out = prepare_output(cfg);
    PreparedData data = prepare_data(cfg);

    std::optional<SegTrainState> resume;
    if (!resume_path.empty())
        resume = seg_train_state_from_checkpoint(load_checkpoint(resume_path), cfg.segmentation);

    SegTrainResult result =
        train_segmentation(data.train, data.val, cfg.segmentation, cfg.seg_train, cfg.seed,
                           resume ? &*resume : nullptr, &std::cout, stop_after, cfg.data.image_root);

    save_checkpoint(make_seg_checkpoint(result.model, result.final_state.phase), (out / "seg.ckpt").string());
    save_checkpoint(make_seg_train_state_checkpoint(cfg.segmentation, result.final_state),
                    (out / "seg_train_state.ckpt").string());

    std::ofstream losses(out / "seg_losses.csv");
    losses << "epoch,phase,train_loss,val_loss\n";
    for (std::size_t e = 0; e < result.report.train_losses.size(); ++e)
        losses << e << "," << (result.report.phases[e] == TrainPhase::binary ? "binary" : "instance") << ","
               << result.report.train_losses[e] << "," << result.report.val_losses[e] << "\n";
    std::cout << "best epoch " << result.report.best_epoch << " val_loss " << result.report.best_val_loss
              << "; checkpoint at " << (out / "seg.ckpt").string() << "\n";
    return 0;
}

int run_train_cls(const CommonArgs& common, const std::string& seg_path, int epochs_override,
                  int descriptor_size, const std::string& scheme_token_arg) {
    PipelineConfig cfg = resolve_config(common);
    if (epochs_override > 0) cfg.classifier.epochs = epochs_override;
    if (descriptor_size > 0) cfg.descriptor_size = descriptor_size;
    if (!scheme_token_arg.empty()) cfg.classifier.scheme = parse_scheme(scheme_token_arg);
    const fs::path out = prepare_output(cfg);
    PreparedData data = prepare_data(cfg);

    SegModel seg = seg_model_from_checkpoint(load_ckpt(seg_path, out / "seg.ckpt", "segmentation"));
    ClsTrainResult result = train_classification(seg, data.train, cfg, &std::cout);
    save_checkpoint(make_cls_checkpoint(result.model, cfg.classifier.scheme), (out / "cls.ckpt").string());
    std::cout << "best val accuracy " << result.report.best_val_accuracy << " at epoch "
              << result.report.best_epoch << "; checkpoint at " << (out / "cls.ckpt").string() << "\n";
    return 0;
}

json boundaries_to_json(const CascadeResult& result, TaxonomyScheme scheme) {
    json jb = json::array();
    for (const auto& b : result.boundaries) {
        json pts = json::array();
        for (const auto& [row, col] : b.polyline.points()) pts.push_back({{"row", row}, {"col", col}});
        jb.push_back({{"class_index", b.output_index},
                      {"class_name", output_class_name(scheme, b.output_index)},
                      {"confidence", b.confidence},
                      {"points", pts}});
    }
    return {{"boundaries", jb},
            {"timings_ms",
             {{"segmentation", result.seg_ms}, {"descriptor", result.descriptor_ms}, {"classifier", result.cls_ms}}}};
}

int run_infer(const CommonArgs& common, const std::string& image_path, const std::string& seg_path,
              const std::string& cls_path) {
    PipelineConfig cfg = resolve_config(common);
    const fs::path out = prepare_output(cfg);
    CascadePipeline pipeline(load_ckpt(seg_path, out / "seg.ckpt", "segmentation"),
                             load_ckpt(cls_path, out / "cls.ckpt", "classifier"), cfg.min_points,
                             cfg.descriptor_size);
    const Image image = load_image(image_path);
    CascadeResult result = pipeline.run(image);
    const json j = boundaries_to_json(result, pipeline.scheme());
    write_text(out / "inference.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_eval(const CommonArgs& common, const std::string& seg_path, const std::string& cls_path,
             double threshold_px) {
    PipelineConfig cfg = resolve_config(common);
    if (threshold_px > 0) cfg.metrics.threshold_px = threshold_px;
    const fs::path out = prepare_output(cfg);
    PreparedData data = prepare_data(cfg);
    const std::vector<Sample>& eval_set = data.eval.empty() ? data.val : data.eval;

    CascadePipeline pipeline(load_ckpt(seg_path, out / "seg.ckpt", "segmentation"),
                             load_ckpt(cls_path, out / "cls.ckpt", "classifier"), cfg.min_points,
                             cfg.descriptor_size);
    EvalArtifacts artifacts = evaluate_dataset(pipeline, eval_set, cfg);
    std::string text = artifacts.report.to_text();
    if (artifacts.classification_accuracy)
        text += "classification_accuracy " + std::to_string(*artifacts.classification_accuracy) + "\n";
    write_text(out / "metrics.txt", text);
    write_text(out / "metrics.csv", artifacts.report.to_csv());
    std::cout << text;
    return 0;
}

int run_ablate(const CommonArgs& common, const std::string& seg_path, std::vector<int> sizes,
               std::vector<std::string> scheme_tokens) {
    PipelineConfig cfg = resolve_config(common);
    const fs::path out = prepare_output(cfg);
    PreparedData data = prepare_data(cfg);

    if (sizes.empty()) sizes = {16, 32};
    std::vector<TaxonomyScheme> schemes;
    if (scheme_tokens.empty()) scheme_tokens = {"two_class", "three_class"};
    for (const auto& token : scheme_tokens) schemes.push_back(parse_scheme(token));

    SegModel seg = seg_model_from_checkpoint(load_ckpt(seg_path, out / "seg.ckpt", "segmentation"));
    auto cells = ablate_descriptor_sizes(seg, data.train, data.eval.empty() ? data.val : data.eval, cfg, sizes,
                                         schemes, &std::cout);
    const std::string csv = ablation_table_csv(cells);
    write_text(out / "ablation.csv", csv);
    std::cout << csv;
    return 0;
}

int run_overlay(const CommonArgs& common, const std::string& image_path, const std::string& seg_path,
                const std::string& cls_path, bool by_instance) {
    PipelineConfig cfg = resolve_config(common);
    const fs::path out = prepare_output(cfg);
    CascadePipeline pipeline(load_ckpt(seg_path, out / "seg.ckpt", "segmentation"),
                             load_ckpt(cls_path, out / "cls.ckpt", "classifier"), cfg.min_points,
                             cfg.descriptor_size);
    const Image image = load_image(image_path);
    const Image net_image =
        resize_bilinear(image, pipeline.seg().config().input_width, pipeline.seg().config().input_height);
    CascadeResult result = pipeline.run(image);
    const Image rendered = render_overlay(net_image, result, pipeline.scheme(), by_instance);
    const fs::path target = out / (fs::path(image_path).stem().string() + "_overlay.png");
    save_image(rendered, target.string());
    std::cout << "wrote " << target.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascaded lane-boundary detection and classification pipeline"};
    app.require_subcommand(1);

    CommonArgs common;
    int count_override = 0;
    int epochs_override = 0;
    std::string resume_path;
    int stop_after = -1;
    std::string seg_path, cls_path, image_path;
    int descriptor_size = 0;
    std::string scheme_arg;
    double threshold_px = 0.0;
    std::vector<int> sizes;
    std::vector<std::string> scheme_tokens;
    bool by_instance = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
    add_common(gen, common);
    gen->add_option("--count", count_override, "number of scenes to generate");

    auto* tseg = app.add_subcommand("train-seg", "train the instance segmentation stage");
    add_common(tseg, common);
    tseg->add_option("--epochs", epochs_override, "total epochs override");
    tseg->add_option("--resume", resume_path, "training-state checkpoint to continue from");
    tseg->add_option("--stop-after", stop_after, "stop after this epoch (for later resume)");

    auto* tcls = app.add_subcommand("train-cls", "train the boundary-class classifier stage");
    add_common(tcls, common);
    tcls->add_option("--seg-checkpoint", seg_path, "segmentation checkpoint path");
    tcls->add_option("--epochs", epochs_override, "classifier epochs override");
    tcls->add_option("--descriptor-size", descriptor_size, "descriptor side length S");
    tcls->add_option("--scheme", scheme_arg, "taxonomy scheme (two_class|three_class|full)");

    auto* inf = app.add_subcommand("infer", "run the cascade on one image");
    add_common(inf, common);
    inf->add_option("image", image_path, "input image")->required();
    inf->add_option("--seg-checkpoint", seg_path, "segmentation checkpoint path");
    inf->add_option("--cls-checkpoint", cls_path, "classifier checkpoint path");

    auto* ev = app.add_subcommand("eval", "evaluate the cascade on a labeled dataset");
    add_common(ev, common);
    ev->add_option("--seg-checkpoint", seg_path, "segmentation checkpoint path");
    ev->add_option("--cls-checkpoint", cls_path, "classifier checkpoint path");
    ev->add_option("--threshold-px", threshold_px, "point-match threshold override");

    auto* ab = app.add_subcommand("ablate", "descriptor-size x scheme ablation table");
    add_common(ab, common);
    ab->add_option("--seg-checkpoint", seg_path, "segmentation checkpoint path");
    ab->add_option("--sizes", sizes, "descriptor sizes to sweep");
    ab->add_option("--schemes", scheme_tokens, "taxonomy schemes to sweep");

    auto* ov = app.add_subcommand("overlay", "render classified boundaries over an image");
    add_common(ov, common);
    ov->add_option("image", image_path, "input image")->required();
    ov->add_option("--seg-checkpoint", seg_path, "segmentation checkpoint path");
    ov->add_option("--cls-checkpoint", cls_path, "classifier checkpoint path");
    ov->add_flag("--by-instance", by_instance, "color by instance instead of class");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen_data(common, count_override);
        if (tseg->parsed()) return run_train_seg(common, epochs_override, resume_path, stop_after);
        if (tcls->parsed()) return run_train_cls(common, seg_path, epochs_override, descriptor_size, scheme_arg);
        if (inf->parsed()) return run_infer(common, image_path, seg_path, cls_path);
        if (ev->parsed()) return run_eval(common, seg_path, cls_path, threshold_px);
        if (ab->parsed()) return run_ablate(common, seg_path, sizes, scheme_tokens);
        if (ov->parsed()) return run_overlay(common, image_path, seg_path, cls_path, by_instance);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
