#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lanecascade/segmentation.hpp"

using namespace lanecascade;
using nn::Tensor;

namespace {

Image random_image(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    Image image(w, h);
    for (auto& v : image.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    return image;
}

Tensor flip_width(const Tensor& t) {
    Tensor out(t.shape);
    const int N = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) out.at(n, c, h, w) = t.at(n, c, h, W - 1 - w);
    return out;
}

}  // namespace

TEST_CASE("seg config parses architecture tokens and validates") {
    CHECK(parse_seg_arch("erfnet_like") == SegArch::erfnet_like);
    CHECK(parse_seg_arch("mini") == SegArch::mini);
    CHECK_THROWS_AS(parse_seg_arch("resnet"), ConfigError);
    CHECK(seg_arch_token(SegArch::mini) == std::string("mini"));

    SegModelConfig cfg;
    cfg.architecture = SegArch::mini;
    cfg.input_width = 128;
    cfg.input_height = 64;
    CHECK_NOTHROW(cfg.validate());
    cfg.input_width = 100;  // not divisible by 16
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.input_width = 128;
    cfg.channels = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.channels = kMaxInstances + 1;
    cfg.width_multiplier = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("images_to_input maps bytes to unit floats in NCHW") {
    Image image(4, 2);
    image.set_pixel(0, 0, 255, 0, 128);
    image.set_pixel(3, 1, 51, 102, 204);
    const Tensor t = image_to_input(image);
    REQUIRE(t.shape == std::vector<int>{1, 3, 2, 4});
    CHECK(t.at(0, 0, 0, 0) == Catch::Approx(1.0));
    CHECK(t.at(0, 1, 0, 0) == Catch::Approx(0.0));
    CHECK(t.at(0, 2, 0, 0) == Catch::Approx(128.0 / 255.0));
    CHECK(t.at(0, 0, 1, 3) == Catch::Approx(51.0 / 255.0));
    CHECK(t.at(0, 2, 1, 3) == Catch::Approx(204.0 / 255.0));

    Image other(3, 2);
    CHECK_THROWS_AS(images_to_input({&image, &other}), InvalidArgumentError);
}

TEST_CASE("softmax_channels yields a distribution per pixel") {
    Tensor logits({1, 3, 2, 2});
    Rng rng(3);
    for (auto& v : logits.data) v = static_cast<float>(rng.uniform(-30.0, 30.0));
    const Tensor probs = softmax_channels(logits);
    for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) {
            double sum = 0.0;
            for (int c = 0; c < 3; ++c) {
                CHECK(probs.at(0, c, h, w) >= 0.0f);
                sum += probs.at(0, c, h, w);
            }
            CHECK(sum == Catch::Approx(1.0).epsilon(1e-5));
        }
}

TEST_CASE("mini model forward shapes, determinism and counter") {
    SegModelConfig cfg;
    cfg.architecture = SegArch::mini;
    cfg.input_width = 64;
    cfg.input_height = 32;
    SegModel model(cfg, 7);
    const Image image = random_image(64, 32, 1);
    const Tensor input = image_to_input(image);
    const SegOutput out = model.forward(input, false);
    CHECK(out.logits.shape == std::vector<int>{1, kMaxInstances + 1, 32, 64});
    CHECK(out.probabilities.shape == out.logits.shape);
    CHECK(model.forward_count() == 1);

    SegModel twin(cfg, 7);
    const SegOutput out2 = twin.forward(input, false);
    CHECK(out.logits.data == out2.logits.data);  // same seed, same weights

    SegModel other(cfg, 8);
    CHECK(other.forward(input, false).logits.data != out.logits.data);

    Tensor bad({1, 3, 64, 32});  // transposed dims
    CHECK_THROWS_AS(model.forward(bad, false), InvalidArgumentError);
}

TEST_CASE("erfnet-like model produces full-resolution logits") {
    SegModelConfig cfg;
    cfg.architecture = SegArch::erfnet_like;
    cfg.input_width = 64;
    cfg.input_height = 32;
    cfg.width_multiplier = 0.25;  // keep the unit test light
    SegModel model(cfg, 5);
    const SegOutput out = model.forward(image_to_input(random_image(64, 32, 2)), false);
    CHECK(out.logits.shape == std::vector<int>{1, kMaxInstances + 1, 32, 64});
}

TEST_CASE("width multiplier scales parameter count roughly quadratically") {
    SegModelConfig cfg;
    cfg.architecture = SegArch::mini;
    cfg.input_width = 64;
    cfg.input_height = 32;
    SegModel base(cfg, 1);
    cfg.width_multiplier = 2.0;
    SegModel wide(cfg, 1);
    const double ratio = static_cast<double>(wide.param_count()) / static_cast<double>(base.param_count());
    CHECK(ratio > 3.2);
    CHECK(ratio < 4.8);
}

TEST_CASE("batch forward equals per-image forward bitwise in eval mode") {
    SegModelConfig cfg;
    cfg.architecture = SegArch::mini;
    cfg.input_width = 32;
    cfg.input_height = 16;
    SegModel model(cfg, 9);
    std::vector<Image> images;
    std::vector<const Image*> ptrs;
    for (int i = 0; i < 3; ++i) images.push_back(random_image(32, 16, 10 + i));
    for (const auto& im : images) ptrs.push_back(&im);
    const SegOutput batch = model.forward(images_to_input(ptrs), false);
    const std::size_t per = batch.logits.data.size() / 3;
    for (int n = 0; n < 3; ++n) {
        const SegOutput single = model.forward(image_to_input(images[n]), false);
        REQUIRE(single.logits.data.size() == per);
        for (std::size_t i = 0; i < per; ++i)
            REQUIRE(single.logits.data[i] == batch.logits.data[static_cast<std::size_t>(n) * per + i]);
    }
}

TEST_CASE("head swap changes output channels, keeps the backbone, breaks background symmetry") {
    SegModelConfig cfg;
    cfg.architecture = SegArch::mini;
    cfg.input_width = 32;
    cfg.input_height = 16;
    SegModel model(cfg, 11);
    const std::int64_t full_params = model.param_count();

    model.set_head_channels(2, 123);
    CHECK(model.head_channels() == 2);
    const Tensor input = image_to_input(random_image(32, 16, 3));
    CHECK(model.forward(input, false).logits.dim(1) == 2);
    CHECK(model.param_count() < full_params);

    model.set_head_channels(kMaxInstances + 1, 456);
    CHECK(model.forward(input, false).logits.dim(1) == kMaxInstances + 1);
    CHECK(model.param_count() == full_params);

    // The fresh instance head starts biased toward the background channel so
    // the permutation-symmetric pair loss settles background on channel 0.
    const SegOutput out = model.forward(input, false);
    int background_wins = 0;
    const int total = 16 * 32;
    for (int h = 0; h < 16; ++h)
        for (int w = 0; w < 32; ++w) {
            int best = 0;
            float bv = out.logits.at(0, 0, h, w);
            for (int c = 1; c < kMaxInstances + 1; ++c)
                if (out.logits.at(0, c, h, w) > bv) {
                    bv = out.logits.at(0, c, h, w);
                    best = c;
                }
            if (best == 0) ++background_wins;
        }
    CHECK(background_wins > total / 2);
}

TEST_CASE("decode picks the argmax channel with ties to the lowest index") {
    Tensor logits({1, kMaxInstances + 1, 2, 3});
    logits.fill(0.0f);  // all ties -> background (channel 0) everywhere
    auto sets = decode_instance_pixels(logits, 0);
    for (const auto& s : sets) CHECK(s.empty());

    logits.at(0, 2, 0, 1) = 5.0f;  // instance 2 at (x=1, y=0)
    logits.at(0, 1, 1, 2) = 3.0f;
    logits.at(0, 4, 1, 2) = 3.0f;  // tie between instances 1 and 4 -> lower wins
    sets = decode_instance_pixels(logits, 0);
    REQUIRE(sets[1].size() == 1);
    CHECK(sets[1][0] == Pixel{1, 0});
    REQUIRE(sets[0].size() == 1);
    CHECK(sets[0][0] == Pixel{2, 1});
    CHECK(sets[3].empty());
}

TEST_CASE("decode_instances applies the min_points filter and row-averages") {
    Tensor logits({1, kMaxInstances + 1, 4, 4});
    logits.fill(0.0f);
    // Instance 1: three rows -> kept. Instance 2: two rows -> dropped at min_points=3.
    for (int h = 0; h < 3; ++h) logits.at(0, 1, h, 1) = 9.0f;
    logits.at(0, 2, 0, 3) = 9.0f;
    logits.at(0, 2, 1, 3) = 9.0f;
    SegOutput out;
    out.logits = logits;
    out.probabilities = softmax_channels(logits);

    const auto kept = decode_instances(out, 0, 3);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].channel == 1);
    CHECK(kept[0].polyline.point_count() == 3);

    const auto both = decode_instances(out, 0, 2);
    CHECK(both.size() == 2);
    CHECK_THROWS_AS(decode_instances(out, 0, 0), InvalidArgumentError);
}

TEST_CASE("decoding a mirrored input of a mirrored model run matches mirrored decode") {
    // Pure logits-level property: decode(flip(logits)) == flip(decode(logits)).
    Tensor logits({1, kMaxInstances + 1, 4, 6});
    Rng rng(17);
    for (auto& v : logits.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    const Tensor flipped = flip_width(logits);

    const auto direct = decode_instance_pixels(logits, 0);
    const auto mirrored = decode_instance_pixels(flipped, 0);
    const int W = 6;
    for (int c = 0; c < kMaxInstances; ++c) {
        REQUIRE(direct[c].size() == mirrored[c].size());
        // Row-major scan of the mirrored map visits mirrored x in reverse per row.
        std::vector<Pixel> expect;
        for (const auto& p : direct[c]) expect.push_back({W - 1 - p.x, p.y});
        std::sort(expect.begin(), expect.end(), [](const Pixel& a, const Pixel& b) {
            return a.y != b.y ? a.y < b.y : a.x < b.x;
        });
        std::vector<Pixel> got = mirrored[c];
        std::sort(got.begin(), got.end(), [](const Pixel& a, const Pixel& b) {
            return a.y != b.y ? a.y < b.y : a.x < b.x;
        });
        CHECK(got == expect);
    }
}

TEST_CASE("begin_epoch reseeds dropout deterministically") {
    SegModelConfig cfg;
    cfg.architecture = SegArch::erfnet_like;
    cfg.input_width = 32;
    cfg.input_height = 16;
    cfg.width_multiplier = 0.25;
    SegModel model(cfg, 21);
    const Tensor input = image_to_input(random_image(32, 16, 4));

    model.begin_epoch(3);
    const SegOutput a = model.forward(input, true);
    model.begin_epoch(3);
    const SegOutput b = model.forward(input, true);
    CHECK(a.logits.data == b.logits.data);  // same epoch key -> same dropout draw

    model.begin_epoch(4);
    const SegOutput c = model.forward(input, true);
    CHECK(a.logits.data != c.logits.data);
}
