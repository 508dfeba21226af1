#include "tubeloc/darknet.hpp"
#include "tubeloc/errors.hpp"
#include "tubeloc/nnexec.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <random>

using namespace tubeloc;

namespace {

const char* kMinimalCfg = R"(
[net]
width=8
height=8
channels=1

[convolutional]
filters=1
size=3
stride=1
pad=1
activation=linear
)";

NetworkDef shipped_tiny() {
    return load_cfg(std::filesystem::path(TUBELOC_DATA_DIR) / "tube-yolov3-tiny.cfg");
}

} // namespace

TEST_CASE("minimal cfg parses with same-dims output") {
    const NetworkDef net = parse_cfg(kMinimalCfg);
    REQUIRE(net.layers.size() == 1);
    CHECK(net.layers[0].kind == LayerKind::convolutional);
    CHECK(net.layers[0].out_c == 1);
    CHECK(net.layers[0].out_h == 8);
    CHECK(net.layers[0].out_w == 8);
}

TEST_CASE("shipped tiny cfg has the reference section counts") {
    const NetworkDef net = shipped_tiny();
    CHECK(net.count_kind(LayerKind::convolutional) == 13);
    CHECK(net.count_kind(LayerKind::maxpool) == 6);
    CHECK(net.count_kind(LayerKind::route) == 2);
    CHECK(net.count_kind(LayerKind::upsample) == 1);
    CHECK(net.count_kind(LayerKind::yolo) == 2);
    CHECK(net.layers.size() == 24);
}

TEST_CASE("shipped tiny cfg shape inference reaches the two head dims") {
    const NetworkDef net = shipped_tiny();
    std::vector<std::pair<int, int>> head_dims;
    for (const LayerDef& layer : net.layers)
        if (layer.kind == LayerKind::yolo) {
            CHECK(layer.in_c == 18); // 3 anchors * (5 + 1 class)
            head_dims.emplace_back(layer.in_h, layer.in_w);
        }
    REQUIRE(head_dims.size() == 2);
    CHECK(head_dims[0] == std::pair<int, int>{13, 13});
    CHECK(head_dims[1] == std::pair<int, int>{26, 26});
}

TEST_CASE("shipped full cfg parses with three heads") {
    const NetworkDef net =
        load_cfg(std::filesystem::path(TUBELOC_DATA_DIR) / "tube-yolov3.cfg");
    CHECK(net.count_kind(LayerKind::convolutional) == 75);
    CHECK(net.count_kind(LayerKind::shortcut) == 23);
    CHECK(net.count_kind(LayerKind::yolo) == 3);
    std::vector<int> grids;
    for (const LayerDef& layer : net.layers)
        if (layer.kind == LayerKind::yolo)
            grids.push_back(layer.in_w);
    CHECK(grids == std::vector<int>{13, 26, 52});
}

TEST_CASE("unknown section fails, unknown keys warn") {
    CHECK_THROWS_WITH_AS(parse_cfg("[net]\nwidth=8\nheight=8\nchannels=1\n[bogus]\nx=1\n"),
                         doctest::Contains("bogus"), ParseError);
    NetworkDef net = parse_cfg("[net]\nwidth=8\nheight=8\nchannels=1\nmomentum=0.9\n");
    CHECK(net.warnings.size() == 1);
}

TEST_CASE("missing required keys name the layer and key") {
    const char* no_filters = "[net]\nwidth=8\nheight=8\nchannels=1\n"
                             "[convolutional]\nsize=3\nstride=1\nactivation=linear\n";
    CHECK_THROWS_WITH_AS(parse_cfg(no_filters), doctest::Contains("filters"), ParseError);
}

TEST_CASE("route to a nonexistent layer fails") {
    const char* bad_route = "[net]\nwidth=8\nheight=8\nchannels=1\n"
                            "[convolutional]\nfilters=1\nsize=1\nstride=1\nactivation=linear\n"
                            "[route]\nlayers=5\n";
    CHECK_THROWS_AS(parse_cfg(bad_route), ParseError);
}

namespace {

// One conv layer, batch_normalize=1, filters=2, c=1, k=1.
const char* kOneConvBnCfg = "[net]\nwidth=4\nheight=4\nchannels=1\n"
                            "[convolutional]\nbatch_normalize=1\nfilters=2\nsize=1\n"
                            "stride=1\nactivation=linear\n";

std::vector<std::uint8_t> bytes_for(const std::vector<float>& floats,
                                    bool seen64 = true) {
    std::vector<std::uint8_t> bytes;
    auto push32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i)
            bytes.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    };
    push32(0); // major
    push32(2); // minor
    push32(0); // revision
    push32(0);
    if (seen64)
        push32(0);
    for (float f : floats) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        push32(u);
    }
    return bytes;
}

} // namespace

TEST_CASE("parse_weights slices the canonical block order") {
    const NetworkDef net = parse_cfg(kOneConvBnCfg);
    // biases, scales, means, variances, kernel: 2 each.
    const std::vector<float> floats{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const WeightStore store = parse_weights(bytes_for(floats), net);
    REQUIRE(store.conv.size() == 1);
    const ConvWeights& w = store.conv[0];
    CHECK(w.biases == std::vector<float>{1, 2});
    CHECK(w.scales == std::vector<float>{3, 4});
    CHECK(w.rolling_mean == std::vector<float>{5, 6});
    CHECK(w.rolling_variance == std::vector<float>{7, 8});
    CHECK(w.kernel == std::vector<float>{9, 10});
}

TEST_CASE("truncated and oversized weight streams fail with counts") {
    const NetworkDef net = parse_cfg(kOneConvBnCfg);
    std::vector<float> floats{1, 2, 3, 4, 5, 6, 7, 8, 9}; // one short
    CHECK_THROWS_AS(parse_weights(bytes_for(floats), net), ParseError);
    floats = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}; // one extra
    CHECK_THROWS_WITH_AS(parse_weights(bytes_for(floats), net),
                         doctest::Contains("trailing"), ParseError);
}

TEST_CASE("serialize then parse is byte identical") {
    SUBCASE("header only") {
        WeightStore store;
        store.header = {0, 2, 0, 12345};
        const auto bytes = serialize_weights(store);
        CHECK(bytes.size() == 20); // 3 x int32 + 64-bit seen
    }
    SUBCASE("32-bit seen for old versions") {
        WeightStore store;
        store.header = {0, 1, 0, 77};
        CHECK(serialize_weights(store).size() == 16);
    }
    SUBCASE("random stores round-trip") {
        const NetworkDef net = shipped_tiny();
        for (unsigned seed : {1u, 2u, 3u}) {
            const WeightStore store = fixtures::make_random_weights(net, seed);
            const auto bytes = serialize_weights(store);
            const WeightStore back = parse_weights(bytes, net);
            CHECK(serialize_weights(back) == bytes);
        }
    }
    SUBCASE("full-size container for the shipped tiny cfg") {
        const NetworkDef net = shipped_tiny();
        const WeightStore store = fixtures::make_random_weights(net, 17);
        std::size_t floats = 0;
        for (const ConvWeights& w : store.conv)
            floats += w.float_count();
        const auto bytes = serialize_weights(store);
        CHECK(bytes.size() == 20 + floats * 4);
        CHECK(parse_weights(bytes, net).conv.size() == 13);
    }
}

TEST_CASE("transplant honors the cutoff") {
    const NetworkDef net = shipped_tiny();
    const WeightStore source = fixtures::make_random_weights(net, 100);
    const WeightStore dest = fixtures::make_random_weights(net, 200);
    const int default_cutoff = default_transplant_cutoff(net);
    CHECK(net.layers[default_cutoff].kind == LayerKind::route);

    SUBCASE("cutoff 0 is the identity") {
        const WeightStore out = transplant_backbone(source, dest, {0, "src", "dst"});
        CHECK(serialize_weights(out) == serialize_weights(dest));
    }
    SUBCASE("cutoff at layer count copies every block, keeps dest header") {
        const int count = static_cast<int>(net.layers.size());
        const WeightStore out = transplant_backbone(source, dest, {count, "s", "d"});
        REQUIRE(out.conv.size() == source.conv.size());
        for (std::size_t i = 0; i < out.conv.size(); ++i)
            CHECK(out.conv[i].kernel == source.conv[i].kernel);
        CHECK(out.header.seen == dest.header.seen);
    }
    SUBCASE("blocks below the cutoff come from source, above from dest") {
        const WeightStore out =
            transplant_backbone(source, dest, {default_cutoff, "s", "d"});
        for (std::size_t i = 0; i < out.conv.size(); ++i) {
            const ConvWeights& expected = out.conv[i].layer_index < default_cutoff
                                              ? source.conv[i]
                                              : dest.conv[i];
            CHECK(out.conv[i].kernel == expected.kernel);
            CHECK(out.conv[i].biases == expected.biases);
        }
    }
    SUBCASE("idempotent") {
        const TransplantPlan plan{default_cutoff, "s", "d"};
        const WeightStore once = transplant_backbone(source, dest, plan);
        const WeightStore twice = transplant_backbone(source, once, plan);
        CHECK(serialize_weights(once) == serialize_weights(twice));
    }
    SUBCASE("shape mismatch names the offending layer") {
        WeightStore bad = source;
        bad.conv[2].filters = 99;
        CHECK_THROWS_WITH_AS(
            transplant_backbone(bad, dest, {default_cutoff, "s", "d"}),
            doctest::Contains("layer 4"), Error);
    }
}

TEST_CASE("fold_batchnorm closed forms") {
    ConvWeights w;
    w.filters = 1;
    w.in_channels = 1;
    w.size = 1;
    w.batch_normalize = true;
    w.biases = {0};
    w.scales = {1};
    w.rolling_mean = {0};
    w.rolling_variance = {1.0f - 1e-6f};
    w.kernel = {0.5f};

    SUBCASE("identity parameters leave the kernel unchanged") {
        const ConvWeights f = fold_batchnorm(w);
        CHECK(f.batch_normalize == false);
        CHECK(f.kernel[0] == doctest::Approx(0.5f).epsilon(1e-6));
        CHECK(f.biases[0] == doctest::Approx(0.0f));
    }
    SUBCASE("scale 2 mean 3 makes kernel 2 and bias -6") {
        w.kernel = {1.0f};
        w.scales = {2.0f};
        w.rolling_mean = {3.0f};
        const ConvWeights f = fold_batchnorm(w);
        CHECK(f.kernel[0] == doctest::Approx(2.0f).epsilon(1e-6));
        CHECK(f.biases[0] == doctest::Approx(-6.0f).epsilon(1e-6));
    }
}

TEST_CASE("folding a whole network preserves its outputs") {
    const char* toy_cfg = R"(
[net]
width=32
height=32
channels=3

[convolutional]
batch_normalize=1
filters=8
size=3
stride=1
pad=1
activation=leaky

[maxpool]
size=2
stride=2

[convolutional]
batch_normalize=1
filters=12
size=3
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=4
size=1
stride=1
activation=linear
)";
    const NetworkDef net = parse_cfg(toy_cfg);
    for (unsigned seed : {5u, 6u}) {
        const WeightStore weights = fixtures::make_random_weights(net, seed);
        const FloatNetwork plain(net, weights);
        const FloatNetwork folded(net, fold_batchnorm(weights));
        Tensor input(3, 32, 32);
        std::mt19937 rng(seed);
        std::uniform_real_distribution<float> dist(0.0f, 1.0f);
        for (auto& v : input.v)
            v = dist(rng);
        const std::vector<Tensor> a = plain.forward_all(input);
        const std::vector<Tensor> b = folded.forward_all(input);
        const Tensor& last_a = a.back();
        const Tensor& last_b = b.back();
        for (std::size_t i = 0; i < last_a.v.size(); ++i)
            REQUIRE(std::fabs(last_a.v[i] - last_b.v[i]) < 1e-4f);
    }
}

TEST_CASE("folded conv matches conv+bn numerically on random layers") {
    std::mt19937 rng(42);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::uniform_real_distribution<float> var_dist(0.1f, 2.0f);
    for (int trial = 0; trial < 20; ++trial) {
        ConvWeights w;
        w.filters = 3;
        w.in_channels = 2;
        w.size = 3;
        w.batch_normalize = true;
        w.biases.resize(3);
        w.scales.resize(3);
        w.rolling_mean.resize(3);
        w.rolling_variance.resize(3);
        for (int i = 0; i < 3; ++i) {
            w.biases[i] = dist(rng);
            w.scales[i] = dist(rng);
            w.rolling_mean[i] = dist(rng);
            w.rolling_variance[i] = var_dist(rng);
        }
        w.kernel.resize(w.kernel_count());
        for (auto& v : w.kernel)
            v = dist(rng);

        Tensor input(2, 8, 8);
        for (auto& v : input.v)
            v = dist(rng);

        const Tensor with_bn = conv2d(input, w, 1, 1, Activation::leaky);
        const Tensor folded =
            conv2d(input, fold_batchnorm(w), 1, 1, Activation::leaky);
        REQUIRE(with_bn.v.size() == folded.v.size());
        for (std::size_t i = 0; i < with_bn.v.size(); ++i)
            CHECK(std::fabs(with_bn.v[i] - folded.v[i]) < 1e-4f);
    }
}
