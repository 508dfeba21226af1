// Deterministic procedural fixtures shared by the unit, CLI and acceptance
// suites: rendered tube scenes, synthetic disparity, and weight builders for
// the shipped network definitions.
#ifndef TUBELOC_TESTS_FIXTURES_HPP
#define TUBELOC_TESTS_FIXTURES_HPP

#include "tubeloc/darknet.hpp"
#include "tubeloc/imgcore.hpp"

// Fixture cfg variants read the shipped data files.
#ifndef TUBELOC_DATA_DIR
#error "TUBELOC_DATA_DIR must be defined"
#endif

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

namespace fixtures {

using tubeloc::ConvWeights;
using tubeloc::DisparityImage;
using tubeloc::GrayImage;
using tubeloc::LayerKind;
using tubeloc::NetworkDef;
using tubeloc::WeightStore;

inline GrayImage random_gray(int w, int h, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> dist(0, 255);
    GrayImage image(w, h);
    for (auto& p : image.pixels)
        p = static_cast<std::uint8_t>(dist(rng));
    return image;
}

struct TubeSpec {
    double cx = 0;
    double cy = 0;
    double angle_deg = 0; // direction of the long axis, image coords
    double length = 60;
    double width = 14;
    std::uint8_t fg = 217;
    std::uint8_t bg = 26;

    tubeloc::BoundingBox bounds() const {
        const double rad = angle_deg * std::numbers::pi / 180.0;
        const double ex = std::fabs(std::cos(rad)) * length / 2 +
                          std::fabs(std::sin(rad)) * width / 2;
        const double ey = std::fabs(std::sin(rad)) * length / 2 +
                          std::fabs(std::cos(rad)) * width / 2;
        return {cx - ex, cy - ey, 2 * ex, 2 * ey};
    }
};

// Antialiased rotated rectangle (4x4 coverage supersampling) on a flat
// background, with optional uniform pixel noise.
inline GrayImage render_tube(int w, int h, const TubeSpec& spec,
                             unsigned noise_seed = 0, int noise_amp = 0) {
    GrayImage image(w, h, spec.bg);
    const double rad = spec.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const auto box = spec.bounds();
    const int x0 = std::max(0, static_cast<int>(box.x) - 2);
    const int y0 = std::max(0, static_cast<int>(box.y) - 2);
    const int x1 = std::min(w, static_cast<int>(box.right()) + 3);
    const int y1 = std::min(h, static_cast<int>(box.bottom()) + 3);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            int hits = 0;
            for (int sy = 0; sy < 4; ++sy) {
                for (int sx = 0; sx < 4; ++sx) {
                    const double px = x + (sx + 0.5) / 4.0 - spec.cx;
                    const double py = y + (sy + 0.5) / 4.0 - spec.cy;
                    const double u = c * px + s * py;
                    const double v = -s * px + c * py;
                    if (std::fabs(u) <= spec.length / 2 && std::fabs(v) <= spec.width / 2)
                        ++hits;
                }
            }
            if (hits > 0) {
                const double t = hits / 16.0;
                image.at(x, y) = static_cast<std::uint8_t>(
                    std::lround(spec.bg + t * (spec.fg - spec.bg)));
            }
        }
    }
    if (noise_amp > 0) {
        std::mt19937 rng(noise_seed);
        std::uniform_int_distribution<int> noise(-noise_amp, noise_amp);
        for (auto& p : image.pixels)
            p = static_cast<std::uint8_t>(std::clamp(p + noise(rng), 0, 255));
    }
    return image;
}

struct Scene {
    GrayImage image;
    TubeSpec tube;
};

// Camera-style frame: dark terrain with gentle shading, a few darker rocks,
// one bright tube somewhere around the middle.
inline Scene render_scene(int w, int h, unsigned seed) {
    std::mt19937 rng(seed);
    Scene scene;
    scene.image = GrayImage(w, h);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double gx = unit(rng) * 0.05;
    const double gy = unit(rng) * 0.05;
    const double base = 22 + unit(rng) * 18;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            scene.image.at(x, y) = static_cast<std::uint8_t>(
                std::clamp(base + gx * x + gy * y, 0.0, 70.0));

    // Rocks: dark ellipses, never bright enough to fire the detector.
    std::uniform_int_distribution<int> rock_count(2, 6);
    const int rocks = rock_count(rng);
    for (int r = 0; r < rocks; ++r) {
        const double rx = unit(rng) * w;
        const double ry = unit(rng) * h;
        const double ra = 8 + unit(rng) * 24;
        const double rb = 6 + unit(rng) * 18;
        const int shade = static_cast<int>(8 + unit(rng) * 30);
        for (int y = std::max(0, static_cast<int>(ry - rb));
             y < std::min(h, static_cast<int>(ry + rb) + 1); ++y)
            for (int x = std::max(0, static_cast<int>(rx - ra));
                 x < std::min(w, static_cast<int>(rx + ra) + 1); ++x) {
                const double nx = (x - rx) / ra, ny = (y - ry) / rb;
                if (nx * nx + ny * ny <= 1.0)
                    scene.image.at(x, y) = static_cast<std::uint8_t>(shade);
            }
    }

    scene.tube.cx = w * (0.3 + unit(rng) * 0.4);
    scene.tube.cy = h * (0.3 + unit(rng) * 0.4);
    scene.tube.angle_deg = unit(rng) * 180.0;
    scene.tube.length = 50 + unit(rng) * 60;
    scene.tube.width = 12 + unit(rng) * 6;
    scene.tube.fg = 217;
    scene.tube.bg = 0; // unused when compositing

    // Composite the tube over the terrain.
    const double rad = scene.tube.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const auto box = scene.tube.bounds();
    for (int y = std::max(0, static_cast<int>(box.y) - 2);
         y < std::min(h, static_cast<int>(box.bottom()) + 3); ++y) {
        for (int x = std::max(0, static_cast<int>(box.x) - 2);
             x < std::min(w, static_cast<int>(box.right()) + 3); ++x) {
            int hits = 0;
            for (int sy = 0; sy < 4; ++sy)
                for (int sx = 0; sx < 4; ++sx) {
                    const double px = x + (sx + 0.5) / 4.0 - scene.tube.cx;
                    const double py = y + (sy + 0.5) / 4.0 - scene.tube.cy;
                    const double u = c * px + s * py;
                    const double v = -s * px + c * py;
                    if (std::fabs(u) <= scene.tube.length / 2 &&
                        std::fabs(v) <= scene.tube.width / 2)
                        ++hits;
                }
            if (hits > 0) {
                const double t = hits / 16.0;
                const double under = scene.image.at(x, y);
                scene.image.at(x, y) = static_cast<std::uint8_t>(
                    std::lround(under + t * (scene.tube.fg - under)));
            }
        }
    }
    return scene;
}

// Hand-built weights that turn the shipped detector cfgs into a bright-blob
// detector: channel 0 of every backbone layer carries the brightness map via
// a single center tap, and the coarse head turns it into an objectness
// logit. No training involved; used to exercise the full float/int8 pipeline
// with meaningful detections. All box logits stay at zero (exactly
// representable in the int8 domain), so detections decode to anchor-sized
// boxes bit-equal across the float and quantized paths.
inline WeightStore make_blob_detector_weights(const NetworkDef& net) {
    constexpr float kGain = 60.0f;      // objectness logit slope
    constexpr float kThreshold = 0.48f; // neighborhood brightness that flips it
    constexpr float kClassBias = 8.0f;

    // The conv feeding the first head gets a 3x3 spatial mean instead of a
    // center tap, so the objectness peaks at the cell whose whole pooled
    // neighborhood is bright: one or two cells per blob, centered on it.
    int last_backbone_conv = -1;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& layer = net.layers[i];
        if (layer.kind != LayerKind::convolutional)
            continue;
        const bool head = layer.attr_int("batch_normalize", 0) == 0 &&
                          layer.attr_string("activation", "linear") == "linear";
        if (head)
            break;
        if (layer.attr_int("size", 1) == 3)
            last_backbone_conv = static_cast<int>(i);
    }

    WeightStore store;
    store.header = {0, 2, 0, 0};
    bool coarse_head_done = false;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& layer = net.layers[i];
        if (layer.kind != LayerKind::convolutional)
            continue;
        ConvWeights w;
        w.layer_index = static_cast<int>(i);
        w.filters = layer.attr_int("filters", 0);
        w.in_channels = layer.in_c;
        w.size = layer.attr_int("size", 1);
        w.batch_normalize = layer.attr_int("batch_normalize", 0) != 0;
        w.biases.assign(w.filters, 0.0f);
        w.kernel.assign(w.kernel_count(), 0.0f);
        if (w.batch_normalize) {
            w.scales.assign(w.filters, 1.0f);
            w.rolling_mean.assign(w.filters, 0.0f);
            w.rolling_variance.assign(w.filters, 1.0f - 1e-6f);
        }

        const std::size_t center =
            static_cast<std::size_t>(w.size / 2) * w.size + w.size / 2;
        const bool is_head = !w.batch_normalize &&
                             layer.attr_string("activation", "linear") == "linear";
        if (is_head) {
            const int per_anchor = 6; // 5 + one class
            const int anchor_count = w.filters / per_anchor;
            for (int a = 0; a < anchor_count; ++a) {
                float* obj_w = w.kernel.data() +
                               static_cast<std::size_t>(a * per_anchor + 4) *
                                   w.in_channels * w.size * w.size;
                if (!coarse_head_done && a == 0) {
                    obj_w[center] = kGain; // channel 0, kernel center
                    w.biases[a * per_anchor + 4] = -kGain * kThreshold;
                } else {
                    w.biases[a * per_anchor + 4] = -20.0f; // anchor disabled
                }
                w.biases[a * per_anchor + 5] = kClassBias;
            }
            // A lone unit tap keeps the per-tensor weight scale sane on heads
            // whose every anchor is disabled (tx of anchor 0, harmless).
            w.kernel[center] = 1.0f;
            coarse_head_done = true;
        } else if (static_cast<int>(i) == last_backbone_conv && !coarse_head_done) {
            for (int t = 0; t < 9; ++t)
                w.kernel[t] = 1.0f / 9.0f; // filter 0, channel 0, full 3x3
        } else {
            // Filter 0 copies input channel 0 through the kernel center.
            w.kernel[center] = 1.0f;
        }
        store.conv.push_back(std::move(w));
    }
    return store;
}

// Shipped tiny cfg with the coarse head's first anchor widened to 176x176:
// the blob detector emits zero tw/th, so this anchor IS the decoded box, and
// at that size neighbouring grid cells suppress each other down to one or
// two boxes per blob.
inline std::string detector_cfg_text() {
    std::ifstream in(std::filesystem::path(TUBELOC_DATA_DIR) / "tube-yolov3-tiny.cfg");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    const std::string from = "anchors = 10,14,  23,27,  37,58,  81,82,  135,169,  344,319";
    const std::string to = "anchors = 10,14,  23,27,  37,58,  176,176,  135,169,  344,319";
    for (std::size_t p = text.find(from); p != std::string::npos; p = text.find(from))
        text.replace(p, from.size(), to);
    return text;
}

inline NetworkDef detector_net() { return tubeloc::parse_cfg(detector_cfg_text()); }

inline WeightStore make_random_weights(const NetworkDef& net, unsigned seed) {
    std::mt19937 rng(seed);
    WeightStore store;
    store.header = {0, 2, 0, 1000};
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& layer = net.layers[i];
        if (layer.kind != LayerKind::convolutional)
            continue;
        ConvWeights w;
        w.layer_index = static_cast<int>(i);
        w.filters = layer.attr_int("filters", 0);
        w.in_channels = layer.in_c;
        w.size = layer.attr_int("size", 1);
        w.batch_normalize = layer.attr_int("batch_normalize", 0) != 0;
        const double fan_in = static_cast<double>(w.in_channels) * w.size * w.size;
        std::normal_distribution<float> kernel_dist(
            0.0f, static_cast<float>(1.0 / std::sqrt(fan_in)));
        std::normal_distribution<float> bias_dist(0.0f, 0.1f);
        std::uniform_real_distribution<float> scale_dist(0.8f, 1.2f);
        std::uniform_real_distribution<float> var_dist(0.5f, 1.5f);
        w.biases.resize(w.filters);
        for (auto& b : w.biases)
            b = bias_dist(rng);
        if (w.batch_normalize) {
            w.scales.resize(w.filters);
            w.rolling_mean.resize(w.filters);
            w.rolling_variance.resize(w.filters);
            for (auto& v : w.scales)
                v = scale_dist(rng);
            for (auto& v : w.rolling_mean)
                v = bias_dist(rng);
            for (auto& v : w.rolling_variance)
                v = var_dist(rng);
        }
        w.kernel.resize(w.kernel_count());
        for (auto& v : w.kernel)
            v = kernel_dist(rng);
        store.conv.push_back(std::move(w));
    }
    return store;
}

inline DisparityImage constant_disparity(int w, int h, float value) {
    return DisparityImage(w, h, value);
}

inline std::filesystem::path make_temp_dir(const std::string& prefix) {
    static std::atomic<unsigned> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     (prefix + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace fixtures

#endif
