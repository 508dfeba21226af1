#ifndef TUBELOC_NNEXEC_HPP
#define TUBELOC_NNEXEC_HPP

#include "tubeloc/darknet.hpp"
#include "tubeloc/imgcore.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tubeloc {

// Channel-major, row-major float tensor.
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(c_) * h_ * w_, 0.0f) {}

    std::size_t size() const { return v.size(); }
    float at(int ci, int y, int x) const {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    float& at(int ci, int y, int x) {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    const float* plane(int ci) const {
        return v.data() + static_cast<std::size_t>(ci) * h * w;
    }
    float* plane(int ci) {
        return v.data() + static_cast<std::size_t>(ci) * h * w;
    }
};

enum class Activation { linear, leaky, relu };

Activation activation_from_string(const std::string& name);
float activate(float x, Activation kind);

// Gray plane replicated to three channels, scaled to [0,1].
Tensor image_to_tensor(const GrayImage& letterboxed, int expected_w = 416,
                       int expected_h = 416);

// Cross-correlation with zero padding; batch norm applied when the weights
// carry it, then the activation.
Tensor conv2d(const Tensor& input, const ConvWeights& weights, int stride, int pad,
              Activation activation);
Tensor maxpool2d(const Tensor& input, int size, int stride);
Tensor upsample2x(const Tensor& input);
Tensor route_concat(const std::vector<const Tensor*>& inputs);

struct YoloHeadConfig {
    std::vector<std::pair<double, double>> anchors; // all anchor (w,h) pairs
    std::vector<int> mask;                          // indices used by this head
    int classes = 1;
    int grid_h = 0;
    int grid_w = 0;
    double stride = 0; // network pixels per cell
    int layer_index = 0;
};

struct Detection {
    BoundingBox box; // original-image coordinates
    double confidence = 0;
    int class_id = 0;
};

struct HeadOutput {
    Tensor tensor;
    YoloHeadConfig config;
};

YoloHeadConfig make_head_config(const NetworkDef& net, int layer_index);

// Decode one head: per cell and anchor, box from the sigmoid/exp transform,
// confidence = sigma(objectness) * sigma(class score), boxes mapped back to
// source-image coordinates. Boxes entirely inside the letterbox padding are
// dropped.
std::vector<Detection> yolo_decode(const Tensor& head, const YoloHeadConfig& config,
                                   const LetterboxTransform& transform,
                                   double conf_threshold);

// Greedy descending-confidence suppression.
std::vector<Detection> nms(std::vector<Detection> detections,
                           double iou_threshold = 0.45);

// Float32 executor for a parsed network.
class FloatNetwork {
public:
    FloatNetwork(NetworkDef def, WeightStore weights);

    const NetworkDef& def() const { return def_; }
    const WeightStore& weights() const { return weights_; }

    // All per-layer outputs, in layer order (yolo layers store their input).
    std::vector<Tensor> forward_all(const Tensor& input) const;
    std::vector<HeadOutput> forward(const Tensor& input) const;

    YoloHeadConfig head_config(int layer_index) const;

private:
    NetworkDef def_;
    WeightStore weights_;
};

// ---------------------------------------------------------------------------
// 8-bit fixed-point path
// ---------------------------------------------------------------------------

struct QuantParams {
    double scale = 1.0;
    int zero_point = 0; // in [-128, 127]

    std::int8_t quantize(double real) const;
    double dequantize(std::int8_t q) const {
        return scale * (static_cast<int>(q) - zero_point);
    }
};

// Affine params covering [mn, mx] (range widened to include zero).
QuantParams activation_params_from_range(double mn, double mx);
// Symmetric params for weights: zero_point 0, scale = max|w| / 127.
QuantParams weight_params_symmetric(double max_abs);

struct QuantTensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<std::int8_t> q;
    QuantParams params;

    QuantTensor() = default;
    QuantTensor(int c_, int h_, int w_, QuantParams p)
        : c(c_), h(h_), w(w_),
          q(static_cast<std::size_t>(c_) * h_ * w_, 0), params(p) {}

    std::int8_t at(int ci, int y, int x) const {
        return q[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    std::int8_t& at(int ci, int y, int x) {
        return q[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
};

QuantTensor quantize_tensor(const Tensor& t, QuantParams params);
Tensor dequantize_tensor(const QuantTensor& t);

// Per-tensor activation ranges and derived affine params, observed by running
// the deployment-transformed float network (folded batch norm, leaky replaced
// by relu) over a calibration set.
struct Calibration {
    QuantParams input;
    std::vector<QuantParams> layers; // one per network layer

    std::pair<double, double> input_range{0, 0};
    std::vector<std::pair<double, double>> layer_ranges;

    void save(const std::filesystem::path& path) const;
    static Calibration load(const std::filesystem::path& path, const NetworkDef& net);
};

// Deployment transform applied before quantized execution: every leaky
// activation becomes relu.
NetworkDef replace_leaky_with_relu(const NetworkDef& net);

Calibration calibrate(const NetworkDef& net, const WeightStore& weights,
                      std::span<const GrayImage> calibration_images);

// Int8 executor: weights quantized per-tensor symmetric, activations
// per-tensor affine, conv accumulates in int32 and requantizes with a
// double multiplier, leaky activations run as relu.
class QuantNetwork {
public:
    QuantNetwork(NetworkDef def, WeightStore weights, Calibration calibration);

    const NetworkDef& def() const { return def_; }
    const Calibration& calibration() const { return calib_; }

    struct QuantConv {
        QuantParams weight_params;
        std::vector<std::int8_t> kernel_q;
        std::vector<std::int32_t> bias_q;     // scale = s_in * s_w
        std::vector<std::int32_t> kernel_sums; // per filter, for zero-point folding
    };
    const QuantConv& conv_weights(int layer_index) const;

    // Dequantized per-layer outputs (for parity checks).
    std::vector<Tensor> forward_all_dequantized(const Tensor& input) const;
    std::vector<HeadOutput> forward(const Tensor& input) const;

private:
    struct LayerExec;
    std::vector<QuantTensor> run(const Tensor& input) const;

    NetworkDef def_; // transformed: leaky -> relu
    Calibration calib_;
    std::vector<LayerExec> exec_;
    WeightStore folded_;
};

struct QuantNetwork::LayerExec {
    QuantConv conv;
    QuantParams out_params; // effective params of this layer's output
    double requant_multiplier = 0; // s_in * s_w / s_out for conv layers
};

// Float or int8 model behind one detection entry point.
class Detector {
public:
    static Detector float_model(NetworkDef def, WeightStore weights);
    static Detector quantized_model(NetworkDef def, WeightStore weights,
                                    Calibration calibration);

    std::vector<Detection> detect(const GrayImage& image, double conf_threshold = 0.75,
                                  double nms_iou = 0.45) const;

    bool quantized() const;
    const NetworkDef& def() const;

private:
    explicit Detector(std::variant<FloatNetwork, QuantNetwork> net)
        : net_(std::move(net)) {}
    std::variant<FloatNetwork, QuantNetwork> net_;
};

} // namespace tubeloc

#endif
