#include "tubeloc/nnexec.hpp"
#include "tubeloc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tubeloc {

Activation activation_from_string(const std::string& name) {
    if (name == "linear")
        return Activation::linear;
    if (name == "leaky")
        return Activation::leaky;
    if (name == "relu")
        return Activation::relu;
    throw ParseError("unknown activation \"" + name + "\"");
}

float activate(float x, Activation kind) {
    switch (kind) {
    case Activation::linear: return x;
    case Activation::leaky: return x > 0.0f ? x : 0.1f * x;
    case Activation::relu: return x > 0.0f ? x : 0.0f;
    }
    return x;
}

Tensor image_to_tensor(const GrayImage& letterboxed, int expected_w, int expected_h) {
    if (letterboxed.width != expected_w || letterboxed.height != expected_h)
        throw Error("image_to_tensor: expected " + std::to_string(expected_w) + "x" +
                    std::to_string(expected_h) + ", got " +
                    std::to_string(letterboxed.width) + "x" +
                    std::to_string(letterboxed.height));
    Tensor t(3, expected_h, expected_w);
    const std::size_t plane = t.v.size() / 3;
    for (std::size_t i = 0; i < plane; ++i) {
        const float v = static_cast<float>(letterboxed.pixels[i]) / 255.0f;
        t.v[i] = v;
        t.v[plane + i] = v;
        t.v[2 * plane + i] = v;
    }
    return t;
}

namespace {

// Zero-padded copy; removes bounds checks from the conv inner loops.
Tensor pad_input(const Tensor& input, int pad) {
    if (pad == 0)
        return input;
    Tensor padded(input.c, input.h + 2 * pad, input.w + 2 * pad);
    for (int c = 0; c < input.c; ++c) {
        const float* src = input.plane(c);
        float* dst = padded.plane(c);
        for (int y = 0; y < input.h; ++y)
            std::copy_n(src + static_cast<std::size_t>(y) * input.w, input.w,
                        dst + (static_cast<std::size_t>(y + pad) * padded.w + pad));
    }
    return padded;
}

} // namespace

Tensor conv2d(const Tensor& input, const ConvWeights& weights, int stride, int pad,
              Activation activation) {
    if (input.c != weights.in_channels)
        throw Error("conv2d: input has " + std::to_string(input.c) +
                    " channels, kernel expects " + std::to_string(weights.in_channels));
    const int k = weights.size;
    const int out_h = (input.h + 2 * pad - k) / stride + 1;
    const int out_w = (input.w + 2 * pad - k) / stride + 1;
    if (out_h < 1 || out_w < 1)
        throw Error("conv2d: output collapses to zero size");

    const Tensor padded = pad_input(input, pad);
    Tensor out(weights.filters, out_h, out_w);

    for (int o = 0; o < weights.filters; ++o) {
        float* out_plane = out.plane(o);
        std::fill_n(out_plane, static_cast<std::size_t>(out_h) * out_w,
                    weights.batch_normalize ? 0.0f : weights.biases[o]);
        const float* kernel_o = weights.kernel.data() +
                                static_cast<std::size_t>(o) * input.c * k * k;
        for (int ic = 0; ic < input.c; ++ic) {
            const float* in_plane = padded.plane(ic);
            const float* kernel_c = kernel_o + static_cast<std::size_t>(ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const float wv = kernel_c[ky * k + kx];
                    if (wv == 0.0f)
                        continue;
                    for (int oy = 0; oy < out_h; ++oy) {
                        const float* in_row = in_plane +
                                              static_cast<std::size_t>(oy * stride + ky) *
                                                  padded.w +
                                              kx;
                        float* out_row = out_plane + static_cast<std::size_t>(oy) * out_w;
                        if (stride == 1) {
                            for (int ox = 0; ox < out_w; ++ox)
                                out_row[ox] += wv * in_row[ox];
                        } else {
                            for (int ox = 0; ox < out_w; ++ox)
                                out_row[ox] += wv * in_row[ox * stride];
                        }
                    }
                }
            }
        }
    }

    if (weights.batch_normalize) {
        for (int o = 0; o < weights.filters; ++o) {
            const double denom = std::sqrt(
                static_cast<double>(weights.rolling_variance[o]) + kBatchNormEpsilon);
            const float gain = static_cast<float>(weights.scales[o] / denom);
            const float shift = static_cast<float>(
                weights.biases[o] - weights.scales[o] * weights.rolling_mean[o] / denom);
            float* out_plane = out.plane(o);
            const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
            for (std::size_t i = 0; i < n; ++i)
                out_plane[i] = out_plane[i] * gain + shift;
        }
    }

    for (float& x : out.v)
        x = activate(x, activation);
    return out;
}

Tensor maxpool2d(const Tensor& input, int size, int stride) {
    // Darknet geometry: implicit pad = size-1, window origin at i*stride,
    // out-of-bounds positions ignored. Preserves dims for the stride-1 pool.
    const int pad = size - 1;
    const int out_h = (input.h + pad - size) / stride + 1;
    const int out_w = (input.w + pad - size) / stride + 1;
    Tensor out(input.c, out_h, out_w);
    for (int c = 0; c < input.c; ++c) {
        const float* in_plane = input.plane(c);
        float* out_plane = out.plane(c);
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                const int y0 = oy * stride;
                const int x0 = ox * stride;
                const int y1 = std::min(y0 + size, input.h);
                const int x1 = std::min(x0 + size, input.w);
                float best = in_plane[static_cast<std::size_t>(y0) * input.w + x0];
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x)
                        best = std::max(best,
                                        in_plane[static_cast<std::size_t>(y) * input.w + x]);
                out_plane[static_cast<std::size_t>(oy) * out_w + ox] = best;
            }
        }
    }
    return out;
}

Tensor upsample2x(const Tensor& input) {
    Tensor out(input.c, input.h * 2, input.w * 2);
    for (int c = 0; c < input.c; ++c) {
        const float* in_plane = input.plane(c);
        float* out_plane = out.plane(c);
        for (int y = 0; y < out.h; ++y) {
            const float* in_row = in_plane + static_cast<std::size_t>(y / 2) * input.w;
            float* out_row = out_plane + static_cast<std::size_t>(y) * out.w;
            for (int x = 0; x < out.w; ++x)
                out_row[x] = in_row[x / 2];
        }
    }
    return out;
}

Tensor route_concat(const std::vector<const Tensor*>& inputs) {
    if (inputs.empty())
        throw Error("route_concat: no inputs");
    const int h = inputs.front()->h;
    const int w = inputs.front()->w;
    int channels = 0;
    for (const Tensor* t : inputs) {
        if (t->h != h || t->w != w)
            throw Error("route_concat: spatial dims differ (" + std::to_string(t->h) +
                        "x" + std::to_string(t->w) + " vs " + std::to_string(h) + "x" +
                        std::to_string(w) + ")");
        channels += t->c;
    }
    Tensor out(channels, h, w);
    float* dst = out.v.data();
    for (const Tensor* t : inputs) {
        std::copy(t->v.begin(), t->v.end(), dst);
        dst += t->v.size();
    }
    return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

std::vector<Detection> yolo_decode(const Tensor& head, const YoloHeadConfig& config,
                                   const LetterboxTransform& transform,
                                   double conf_threshold) {
    const int per_anchor = 5 + config.classes;
    if (head.c != static_cast<int>(config.mask.size()) * per_anchor ||
        head.h != config.grid_h || head.w != config.grid_w)
        throw Error("yolo_decode: head dims inconsistent with config");

    std::vector<Detection> detections;
    for (std::size_t a = 0; a < config.mask.size(); ++a) {
        const auto [anchor_w, anchor_h] = config.anchors[config.mask[a]];
        const int base = static_cast<int>(a) * per_anchor;
        for (int i = 0; i < config.grid_h; ++i) {
            for (int j = 0; j < config.grid_w; ++j) {
                const double obj = sigmoid(head.at(base + 4, i, j));
                double best_cls = 0.0;
                int best_id = 0;
                for (int k = 0; k < config.classes; ++k) {
                    const double p = sigmoid(head.at(base + 5 + k, i, j));
                    if (p > best_cls) {
                        best_cls = p;
                        best_id = k;
                    }
                }
                const double confidence = obj * best_cls;
                if (confidence < conf_threshold)
                    continue;

                const double bx = (sigmoid(head.at(base + 0, i, j)) + j) * config.stride;
                const double by = (sigmoid(head.at(base + 1, i, j)) + i) * config.stride;
                const double tw = std::clamp<double>(head.at(base + 2, i, j), -30.0, 30.0);
                const double th = std::clamp<double>(head.at(base + 3, i, j), -30.0, 30.0);
                const double bw = anchor_w * std::exp(tw);
                const double bh = anchor_h * std::exp(th);

                BoundingBox network_box{bx - bw / 2.0, by - bh / 2.0, bw, bh};
                try {
                    Detection det;
                    det.box = unletterbox_box(network_box, transform);
                    det.confidence = confidence;
                    det.class_id = best_id;
                    detections.push_back(det);
                } catch (const PipelineError&) {
                    // Box decoded entirely into the padding bands: discard.
                }
            }
        }
    }
    return detections;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) {
                         return a.confidence > b.confidence;
                     });
    std::vector<Detection> kept;
    for (const Detection& candidate : detections) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (box_iou(candidate.box, k.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed)
            kept.push_back(candidate);
    }
    return kept;
}

FloatNetwork::FloatNetwork(NetworkDef def, WeightStore weights)
    : def_(std::move(def)), weights_(std::move(weights)) {
    for (std::size_t i = 0; i < def_.layers.size(); ++i) {
        const LayerDef& layer = def_.layers[i];
        if (layer.kind != LayerKind::convolutional)
            continue;
        const ConvWeights* w = weights_.for_layer(static_cast<int>(i));
        if (w == nullptr)
            throw Error("FloatNetwork: no weights for convolutional layer " +
                        std::to_string(i));
        if (w->filters != layer.out_c || w->in_channels != layer.in_c ||
            w->size != layer.attr_int("size", 1))
            throw Error("FloatNetwork: weight shape mismatch at layer " +
                        std::to_string(i));
    }
}

YoloHeadConfig make_head_config(const NetworkDef& net, int layer_index) {
    const LayerDef& layer = net.layers[layer_index];
    YoloHeadConfig config;
    const std::vector<double> anchors = layer.attr_list("anchors");
    for (std::size_t i = 0; i + 1 < anchors.size(); i += 2)
        config.anchors.emplace_back(anchors[i], anchors[i + 1]);
    for (double m : layer.attr_list("mask"))
        config.mask.push_back(static_cast<int>(m));
    config.classes = layer.attr_int("classes", 1);
    config.grid_h = layer.in_h;
    config.grid_w = layer.in_w;
    config.stride = static_cast<double>(net.width) / layer.in_w;
    config.layer_index = layer_index;
    return config;
}

YoloHeadConfig FloatNetwork::head_config(int layer_index) const {
    return make_head_config(def_, layer_index);
}

std::vector<Tensor> FloatNetwork::forward_all(const Tensor& input) const {
    if (input.c != def_.channels || input.h != def_.height || input.w != def_.width)
        throw Error("forward: input dims do not match network input");

    std::vector<Tensor> outputs;
    outputs.reserve(def_.layers.size());
    const Tensor* current = &input;

    for (std::size_t i = 0; i < def_.layers.size(); ++i) {
        const LayerDef& layer = def_.layers[i];
        Tensor out;
        try {
            switch (layer.kind) {
            case LayerKind::convolutional: {
                const ConvWeights& w = *weights_.for_layer(static_cast<int>(i));
                const int size = layer.attr_int("size", 1);
                const int stride = layer.attr_int("stride", 1);
                const int pad = layer.attr_int("pad", 0) ? size / 2
                                                         : layer.attr_int("padding", 0);
                const Activation act =
                    activation_from_string(layer.attr_string("activation", "linear"));
                out = conv2d(*current, w, stride, pad, act);
                break;
            }
            case LayerKind::maxpool:
                out = maxpool2d(*current, layer.attr_int("size", 2),
                                layer.attr_int("stride", layer.attr_int("size", 2)));
                break;
            case LayerKind::upsample:
                out = upsample2x(*current);
                break;
            case LayerKind::route: {
                std::vector<const Tensor*> inputs;
                for (int src : layer.route_layers)
                    inputs.push_back(&outputs[src]);
                out = route_concat(inputs);
                break;
            }
            case LayerKind::shortcut: {
                const Tensor& from = outputs[layer.shortcut_from];
                const Activation act =
                    activation_from_string(layer.attr_string("activation", "linear"));
                out = *current;
                for (std::size_t n = 0; n < out.v.size(); ++n)
                    out.v[n] = activate(out.v[n] + from.v[n], act);
                break;
            }
            case LayerKind::yolo:
                out = *current; // heads keep their input for decoding
                break;
            }
        } catch (const Error& e) {
            throw Error("layer " + std::to_string(i) + " [" + to_string(layer.kind) +
                        "]: " + e.what());
        }
        if (out.c != layer.out_c || out.h != layer.out_h || out.w != layer.out_w)
            throw Error("layer " + std::to_string(i) +
                        ": runtime shape disagrees with static inference");
        outputs.push_back(std::move(out));
        current = &outputs.back();
    }
    return outputs;
}

std::vector<HeadOutput> FloatNetwork::forward(const Tensor& input) const {
    std::vector<Tensor> outputs = forward_all(input);
    std::vector<HeadOutput> heads;
    for (std::size_t i = 0; i < def_.layers.size(); ++i) {
        if (def_.layers[i].kind != LayerKind::yolo)
            continue;
        heads.push_back(HeadOutput{std::move(outputs[i]),
                                   head_config(static_cast<int>(i))});
    }
    return heads;
}

Detector Detector::float_model(NetworkDef def, WeightStore weights) {
    return Detector(std::variant<FloatNetwork, QuantNetwork>(
        std::in_place_type<FloatNetwork>, std::move(def), std::move(weights)));
}

Detector Detector::quantized_model(NetworkDef def, WeightStore weights,
                                   Calibration calibration) {
    return Detector(std::variant<FloatNetwork, QuantNetwork>(
        std::in_place_type<QuantNetwork>, std::move(def), std::move(weights),
        std::move(calibration)));
}

bool Detector::quantized() const {
    return std::holds_alternative<QuantNetwork>(net_);
}

const NetworkDef& Detector::def() const {
    return std::visit([](const auto& n) -> const NetworkDef& { return n.def(); }, net_);
}

std::vector<Detection> Detector::detect(const GrayImage& image, double conf_threshold,
                                        double nms_iou) const {
    const NetworkDef& net = def();
    if (net.width != net.height)
        throw Error("detect: network input must be square");
    const LetterboxResult boxed = letterbox(image, net.width);
    const Tensor input = image_to_tensor(boxed.image, net.width, net.height);
    const std::vector<HeadOutput> heads = std::visit(
        [&](const auto& n) { return n.forward(input); }, net_);

    std::vector<Detection> all;
    for (const HeadOutput& head : heads) {
        std::vector<Detection> decoded =
            yolo_decode(head.tensor, head.config, boxed.transform, conf_threshold);
        all.insert(all.end(), decoded.begin(), decoded.end());
    }
    return nms(std::move(all), nms_iou);
}

} // namespace tubeloc
