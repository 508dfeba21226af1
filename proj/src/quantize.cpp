#include "tubeloc/errors.hpp"
#include "tubeloc/nnexec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace tubeloc {

namespace {

std::int8_t clamp_q(long v) {
    return static_cast<std::int8_t>(std::clamp(v, -128L, 127L));
}

} // namespace

std::int8_t QuantParams::quantize(double real) const {
    return clamp_q(std::lround(real / scale) + zero_point);
}

QuantParams activation_params_from_range(double mn, double mx) {
    // Zero must stay representable: padding and relu both produce it.
    mn = std::min(mn, 0.0);
    mx = std::max(mx, 0.0);
    QuantParams p;
    p.scale = std::max(mx - mn, 1e-9) / 255.0;
    p.zero_point = static_cast<int>(
        std::clamp(std::lround(-128.0 - mn / p.scale), -128L, 127L));
    return p;
}

QuantParams weight_params_symmetric(double max_abs) {
    QuantParams p;
    p.scale = std::max(max_abs, 1e-9) / 127.0;
    p.zero_point = 0;
    return p;
}

QuantTensor quantize_tensor(const Tensor& t, QuantParams params) {
    QuantTensor q(t.c, t.h, t.w, params);
    for (std::size_t i = 0; i < t.v.size(); ++i)
        q.q[i] = params.quantize(t.v[i]);
    return q;
}

Tensor dequantize_tensor(const QuantTensor& t) {
    Tensor out(t.c, t.h, t.w);
    for (std::size_t i = 0; i < t.q.size(); ++i)
        out.v[i] = static_cast<float>(t.params.dequantize(t.q[i]));
    return out;
}

NetworkDef replace_leaky_with_relu(const NetworkDef& net) {
    NetworkDef out = net;
    for (LayerDef& layer : out.layers) {
        auto it = layer.attrs.find("activation");
        if (it != layer.attrs.end() && it->second == "leaky")
            it->second = "relu";
    }
    return out;
}

Calibration calibrate(const NetworkDef& net, const WeightStore& weights,
                      std::span<const GrayImage> calibration_images) {
    if (calibration_images.empty())
        throw Error("calibrate: empty calibration set");
    if (net.width != net.height)
        throw Error("calibrate: network input must be square");

    const NetworkDef transformed = replace_leaky_with_relu(net);
    const FloatNetwork reference(transformed, fold_batchnorm(weights));

    const double inf = std::numeric_limits<double>::infinity();
    std::pair<double, double> input_range{inf, -inf};
    std::vector<std::pair<double, double>> ranges(net.layers.size(), {inf, -inf});

    for (const GrayImage& image : calibration_images) {
        const LetterboxResult boxed = letterbox(image, net.width);
        const Tensor input = image_to_tensor(boxed.image, net.width, net.height);
        for (float v : input.v) {
            input_range.first = std::min<double>(input_range.first, v);
            input_range.second = std::max<double>(input_range.second, v);
        }
        const std::vector<Tensor> outputs = reference.forward_all(input);
        for (std::size_t i = 0; i < outputs.size(); ++i) {
            for (float v : outputs[i].v) {
                ranges[i].first = std::min<double>(ranges[i].first, v);
                ranges[i].second = std::max<double>(ranges[i].second, v);
            }
        }
    }

    Calibration calib;
    calib.input_range = input_range;
    calib.input = activation_params_from_range(input_range.first, input_range.second);
    calib.layer_ranges = ranges;
    calib.layers.reserve(ranges.size());
    for (const auto& [mn, mx] : ranges)
        calib.layers.push_back(activation_params_from_range(mn, mx));
    return calib;
}

void Calibration::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out)
        throw Error("calibration: cannot open for writing: " + path.string());
    char buf[64];
    auto line = [&](const std::string& name, const QuantParams& p) {
        std::snprintf(buf, sizeof buf, "%.17g", p.scale);
        out << name << " " << buf << " " << p.zero_point << "\n";
    };
    line("input", input);
    for (std::size_t i = 0; i < layers.size(); ++i)
        line("layer_" + std::to_string(i), layers[i]);
    if (!out)
        throw Error("calibration: write failed: " + path.string());
}

Calibration Calibration::load(const std::filesystem::path& path, const NetworkDef& net) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("calibration: cannot open: " + path.string());
    Calibration calib;
    calib.layers.resize(net.layers.size());
    std::vector<bool> seen(net.layers.size(), false);
    bool seen_input = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream ss(line);
        std::string name;
        QuantParams p;
        if (!(ss >> name >> p.scale >> p.zero_point))
            throw ParseError(path.string() + " line " + std::to_string(line_no) +
                             ": expected \"name scale zero_point\"");
        if (name == "input") {
            calib.input = p;
            seen_input = true;
        } else if (name.rfind("layer_", 0) == 0) {
            const std::size_t idx = std::stoul(name.substr(6));
            if (idx >= net.layers.size())
                throw ParseError(path.string() + ": tensor \"" + name +
                                 "\" out of range for this network");
            calib.layers[idx] = p;
            seen[idx] = true;
        } else {
            throw ParseError(path.string() + ": unknown tensor name \"" + name + "\"");
        }
    }
    if (!seen_input)
        throw ParseError(path.string() + ": missing params for tensor \"input\"");
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i])
            throw ParseError(path.string() + ": missing params for layer " +
                             std::to_string(i));
    return calib;
}

namespace {

std::int8_t requantize(std::int8_t q, const QuantParams& from, const QuantParams& to) {
    const double real = from.dequantize(q);
    return to.quantize(real);
}

} // namespace

QuantNetwork::QuantNetwork(NetworkDef def, WeightStore weights, Calibration calibration)
    : def_(replace_leaky_with_relu(def)), calib_(std::move(calibration)),
      folded_(fold_batchnorm(weights)) {
    if (calib_.layers.size() != def_.layers.size())
        throw Error("quantize: calibration covers " +
                    std::to_string(calib_.layers.size()) + " layers, network has " +
                    std::to_string(def_.layers.size()));

    exec_.resize(def_.layers.size());
    QuantParams current = calib_.input;

    for (std::size_t i = 0; i < def_.layers.size(); ++i) {
        const LayerDef& layer = def_.layers[i];
        LayerExec& exec = exec_[i];
        switch (layer.kind) {
        case LayerKind::convolutional: {
            const ConvWeights& w = *folded_.for_layer(static_cast<int>(i));
            double max_abs = 0;
            for (float k : w.kernel)
                max_abs = std::max<double>(max_abs, std::fabs(k));
            exec.conv.weight_params = weight_params_symmetric(max_abs);
            const double sw = exec.conv.weight_params.scale;
            exec.conv.kernel_q.resize(w.kernel.size());
            for (std::size_t n = 0; n < w.kernel.size(); ++n)
                exec.conv.kernel_q[n] =
                    clamp_q(std::lround(static_cast<double>(w.kernel[n]) / sw));
            const std::size_t per_filter = w.kernel_count() / w.filters;
            exec.conv.kernel_sums.resize(w.filters);
            for (int o = 0; o < w.filters; ++o) {
                std::int32_t sum = 0;
                for (std::size_t n = 0; n < per_filter; ++n)
                    sum += exec.conv.kernel_q[o * per_filter + n];
                exec.conv.kernel_sums[o] = sum;
            }
            const double bias_scale = current.scale * sw;
            exec.conv.bias_q.resize(w.filters);
            for (int o = 0; o < w.filters; ++o) {
                const double q = static_cast<double>(w.biases[o]) / bias_scale;
                exec.conv.bias_q[o] = static_cast<std::int32_t>(std::clamp<double>(
                    std::llround(q), std::numeric_limits<std::int32_t>::min(),
                    std::numeric_limits<std::int32_t>::max()));
            }
            exec.out_params = calib_.layers[i];
            exec.requant_multiplier = current.scale * sw / exec.out_params.scale;
            break;
        }
        case LayerKind::route:
        case LayerKind::shortcut:
            exec.out_params = calib_.layers[i];
            break;
        case LayerKind::maxpool:
        case LayerKind::upsample:
        case LayerKind::yolo:
            // Values pass through unchanged; keep the producing tensor's params.
            exec.out_params = current;
            break;
        }
        current = exec.out_params;
    }
}

const QuantNetwork::QuantConv& QuantNetwork::conv_weights(int layer_index) const {
    return exec_[layer_index].conv;
}

std::vector<QuantTensor> QuantNetwork::run(const Tensor& input) const {
    if (input.c != def_.channels || input.h != def_.height || input.w != def_.width)
        throw Error("forward: input dims do not match network input");

    std::vector<QuantTensor> outputs;
    outputs.reserve(def_.layers.size());
    QuantTensor qinput = quantize_tensor(input, calib_.input);
    const QuantTensor* current = &qinput;

    std::vector<std::int32_t> acc;

    for (std::size_t i = 0; i < def_.layers.size(); ++i) {
        const LayerDef& layer = def_.layers[i];
        const LayerExec& exec = exec_[i];
        QuantTensor out;

        switch (layer.kind) {
        case LayerKind::convolutional: {
            const ConvWeights& w = *folded_.for_layer(static_cast<int>(i));
            const int k = w.size;
            const int stride = layer.attr_int("stride", 1);
            const int pad = layer.attr_int("pad", 0) ? k / 2
                                                     : layer.attr_int("padding", 0);
            const Activation act =
                activation_from_string(layer.attr_string("activation", "linear"));
            if (act == Activation::leaky)
                throw Error("quantized path: leaky activation must have been replaced");

            const QuantParams in_p = current->params;
            const QuantParams out_p = exec.out_params;
            const std::int8_t zpad = static_cast<std::int8_t>(
                std::clamp(in_p.zero_point, -128, 127));

            // Padded int8 input, border filled with the zero-point.
            const int ph = current->h + 2 * pad;
            const int pw = current->w + 2 * pad;
            std::vector<std::int8_t> padded(
                static_cast<std::size_t>(current->c) * ph * pw, zpad);
            for (int c = 0; c < current->c; ++c)
                for (int y = 0; y < current->h; ++y)
                    std::copy_n(current->q.data() +
                                    (static_cast<std::size_t>(c) * current->h + y) *
                                        current->w,
                                current->w,
                                padded.data() +
                                    (static_cast<std::size_t>(c) * ph + y + pad) * pw +
                                    pad);

            out = QuantTensor(layer.out_c, layer.out_h, layer.out_w, out_p);
            const std::size_t plane = static_cast<std::size_t>(layer.out_h) * layer.out_w;
            acc.resize(plane);
            const double m = exec.requant_multiplier;
            for (int o = 0; o < w.filters; ++o) {
                const std::int32_t init =
                    exec.conv.bias_q[o] - in_p.zero_point * exec.conv.kernel_sums[o];
                std::fill(acc.begin(), acc.end(), init);
                const std::int8_t* kernel_o =
                    exec.conv.kernel_q.data() +
                    static_cast<std::size_t>(o) * current->c * k * k;
                for (int ic = 0; ic < current->c; ++ic) {
                    const std::int8_t* in_plane =
                        padded.data() + static_cast<std::size_t>(ic) * ph * pw;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const std::int32_t wq = kernel_o[(ic * k + ky) * k + kx];
                            if (wq == 0)
                                continue;
                            for (int oy = 0; oy < layer.out_h; ++oy) {
                                const std::int8_t* in_row =
                                    in_plane +
                                    static_cast<std::size_t>(oy * stride + ky) * pw + kx;
                                std::int32_t* acc_row = acc.data() +
                                                        static_cast<std::size_t>(oy) *
                                                            layer.out_w;
                                if (stride == 1) {
                                    for (int ox = 0; ox < layer.out_w; ++ox)
                                        acc_row[ox] += wq * in_row[ox];
                                } else {
                                    for (int ox = 0; ox < layer.out_w; ++ox)
                                        acc_row[ox] += wq * in_row[ox * stride];
                                }
                            }
                        }
                    }
                }
                std::int8_t* out_plane = out.q.data() + static_cast<std::size_t>(o) * plane;
                const std::int8_t floor_q =
                    act == Activation::relu
                        ? static_cast<std::int8_t>(std::clamp(out_p.zero_point, -128, 127))
                        : std::numeric_limits<std::int8_t>::min();
                for (std::size_t n = 0; n < plane; ++n) {
                    std::int8_t q = clamp_q(std::lround(m * acc[n]) + out_p.zero_point);
                    out_plane[n] = std::max(q, floor_q);
                }
            }
            break;
        }
        case LayerKind::maxpool: {
            const int size = layer.attr_int("size", 2);
            const int stride = layer.attr_int("stride", size);
            out = QuantTensor(layer.out_c, layer.out_h, layer.out_w, exec.out_params);
            for (int c = 0; c < current->c; ++c) {
                for (int oy = 0; oy < layer.out_h; ++oy) {
                    for (int ox = 0; ox < layer.out_w; ++ox) {
                        const int y0 = oy * stride;
                        const int x0 = ox * stride;
                        const int y1 = std::min(y0 + size, current->h);
                        const int x1 = std::min(x0 + size, current->w);
                        std::int8_t best = current->at(c, y0, x0);
                        for (int y = y0; y < y1; ++y)
                            for (int x = x0; x < x1; ++x)
                                best = std::max(best, current->at(c, y, x));
                        out.at(c, oy, ox) = best;
                    }
                }
            }
            break;
        }
        case LayerKind::upsample: {
            out = QuantTensor(layer.out_c, layer.out_h, layer.out_w, exec.out_params);
            for (int c = 0; c < current->c; ++c)
                for (int y = 0; y < layer.out_h; ++y)
                    for (int x = 0; x < layer.out_w; ++x)
                        out.at(c, y, x) = current->at(c, y / 2, x / 2);
            break;
        }
        case LayerKind::route: {
            out = QuantTensor(layer.out_c, layer.out_h, layer.out_w, exec.out_params);
            std::int8_t* dst = out.q.data();
            for (int src : layer.route_layers) {
                const QuantTensor& t = outputs[src];
                for (std::int8_t q : t.q)
                    *dst++ = requantize(q, t.params, exec.out_params);
            }
            break;
        }
        case LayerKind::shortcut: {
            const QuantTensor& from = outputs[layer.shortcut_from];
            const Activation act =
                activation_from_string(layer.attr_string("activation", "linear"));
            out = QuantTensor(layer.out_c, layer.out_h, layer.out_w, exec.out_params);
            const QuantParams& pa = current->params;
            const QuantParams& pb = from.params;
            const QuantParams& po = exec.out_params;
            const std::int8_t floor_q =
                act == Activation::relu
                    ? static_cast<std::int8_t>(std::clamp(po.zero_point, -128, 127))
                    : std::numeric_limits<std::int8_t>::min();
            for (std::size_t n = 0; n < out.q.size(); ++n) {
                const double real = pa.dequantize(current->q[n]) + pb.dequantize(from.q[n]);
                out.q[n] = std::max(po.quantize(real), floor_q);
            }
            break;
        }
        case LayerKind::yolo:
            out = *current;
            out.params = exec.out_params;
            break;
        }

        outputs.push_back(std::move(out));
        current = &outputs.back();
    }
    return outputs;
}

std::vector<Tensor> QuantNetwork::forward_all_dequantized(const Tensor& input) const {
    const std::vector<QuantTensor> outputs = run(input);
    std::vector<Tensor> result;
    result.reserve(outputs.size());
    for (const QuantTensor& q : outputs)
        result.push_back(dequantize_tensor(q));
    return result;
}

std::vector<HeadOutput> QuantNetwork::forward(const Tensor& input) const {
    const std::vector<QuantTensor> outputs = run(input);
    std::vector<HeadOutput> heads;
    for (std::size_t i = 0; i < def_.layers.size(); ++i) {
        if (def_.layers[i].kind != LayerKind::yolo)
            continue;
        heads.push_back(HeadOutput{dequantize_tensor(outputs[i]),
                                   make_head_config(def_, static_cast<int>(i))});
    }
    return heads;
}

} // namespace tubeloc
