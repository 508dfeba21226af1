#ifndef TUBELOC_DARKNET_HPP
#define TUBELOC_DARKNET_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tubeloc {

enum class LayerKind {
    convolutional,
    maxpool,
    upsample,
    route,
    shortcut,
    yolo,
};

std::string to_string(LayerKind kind);

// One parsed cfg section plus statically inferred tensor shapes.
struct LayerDef {
    LayerKind kind = LayerKind::convolutional;
    std::map<std::string, std::string> attrs; // raw key -> value text

    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;

    std::vector<int> route_layers; // absolute indices, resolved at parse time
    int shortcut_from = -1;        // absolute index

    bool has_attr(const std::string& key) const;
    int attr_int(const std::string& key, int fallback) const;
    double attr_double(const std::string& key, double fallback) const;
    std::string attr_string(const std::string& key, const std::string& fallback) const;
    std::vector<double> attr_list(const std::string& key) const;
};

// Layer graph for one network. The [net] header becomes the input dims;
// layers are indexed from 0 in file order.
struct NetworkDef {
    int width = 416;
    int height = 416;
    int channels = 3;
    std::vector<LayerDef> layers;
    std::vector<std::string> warnings; // unknown keys, suspicious values

    std::size_t count_kind(LayerKind kind) const;
};

NetworkDef parse_cfg(const std::string& text);
NetworkDef load_cfg(const std::filesystem::path& path);

// Weight blocks for one convolutional layer, canonical container order:
// with batch norm   biases, scales, rolling_mean, rolling_variance, kernel
// without           biases, kernel
struct ConvWeights {
    int layer_index = 0;
    int filters = 0;
    int in_channels = 0;
    int size = 0;
    bool batch_normalize = false;
    std::vector<float> biases;
    std::vector<float> scales;
    std::vector<float> rolling_mean;
    std::vector<float> rolling_variance;
    std::vector<float> kernel; // filters * in_channels * size * size

    std::size_t float_count() const;
    std::size_t kernel_count() const {
        return static_cast<std::size_t>(filters) * in_channels * size * size;
    }
};

struct WeightHeader {
    std::int32_t major = 0;
    std::int32_t minor = 2;
    std::int32_t revision = 0;
    std::uint64_t seen = 0;

    bool seen_is_64bit() const { return major * 10 + minor >= 2; }
};

struct WeightStore {
    WeightHeader header;
    std::vector<ConvWeights> conv; // file order == network conv order

    const ConvWeights* for_layer(int layer_index) const;
    ConvWeights* for_layer(int layer_index);
};

WeightStore parse_weights(std::span<const std::uint8_t> bytes, const NetworkDef& net);
WeightStore load_weights(const std::filesystem::path& path, const NetworkDef& net);
std::vector<std::uint8_t> serialize_weights(const WeightStore& store);
void save_weights(const WeightStore& store, const std::filesystem::path& path);

// Copies layers [0, cutoff) from source into dest, leaving the rest of dest
// (and its header) untouched.
struct TransplantPlan {
    int cutoff = 0;
    std::string source_id;
    std::string dest_id;
};

// First route layer: where the feature maps start being recombined.
int default_transplant_cutoff(const NetworkDef& net);

WeightStore transplant_backbone(const WeightStore& source, const WeightStore& dest,
                                const TransplantPlan& plan);

// Inference-time batch-norm fold into kernel and bias (single-multiply conv).
constexpr double kBatchNormEpsilon = 1e-6;
ConvWeights fold_batchnorm(const ConvWeights& layer);
WeightStore fold_batchnorm(const WeightStore& store);

} // namespace tubeloc

#endif
