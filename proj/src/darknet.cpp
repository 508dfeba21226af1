#include "tubeloc/darknet.hpp"
#include "tubeloc/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace tubeloc {

std::string to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::convolutional: return "convolutional";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::upsample: return "upsample";
    case LayerKind::route: return "route";
    case LayerKind::shortcut: return "shortcut";
    case LayerKind::yolo: return "yolo";
    }
    return "?";
}

bool LayerDef::has_attr(const std::string& key) const {
    return attrs.find(key) != attrs.end();
}

int LayerDef::attr_int(const std::string& key, int fallback) const {
    auto it = attrs.find(key);
    if (it == attrs.end())
        return fallback;
    return std::stoi(it->second);
}

double LayerDef::attr_double(const std::string& key, double fallback) const {
    auto it = attrs.find(key);
    if (it == attrs.end())
        return fallback;
    return std::stod(it->second);
}

std::string LayerDef::attr_string(const std::string& key,
                                  const std::string& fallback) const {
    auto it = attrs.find(key);
    if (it == attrs.end())
        return fallback;
    return it->second;
}

std::vector<double> LayerDef::attr_list(const std::string& key) const {
    std::vector<double> values;
    auto it = attrs.find(key);
    if (it == attrs.end())
        return values;
    std::string token;
    std::istringstream ss(it->second);
    while (std::getline(ss, token, ',')) {
        const auto begin = token.find_first_not_of(" \t");
        if (begin == std::string::npos)
            continue;
        values.push_back(std::stod(token.substr(begin)));
    }
    return values;
}

std::size_t NetworkDef::count_kind(LayerKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(layers.begin(), layers.end(),
                      [kind](const LayerDef& l) { return l.kind == kind; }));
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos)
        return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

struct RawSection {
    std::string name;
    int line = 0;
    std::map<std::string, std::string> attrs;
};

std::vector<RawSection> tokenize_cfg(const std::string& text) {
    std::vector<RawSection> sections;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        if (line.front() == '[') {
            const auto close = line.find(']');
            if (close == std::string::npos)
                throw ParseError("cfg line " + std::to_string(line_no) +
                                 ": unterminated section header");
            RawSection s;
            s.name = trim(line.substr(1, close - 1));
            s.line = line_no;
            sections.push_back(std::move(s));
        } else {
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ParseError("cfg line " + std::to_string(line_no) +
                                 ": expected key=value, got \"" + line + "\"");
            if (sections.empty())
                throw ParseError("cfg line " + std::to_string(line_no) +
                                 ": key=value before any section header");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            sections.back().attrs[key] = value;
        }
    }
    return sections;
}

const std::set<std::string>& known_keys(const std::string& section) {
    static const std::map<std::string, std::set<std::string>> table = {
        {"net",
         {"width", "height", "channels", "batch", "subdivisions"}},
        {"convolutional",
         {"filters", "size", "stride", "pad", "padding", "batch_normalize",
          "activation"}},
        {"maxpool", {"size", "stride", "padding"}},
        {"upsample", {"stride"}},
        {"route", {"layers"}},
        {"shortcut", {"from", "activation"}},
        {"yolo",
         {"mask", "anchors", "classes", "num", "jitter", "ignore_thresh",
          "truth_thresh", "random"}},
    };
    static const std::set<std::string> empty;
    auto it = table.find(section);
    return it == table.end() ? empty : it->second;
}

void require_attr(const LayerDef& layer, int index, const std::string& key) {
    if (!layer.has_attr(key))
        throw ParseError("cfg layer " + std::to_string(index) + " [" +
                         to_string(layer.kind) + "]: missing required key \"" +
                         key + "\"");
}

int resolve_layer_ref(int ref, int self_index, int layer_count) {
    const int absolute = ref < 0 ? self_index + ref : ref;
    if (absolute < 0 || absolute >= self_index || absolute >= layer_count)
        throw ParseError("cfg layer " + std::to_string(self_index) +
                         ": reference " + std::to_string(ref) +
                         " does not resolve to an earlier layer");
    return absolute;
}

} // namespace

NetworkDef parse_cfg(const std::string& text) {
    const std::vector<RawSection> sections = tokenize_cfg(text);
    if (sections.empty())
        throw ParseError("cfg contains no sections");
    if (sections.front().name != "net" && sections.front().name != "network")
        throw ParseError("cfg must start with a [net] section, found [" +
                         sections.front().name + "]");

    NetworkDef net;
    {
        const RawSection& s = sections.front();
        auto get = [&](const char* key, int fallback) {
            auto it = s.attrs.find(key);
            return it == s.attrs.end() ? fallback : std::stoi(it->second);
        };
        net.width = get("width", 416);
        net.height = get("height", 416);
        net.channels = get("channels", 3);
        if (net.width < 1 || net.height < 1 || net.channels < 1)
            throw ParseError("cfg [net]: non-positive input dimensions");
        for (const auto& [key, value] : s.attrs)
            if (!known_keys("net").count(key))
                net.warnings.push_back("[net]: unknown key \"" + key + "\" kept as-is");
    }

    static const std::map<std::string, LayerKind> kind_names = {
        {"convolutional", LayerKind::convolutional},
        {"maxpool", LayerKind::maxpool},
        {"upsample", LayerKind::upsample},
        {"route", LayerKind::route},
        {"shortcut", LayerKind::shortcut},
        {"yolo", LayerKind::yolo},
    };

    const int layer_count = static_cast<int>(sections.size()) - 1;
    net.layers.reserve(layer_count);

    int cur_c = net.channels, cur_h = net.height, cur_w = net.width;

    for (int i = 0; i < layer_count; ++i) {
        const RawSection& s = sections[i + 1];
        auto kind_it = kind_names.find(s.name);
        if (kind_it == kind_names.end())
            throw ParseError("cfg line " + std::to_string(s.line) +
                             ": unknown section kind \"" + s.name + "\"");

        LayerDef layer;
        layer.kind = kind_it->second;
        layer.attrs = s.attrs;
        layer.in_c = cur_c;
        layer.in_h = cur_h;
        layer.in_w = cur_w;

        for (const auto& [key, value] : s.attrs)
            if (!known_keys(s.name).count(key))
                net.warnings.push_back("[" + s.name + "] layer " + std::to_string(i) +
                                       ": unknown key \"" + key + "\" kept as-is");

        switch (layer.kind) {
        case LayerKind::convolutional: {
            require_attr(layer, i, "filters");
            require_attr(layer, i, "size");
            require_attr(layer, i, "stride");
            require_attr(layer, i, "activation");
            const int filters = layer.attr_int("filters", 0);
            const int size = layer.attr_int("size", 0);
            const int stride = layer.attr_int("stride", 0);
            const int pad = layer.attr_int("pad", 0) ? size / 2
                                                     : layer.attr_int("padding", 0);
            if (filters < 1 || size < 1 || stride < 1)
                throw ParseError("cfg layer " + std::to_string(i) +
                                 " [convolutional]: invalid filters/size/stride");
            layer.out_c = filters;
            layer.out_h = (cur_h + 2 * pad - size) / stride + 1;
            layer.out_w = (cur_w + 2 * pad - size) / stride + 1;
            if (layer.out_h < 1 || layer.out_w < 1)
                throw ParseError("cfg layer " + std::to_string(i) +
                                 " [convolutional]: output collapses to zero size");
            break;
        }
        case LayerKind::maxpool: {
            const int size = layer.attr_int("size", 2);
            const int stride = layer.attr_int("stride", size);
            const int padding = layer.attr_int("padding", size - 1);
            layer.out_c = cur_c;
            layer.out_h = (cur_h + padding - size) / stride + 1;
            layer.out_w = (cur_w + padding - size) / stride + 1;
            break;
        }
        case LayerKind::upsample: {
            const int stride = layer.attr_int("stride", 2);
            if (stride != 2)
                throw ParseError("cfg layer " + std::to_string(i) +
                                 " [upsample]: only stride 2 is supported");
            layer.out_c = cur_c;
            layer.out_h = cur_h * 2;
            layer.out_w = cur_w * 2;
            break;
        }
        case LayerKind::route: {
            require_attr(layer, i, "layers");
            const std::vector<double> refs = layer.attr_list("layers");
            if (refs.empty())
                throw ParseError("cfg layer " + std::to_string(i) +
                                 " [route]: empty layers list");
            int channels = 0;
            int rh = -1, rw = -1;
            for (double ref : refs) {
                const int abs_index =
                    resolve_layer_ref(static_cast<int>(ref), i, layer_count);
                const LayerDef& src = net.layers[abs_index];
                if (rh < 0) {
                    rh = src.out_h;
                    rw = src.out_w;
                } else if (rh != src.out_h || rw != src.out_w) {
                    throw ParseError("cfg layer " + std::to_string(i) +
                                     " [route]: spatial dims of routed layers differ");
                }
                channels += src.out_c;
                layer.route_layers.push_back(abs_index);
            }
            layer.out_c = channels;
            layer.out_h = rh;
            layer.out_w = rw;
            break;
        }
        case LayerKind::shortcut: {
            require_attr(layer, i, "from");
            const int abs_index =
                resolve_layer_ref(layer.attr_int("from", 0), i, layer_count);
            const LayerDef& src = net.layers[abs_index];
            if (src.out_c != cur_c || src.out_h != cur_h || src.out_w != cur_w)
                throw ParseError("cfg layer " + std::to_string(i) +
                                 " [shortcut]: source dims do not match input dims");
            layer.shortcut_from = abs_index;
            layer.out_c = cur_c;
            layer.out_h = cur_h;
            layer.out_w = cur_w;
            break;
        }
        case LayerKind::yolo: {
            require_attr(layer, i, "anchors");
            require_attr(layer, i, "mask");
            require_attr(layer, i, "classes");
            const std::vector<double> anchors = layer.attr_list("anchors");
            const std::vector<double> mask = layer.attr_list("mask");
            const int classes = layer.attr_int("classes", 0);
            if (anchors.size() % 2 != 0 || anchors.empty())
                throw ParseError("cfg layer " + std::to_string(i) +
                                 " [yolo]: anchors must be (w,h) pairs");
            for (double m : mask)
                if (m < 0 || static_cast<std::size_t>(m) >= anchors.size() / 2)
                    throw ParseError("cfg layer " + std::to_string(i) +
                                     " [yolo]: mask index out of range");
            const int expected_c =
                static_cast<int>(mask.size()) * (5 + classes);
            if (cur_c != expected_c)
                throw ParseError("cfg layer " + std::to_string(i) +
                                 " [yolo]: input has " + std::to_string(cur_c) +
                                 " channels, expected " + std::to_string(expected_c) +
                                 " = mask*(5+classes)");
            layer.out_c = cur_c;
            layer.out_h = cur_h;
            layer.out_w = cur_w;
            break;
        }
        }

        cur_c = layer.out_c;
        cur_h = layer.out_h;
        cur_w = layer.out_w;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

NetworkDef load_cfg(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open cfg: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_cfg(ss.str());
}

std::size_t ConvWeights::float_count() const {
    std::size_t n = static_cast<std::size_t>(filters); // biases
    if (batch_normalize)
        n += 3 * static_cast<std::size_t>(filters); // scales, mean, variance
    return n + kernel_count();
}

const ConvWeights* WeightStore::for_layer(int layer_index) const {
    for (const ConvWeights& c : conv)
        if (c.layer_index == layer_index)
            return &c;
    return nullptr;
}

ConvWeights* WeightStore::for_layer(int layer_index) {
    for (ConvWeights& c : conv)
        if (c.layer_index == layer_index)
            return &c;
    return nullptr;
}

namespace {

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = static_cast<std::uint32_t>(bytes_[pos_]) |
                          (static_cast<std::uint32_t>(bytes_[pos_ + 1]) << 8) |
                          (static_cast<std::uint32_t>(bytes_[pos_ + 2]) << 16) |
                          (static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return lo | (hi << 32);
    }

    void floats(std::vector<float>& out, std::size_t count) {
        need(count * 4);
        out.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t u = static_cast<std::uint32_t>(bytes_[pos_]) |
                              (static_cast<std::uint32_t>(bytes_[pos_ + 1]) << 8) |
                              (static_cast<std::uint32_t>(bytes_[pos_ + 2]) << 16) |
                              (static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24);
            out[i] = std::bit_cast<float>(u);
            pos_ += 4;
        }
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw ParseError("weight stream truncated: need " + std::to_string(n) +
                             " more bytes at offset " + std::to_string(pos_));
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        bytes_.push_back(static_cast<std::uint8_t>(v & 0xff));
        bytes_.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
        bytes_.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
        bytes_.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
    }
    void u64(std::uint64_t v) {
        u32(static_cast<std::uint32_t>(v & 0xffffffffu));
        u32(static_cast<std::uint32_t>(v >> 32));
    }
    void floats(const std::vector<float>& values) {
        for (float f : values)
            u32(std::bit_cast<std::uint32_t>(f));
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

std::size_t demanded_float_count(const NetworkDef& net) {
    std::size_t total = 0;
    for (const LayerDef& layer : net.layers) {
        if (layer.kind != LayerKind::convolutional)
            continue;
        ConvWeights probe;
        probe.filters = layer.attr_int("filters", 0);
        probe.in_channels = layer.in_c;
        probe.size = layer.attr_int("size", 1);
        probe.batch_normalize = layer.attr_int("batch_normalize", 0) != 0;
        total += probe.float_count();
    }
    return total;
}

} // namespace

WeightStore parse_weights(std::span<const std::uint8_t> bytes, const NetworkDef& net) {
    ByteReader reader(bytes);
    WeightStore store;
    store.header.major = static_cast<std::int32_t>(reader.u32());
    store.header.minor = static_cast<std::int32_t>(reader.u32());
    store.header.revision = static_cast<std::int32_t>(reader.u32());
    store.header.seen = store.header.seen_is_64bit()
                            ? reader.u64()
                            : static_cast<std::uint64_t>(reader.u32());

    const std::size_t demanded = demanded_float_count(net);
    if (reader.remaining() < demanded * 4)
        throw ParseError("weight stream too short: network demands " +
                         std::to_string(demanded) + " floats, stream holds " +
                         std::to_string(reader.remaining() / 4));

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerDef& layer = net.layers[i];
        if (layer.kind != LayerKind::convolutional)
            continue;
        ConvWeights w;
        w.layer_index = static_cast<int>(i);
        w.filters = layer.attr_int("filters", 0);
        w.in_channels = layer.in_c;
        w.size = layer.attr_int("size", 1);
        w.batch_normalize = layer.attr_int("batch_normalize", 0) != 0;
        const std::size_t n = static_cast<std::size_t>(w.filters);
        reader.floats(w.biases, n);
        if (w.batch_normalize) {
            reader.floats(w.scales, n);
            reader.floats(w.rolling_mean, n);
            reader.floats(w.rolling_variance, n);
        }
        reader.floats(w.kernel, w.kernel_count());
        store.conv.push_back(std::move(w));
    }

    if (reader.remaining() != 0)
        throw ParseError("weight stream has " + std::to_string(reader.remaining()) +
                         " trailing bytes; cfg and weights likely mismatch");
    return store;
}

WeightStore load_weights(const std::filesystem::path& path, const NetworkDef& net) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open weights: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return parse_weights(bytes, net);
}

std::vector<std::uint8_t> serialize_weights(const WeightStore& store) {
    ByteWriter writer;
    writer.u32(static_cast<std::uint32_t>(store.header.major));
    writer.u32(static_cast<std::uint32_t>(store.header.minor));
    writer.u32(static_cast<std::uint32_t>(store.header.revision));
    if (store.header.seen_is_64bit())
        writer.u64(store.header.seen);
    else
        writer.u32(static_cast<std::uint32_t>(store.header.seen));
    for (const ConvWeights& w : store.conv) {
        writer.floats(w.biases);
        if (w.batch_normalize) {
            writer.floats(w.scales);
            writer.floats(w.rolling_mean);
            writer.floats(w.rolling_variance);
        }
        writer.floats(w.kernel);
    }
    return writer.take();
}

void save_weights(const WeightStore& store, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = serialize_weights(store);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("save_weights: cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error("save_weights: write failed: " + path.string());
}

int default_transplant_cutoff(const NetworkDef& net) {
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].kind == LayerKind::route)
            return static_cast<int>(i);
    return static_cast<int>(net.layers.size());
}

WeightStore transplant_backbone(const WeightStore& source, const WeightStore& dest,
                                const TransplantPlan& plan) {
    if (plan.cutoff < 0)
        throw Error("transplant: negative cutoff");
    WeightStore result = dest;
    for (ConvWeights& d : result.conv) {
        if (d.layer_index >= plan.cutoff)
            continue;
        const ConvWeights* s = source.for_layer(d.layer_index);
        if (s == nullptr)
            throw Error("transplant: source has no weights for layer " +
                        std::to_string(d.layer_index));
        if (s->filters != d.filters || s->in_channels != d.in_channels ||
            s->size != d.size || s->batch_normalize != d.batch_normalize)
            throw Error("transplant: shape mismatch at layer " +
                        std::to_string(d.layer_index) + " (source " +
                        std::to_string(s->filters) + "x" + std::to_string(s->in_channels) +
                        "x" + std::to_string(s->size) + ", dest " +
                        std::to_string(d.filters) + "x" + std::to_string(d.in_channels) +
                        "x" + std::to_string(d.size) + ")");
        const int idx = d.layer_index;
        d = *s;
        d.layer_index = idx;
    }
    return result;
}

ConvWeights fold_batchnorm(const ConvWeights& layer) {
    if (!layer.batch_normalize)
        return layer;
    ConvWeights folded = layer;
    folded.batch_normalize = false;
    folded.scales.clear();
    folded.rolling_mean.clear();
    folded.rolling_variance.clear();
    const std::size_t per_filter = layer.kernel_count() / layer.filters;
    for (int o = 0; o < layer.filters; ++o) {
        const double denom =
            std::sqrt(static_cast<double>(layer.rolling_variance[o]) + kBatchNormEpsilon);
        const double gain = layer.scales[o] / denom;
        folded.biases[o] = static_cast<float>(
            layer.biases[o] - layer.scales[o] * layer.rolling_mean[o] / denom);
        float* k = folded.kernel.data() + static_cast<std::size_t>(o) * per_filter;
        for (std::size_t i = 0; i < per_filter; ++i)
            k[i] = static_cast<float>(k[i] * gain);
    }
    return folded;
}

WeightStore fold_batchnorm(const WeightStore& store) {
    WeightStore folded = store;
    for (ConvWeights& w : folded.conv)
        w = fold_batchnorm(w);
    return folded;
}

} // namespace tubeloc
