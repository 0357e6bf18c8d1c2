#include "mixlink/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mixlink/init.hpp"

namespace mixlink {

using json = nlohmann::ordered_json;

MixedLinkConfig arch_preset(Arch which, int trunk_width, int k) {
    switch (which) {
    case Arch::Arch1: return {trunk_width, 0, LinkPosition::Fixed};
    case Arch::Arch2: return {0, k, LinkPosition::Fixed};
    case Arch::Arch3: return {k, k, LinkPosition::Fixed};
    case Arch::Arch4: return {k, k, LinkPosition::Unfixed};
    }
    throw std::invalid_argument("unknown architecture preset");
}

int stem_width(const MixedLinkConfig& link) { return std::max(link.k1, 2 * link.k2); }

TransformFn build_bottleneck(
    const BottleneckSpec& spec, ParamStore& params, const std::string& prefix,
    std::mt19937_64& rng, std::shared_ptr<ExecContext> ctx,
    std::vector<std::pair<std::string, std::shared_ptr<BatchNormState<double>>>>* bn_out) {
    if (spec.in_width <= 0 || spec.out_width <= 0 || spec.mid_width() <= 0)
        throw std::invalid_argument("bottleneck widths must be positive: in " +
                                    std::to_string(spec.in_width) + ", out " +
                                    std::to_string(spec.out_width));
    const int in = spec.in_width, mid = spec.mid_width(), out = spec.out_width;

    auto scale1 = params.add(prefix + ".bn1.scale", Tensor::full({1, in, 1, 1}, 1.0));
    auto shift1 = params.add(prefix + ".bn1.shift", Tensor::make({1, in, 1, 1}));
    auto kernel1 = params.add(prefix + ".conv1", he_init({mid, in, 1, 1}, in, rng));
    auto scale2 = params.add(prefix + ".bn2.scale", Tensor::full({1, mid, 1, 1}, 1.0));
    auto shift2 = params.add(prefix + ".bn2.shift", Tensor::make({1, mid, 1, 1}));
    auto kernel3 = params.add(prefix + ".conv2", he_init({out, mid, 3, 3}, mid * 9, rng));

    auto bn1 = std::make_shared<BatchNormState<double>>(in);
    auto bn2 = std::make_shared<BatchNormState<double>>(mid);
    if (bn_out) {
        bn_out->emplace_back(prefix + ".bn1", bn1);
        bn_out->emplace_back(prefix + ".bn2", bn2);
    }

    auto fn = [=](const TensorPtr& x) {
        auto t = batch_norm(x, scale1, shift1, *bn1, ctx->mode);
        t = relu(t);
        t = conv2d(t, kernel1, 1, 0);
        if (ctx->dropout_rate > 0 && ctx->rng) t = dropout(t, ctx->dropout_rate, ctx->mode, *ctx->rng);
        t = batch_norm(t, scale2, shift2, *bn2, ctx->mode);
        t = relu(t);
        t = conv2d(t, kernel3, 1, 1);
        if (ctx->dropout_rate > 0 && ctx->rng) t = dropout(t, ctx->dropout_rate, ctx->mode, *ctx->rng);
        return t;
    };
    return TransformFn(fn, out);
}

LayerGraph::Block build_mixed_link_block(
    int in_width, int n_layers, const MixedLinkConfig& link, int multiplier, ParamStore& params,
    const std::string& prefix, std::mt19937_64& rng, std::shared_ptr<ExecContext> ctx,
    std::vector<std::pair<std::string, std::shared_ptr<BatchNormState<double>>>>* bn_out) {
    if (link.k1 > in_width)
        throw std::invalid_argument("inner link size " + std::to_string(link.k1) +
                                    " exceeds block input width " + std::to_string(in_width));
    LayerGraph::Block block;
    block.config = link;
    block.in_width = in_width;
    int width = in_width;
    for (int layer = 0; layer < n_layers; ++layer) {
        const std::string lp = prefix + ".layer" + std::to_string(layer + 1);
        MixedLayer fns;
        if (link.k1 > 0)
            fns.inner = build_bottleneck({width, link.k1, multiplier}, params, lp + ".inner", rng,
                                         ctx, bn_out);
        if (link.k2 > 0)
            fns.outer = build_bottleneck({width, link.k2, multiplier}, params, lp + ".outer", rng,
                                         ctx, bn_out);
        block.layers.push_back(std::move(fns));
        width += link.k2;
    }
    block.out_width = width;
    return block;
}

LayerGraph::Transition build_transition(int in_width, double theta, ParamStore& params,
                                        const std::string& prefix, std::mt19937_64& rng) {
    if (!(theta > 0.0) || theta > 1.0)
        throw std::invalid_argument("transition compression must lie in (0, 1]");
    LayerGraph::Transition t;
    t.in_width = in_width;
    t.out_width = static_cast<int>(std::floor(theta * in_width));
    if (t.out_width <= 0)
        throw std::invalid_argument("transition output width collapsed to zero");
    t.kernel = params.add(prefix + ".conv", he_init({t.out_width, in_width, 1, 1}, in_width, rng));
    return t;
}

LayerGraph build_network(const NetworkSpec& spec, std::uint64_t seed) {
    if (spec.blocks.empty()) throw std::invalid_argument("network needs at least one block");
    std::mt19937_64 rng(seed);
    LayerGraph g;
    g.spec = spec;
    g.ctx = std::make_shared<ExecContext>();
    g.ctx->dropout_rate = spec.dropout_rate;

    g.stem_kernel = g.params.add(
        "stem.conv", he_init({spec.stem.out_channels, spec.stem.in_channels, spec.stem.kernel,
                              spec.stem.kernel},
                             spec.stem.in_channels * spec.stem.kernel * spec.stem.kernel, rng));

    int width = spec.stem.out_channels;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        const auto& bs = spec.blocks[b];
        g.blocks.push_back(build_mixed_link_block(width, bs.layers, bs.link, spec.multiplier,
                                                  g.params, "block" + std::to_string(b + 1), rng,
                                                  g.ctx, &g.bn_states_));
        width = g.blocks.back().out_width;
        if (b + 1 < spec.blocks.size()) {
            g.transitions.push_back(build_transition(
                width, spec.theta, g.params, "transition" + std::to_string(b + 1), rng));
            width = g.transitions.back().out_width;
            if (width < spec.blocks[b + 1].link.k1)
                throw std::invalid_argument(
                    "transition width " + std::to_string(width) +
                    " is below the next block's inner link size " +
                    std::to_string(spec.blocks[b + 1].link.k1));
        }
    }

    g.fc_weight = g.params.add("classifier.weight", he_init({spec.classes, width, 1, 1}, width, rng));
    g.fc_bias = g.params.add("classifier.bias", Tensor::make({1, spec.classes, 1, 1}));
    return g;
}

TensorPtr LayerGraph::forward(const TensorPtr& input, Mode mode, std::mt19937_64* rng) {
    ctx->mode = mode;
    ctx->rng = rng;

    auto t = conv2d(input, stem_kernel, spec.stem.stride, spec.stem.pad);
    if (spec.stem.max_pool_after) t = max_pool(t, 3, 2, 1);

    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto connect = blocks[b].config.connection();
        for (const auto& layer : blocks[b].layers)
            t = mixed_step(t, layer.inner, layer.outer, connect);
        if (b < transitions.size()) {
            t = conv2d(t, transitions[b].kernel, 1, 0);
            if (ctx->dropout_rate > 0 && rng) t = dropout(t, ctx->dropout_rate, mode, *rng);
            t = avg_pool(t, 2, 2);
        }
    }

    t = global_avg_pool(t);
    return linear(t, fc_weight, fc_bias);
}

std::vector<int> LayerGraph::width_chain() const {
    std::vector<int> chain;
    chain.push_back(spec.stem.out_channels);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        chain.push_back(blocks[b].out_width);
        if (b < transitions.size()) chain.push_back(transitions[b].out_width);
    }
    return chain;
}

void LayerGraph::save_weights(const std::string& path) const {
    json doc;
    doc["spec"] = json::parse(spec.to_json_string());
    json jp = json::object();
    for (const auto& [name, t] : params.entries()) jp[name] = t->data;
    doc["params"] = std::move(jp);
    json jb = json::object();
    for (const auto& [name, state] : bn_states_) {
        jb[name] = {{"running_mean", state->running_mean}, {"running_var", state->running_var}};
    }
    doc["batch_norm"] = std::move(jb);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << doc.dump(2) << "\n";
}

void LayerGraph::load_weights(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json doc = json::parse(in);
    for (const auto& [name, values] : doc.at("params").items()) {
        auto t = params.get(name);
        auto v = values.get<std::vector<double>>();
        if (v.size() != t->size())
            throw std::runtime_error("weight size mismatch for " + name);
        t->data = std::move(v);
    }
    for (auto& [name, state] : bn_states_) {
        const auto& jb = doc.at("batch_norm").at(name);
        state->running_mean = jb.at("running_mean").get<std::vector<double>>();
        state->running_var = jb.at("running_var").get<std::vector<double>>();
    }
}

namespace {

LinkPosition position_from_string(const std::string& s) {
    if (s == "fixed") return LinkPosition::Fixed;
    if (s == "unfixed") return LinkPosition::Unfixed;
    throw std::invalid_argument("position must be \"fixed\" or \"unfixed\", got \"" + s + "\"");
}

std::string position_to_string(LinkPosition p) {
    return p == LinkPosition::Fixed ? "fixed" : "unfixed";
}

} // namespace

std::string NetworkSpec::to_json_string(int indent) const {
    json j;
    j["name"] = name;
    j["input"] = {{"channels", input_channels}, {"height", input_height}, {"width", input_width}};
    j["stem"] = {{"out_channels", stem.out_channels},
                 {"kernel", stem.kernel},
                 {"stride", stem.stride},
                 {"pad", stem.pad},
                 {"max_pool", stem.max_pool_after}};
    j["blocks"] = json::array();
    for (const auto& b : blocks)
        j["blocks"].push_back({{"layers", b.layers},
                               {"k1", b.link.k1},
                               {"k2", b.link.k2},
                               {"position", position_to_string(b.link.position)}});
    j["theta"] = theta;
    j["multiplier"] = multiplier;
    j["classes"] = classes;
    j["dropout"] = dropout_rate;
    return j.dump(indent);
}

namespace {

void require_known_keys(const json& j, std::initializer_list<const char*> allowed,
                        const char* context) {
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), std::string_view(key)) == allowed.end())
            throw std::invalid_argument("unknown key \"" + key + "\" in " + context);
    }
}

} // namespace

NetworkSpec NetworkSpec::from_json_string(const std::string& text) {
    const json j = json::parse(text);
    require_known_keys(j, {"name", "input", "stem", "blocks", "theta", "multiplier", "classes",
                           "dropout"},
                       "network description");
    NetworkSpec s;
    s.name = j.value("name", "custom");
    const auto& in = j.at("input");
    s.input_channels = in.at("channels").get<int>();
    s.input_height = in.at("height").get<int>();
    s.input_width = in.at("width").get<int>();
    const auto& st = j.at("stem");
    s.stem.in_channels = s.input_channels;
    s.stem.out_channels = st.at("out_channels").get<int>();
    s.stem.kernel = st.at("kernel").get<int>();
    s.stem.stride = st.at("stride").get<int>();
    s.stem.pad = st.at("pad").get<int>();
    s.stem.max_pool_after = st.at("max_pool").get<bool>();
    for (const auto& b : j.at("blocks")) {
        BlockSpec bs;
        bs.layers = b.at("layers").get<int>();
        bs.link.k1 = b.at("k1").get<int>();
        bs.link.k2 = b.at("k2").get<int>();
        bs.link.position = position_from_string(b.at("position").get<std::string>());
        s.blocks.push_back(bs);
    }
    s.theta = j.at("theta").get<double>();
    s.multiplier = j.at("multiplier").get<int>();
    s.classes = j.at("classes").get<int>();
    s.dropout_rate = j.value("dropout", 0.0);
    return s;
}

NetworkSpec build_cifar_spec(int depth, int k1, int k2, LinkPosition position, int multiplier,
                             double theta, int classes) {
    if ((depth - 4) % 6 != 0 || depth <= 4)
        throw std::invalid_argument(
            "depth " + std::to_string(depth) +
            " is not expressible as 6n + 4 (two bottlenecks per layer over three blocks)");
    const int n = (depth - 4) / 6;
    MixedLinkConfig link{k1, k2, position};
    NetworkSpec s;
    s.name = "cifar-L" + std::to_string(depth);
    s.input_channels = 3;
    s.input_height = 32;
    s.input_width = 32;
    s.stem = {3, stem_width(link), 3, 1, 1, false};
    s.blocks = {{n, link}, {n, link}, {n, link}};
    s.theta = theta;
    s.multiplier = multiplier;
    s.classes = classes;
    return s;
}

NetworkSpec build_imagenet_spec(int preset, int multiplier, double theta) {
    std::vector<int> layout;
    int k = 0;
    switch (preset) {
    case 105: layout = {6, 12, 20, 12}; k = 32; break;
    case 121: layout = {6, 12, 24, 16}; k = 40; break;
    case 141: layout = {6, 12, 30, 20}; k = 48; break;
    default:
        throw std::invalid_argument("unknown preset " + std::to_string(preset) +
                                    "; known presets: 105, 121, 141");
    }
    MixedLinkConfig link{k, k, LinkPosition::Unfixed};
    NetworkSpec s;
    s.name = "mixnet-" + std::to_string(preset);
    s.input_channels = 3;
    s.input_height = 224;
    s.input_width = 224;
    s.stem = {3, stem_width(link), 7, 2, 3, true};
    for (int n : layout) s.blocks.push_back({n, link});
    s.theta = theta;
    s.multiplier = multiplier;
    s.classes = 1000;
    return s;
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"mixnet-100", "mixnet-250", "mixnet-190",
                                                   "mixnet-105", "mixnet-121", "mixnet-141"};
    return names;
}

NetworkSpec preset_spec(const std::string& name) {
    // m = 4, theta = 0.5 reproduces every published parameter total.
    NetworkSpec s;
    if (name == "mixnet-100")
        s = build_cifar_spec(100, 12, 12, LinkPosition::Unfixed, 4, 0.5, 10);
    else if (name == "mixnet-250")
        s = build_cifar_spec(250, 24, 24, LinkPosition::Unfixed, 4, 0.5, 10);
    else if (name == "mixnet-190")
        s = build_cifar_spec(190, 40, 40, LinkPosition::Unfixed, 4, 0.5, 10);
    else if (name == "mixnet-105")
        s = build_imagenet_spec(105, 4, 0.5);
    else if (name == "mixnet-121")
        s = build_imagenet_spec(121, 4, 0.5);
    else if (name == "mixnet-141")
        s = build_imagenet_spec(141, 4, 0.5);
    else
        throw std::invalid_argument("unknown preset \"" + name +
                                    "\"; known: mixnet-100/250/190/105/121/141");
    s.name = name;
    return s;
}

} // namespace mixlink
