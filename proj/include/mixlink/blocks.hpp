#ifndef MIXLINK_BLOCKS_HPP
#define MIXLINK_BLOCKS_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mixlink/ops.hpp"
#include "mixlink/tensor.hpp"
#include "mixlink/topology.hpp"

// Trainable network construction: bottleneck units, mixed link blocks,
// transitions, stems and classifier heads, plus the preset factories for
// the published CIFAR and ImageNet families.

namespace mixlink {

/// The architectural degrees of freedom of one mixed link block.
struct MixedLinkConfig {
    int k1 = 0;
    int k2 = 0;
    LinkPosition position = LinkPosition::Unfixed;

    ConnectionKind connection() const { return ConnectionKind::mixed(k1, k2, position); }
};

enum class Arch { Arch1, Arch2, Arch3, Arch4 };

/// Table of representative configurations: Arch-1 is the pure additive
/// trunk (k1 = width, k2 = 0, fixed), Arch-2 pure concatenation, Arch-3
/// the fixed dual path, Arch-4 the unfixed mixed link network.
MixedLinkConfig arch_preset(Arch which, int trunk_width, int k);

/// One bottleneck unit: BN-ReLU-Conv(1x1, to m*out)-BN-ReLU-Conv(3x3, to
/// out, pad 1). Spatial size is preserved.
struct BottleneckSpec {
    int in_width = 0;
    int out_width = 0;
    int multiplier = 4;

    int mid_width() const { return multiplier * out_width; }
};

struct StemSpec {
    int in_channels = 3;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    bool max_pool_after = false; // 3x3 stride-2 pad-1 max pool (ImageNet stem)
};

struct BlockSpec {
    int layers = 0;
    MixedLinkConfig link;
};

/// Static description of a whole network; the builder and the accounting
/// module both consume it.
struct NetworkSpec {
    std::string name;
    int input_channels = 3;
    int input_height = 32;
    int input_width = 32;
    StemSpec stem;
    std::vector<BlockSpec> blocks;
    double theta = 1.0;   // transition compression
    int multiplier = 4;   // bottleneck intermediate multiplier m
    int classes = 10;
    double dropout_rate = 0.0;

    std::string to_json_string(int indent = 2) const;
    static NetworkSpec from_json_string(const std::string& text);
};

/// Stem width rule: the initial convolution produces max(k1, 2*k2)
/// channels.
int stem_width(const MixedLinkConfig& link);

/// Per-forward execution state shared by every transform closure of one
/// built graph.
struct ExecContext {
    Mode mode = Mode::Eval;
    double dropout_rate = 0.0;
    std::mt19937_64* rng = nullptr;
};

/// An executable network bound to its ParamStore. Forward passes construct
/// a fresh autodiff graph over the stored parameters.
class LayerGraph {
public:
    struct Block {
        std::vector<MixedLayer> layers;
        MixedLinkConfig config;
        int in_width = 0;
        int out_width = 0;
    };

    struct Transition {
        TensorPtr kernel; // 1x1 conv
        int in_width = 0;
        int out_width = 0;
    };

    NetworkSpec spec;
    ParamStore params;
    std::shared_ptr<ExecContext> ctx;

    TensorPtr stem_kernel;
    std::vector<Block> blocks;
    std::vector<Transition> transitions;
    TensorPtr fc_weight;
    TensorPtr fc_bias;

    TensorPtr forward(const TensorPtr& input, Mode mode, std::mt19937_64* rng = nullptr);

    /// Per-stage feature widths: stem output, each block output, each
    /// transition output, in execution order.
    std::vector<int> width_chain() const;

    void save_weights(const std::string& path) const;
    void load_weights(const std::string& path);

private:
    // BN running statistics live in the transform closures; tracked here
    // for serialization.
    friend LayerGraph build_network(const NetworkSpec&, std::uint64_t);
    std::vector<std::pair<std::string, std::shared_ptr<BatchNormState<double>>>> bn_states_;
};

/// Builds the bottleneck transform, registering its parameters under
/// `prefix` and He-initializing the convolutions.
TransformFn build_bottleneck(const BottleneckSpec& spec, ParamStore& params,
                             const std::string& prefix, std::mt19937_64& rng,
                             std::shared_ptr<ExecContext> ctx,
                             std::vector<std::pair<std::string, std::shared_ptr<BatchNormState<double>>>>* bn_out = nullptr);

LayerGraph::Block build_mixed_link_block(int in_width, int n_layers, const MixedLinkConfig& link,
                                         int multiplier, ParamStore& params,
                                         const std::string& prefix, std::mt19937_64& rng,
                                         std::shared_ptr<ExecContext> ctx,
                                         std::vector<std::pair<std::string, std::shared_ptr<BatchNormState<double>>>>* bn_out = nullptr);

LayerGraph::Transition build_transition(int in_width, double theta, ParamStore& params,
                                        const std::string& prefix, std::mt19937_64& rng);

/// Whole-network builder; seeded for reproducible initialization.
LayerGraph build_network(const NetworkSpec& spec, std::uint64_t seed);

/// CIFAR-family spec: three equal blocks, 3x3 stride-1 stem, depth label
/// L = 6n + 4.
NetworkSpec build_cifar_spec(int depth, int k1, int k2, LinkPosition position, int multiplier,
                             double theta, int classes);

/// ImageNet-family spec for the published presets 105, 121 and 141.
NetworkSpec build_imagenet_spec(int preset, int multiplier, double theta);

/// Named preset lookup ("mixnet-100", ..., "mixnet-141"). The published
/// presets bind m = 4, theta = 0.5, the setting that reproduces the paper
/// totals.
NetworkSpec preset_spec(const std::string& name);
const std::vector<std::string>& preset_names();

} // namespace mixlink

#endif
