#include "mixlink/topology.hpp"

#include <stdexcept>

#include "mixlink/ops.hpp"

namespace mixlink {

TensorPtr TransformFn::operator()(const TensorPtr& x) const {
    if (!fn) throw std::logic_error("invoking an absent TransformFn");
    TensorPtr out = fn(x);
    if (out->shape.c != out_channels)
        throw std::logic_error("transform declared " + std::to_string(out_channels) +
                               " output channels but produced " + std::to_string(out->shape.c));
    return out;
}

ConnectionKind ConnectionKind::mixed(int k1, int k2, LinkPosition pos) {
    if (k1 < 0 || k2 < 0 || k1 + k2 == 0)
        throw std::invalid_argument("mixed connection requires k1, k2 >= 0 and k1 + k2 > 0");
    return {Kind::Mixed, k1, k2, pos};
}

TopologyTrace eval_dense_general(std::span<const TransformFn> layers, const TensorPtr& x0,
                                 const ConnectionKind& connect) {
    if (connect.kind == ConnectionKind::Kind::Mixed)
        throw std::invalid_argument(
            "the mixed connection pairs an inner and an outer transform per layer; "
            "use eval_mixed");
    TopologyTrace trace;
    trace.x.push_back(x0);
    trace.s.push_back(x0);
    for (const auto& layer : layers) {
        TensorPtr connected;
        if (connect.kind == ConnectionKind::Kind::Sum) {
            if (layer.out_channels != x0->shape.c)
                throw std::invalid_argument(
                    "additive connection requires equal widths: layer produces " +
                    std::to_string(layer.out_channels) + ", trunk width is " +
                    std::to_string(x0->shape.c));
            connected = trace.x[0];
            for (std::size_t i = 1; i < trace.x.size(); ++i)
                connected = add(connected, trace.x[i]);
        } else {
            connected = trace.x[0];
            for (std::size_t i = 1; i < trace.x.size(); ++i)
                connected = channel_concat(connected, trace.x[i]);
        }
        trace.x.push_back(layer(connected));
        trace.s.push_back(connect.kind == ConnectionKind::Kind::Sum
                              ? add(connected, trace.x.back())
                              : channel_concat(connected, trace.x.back()));
    }
    return trace;
}

TopologyTrace eval_densenet(std::span<const TransformFn> layers, const TensorPtr& x0) {
    TopologyTrace trace;
    trace.x.push_back(x0);
    trace.s.push_back(x0);
    for (const auto& layer : layers) {
        trace.x.push_back(layer(trace.s.back()));
        trace.s.push_back(channel_concat(trace.s.back(), trace.x.back()));
    }
    return trace;
}

TopologyTrace eval_resnet_recursive(std::span<const TransformFn> layers, const TensorPtr& x0) {
    TopologyTrace trace;
    trace.x.push_back(x0);
    trace.r.push_back(x0);
    for (const auto& layer : layers) {
        if (layer.out_channels != x0->shape.c)
            throw std::invalid_argument("additive recursion requires equal widths");
        trace.x.push_back(layer(trace.r.back()));
        trace.r.push_back(add(trace.x.back(), trace.r.back()));
    }
    trace.s = trace.r;
    return trace;
}

TopologyTrace eval_resnet_unrolled(std::span<const TransformFn> layers, const TensorPtr& x0) {
    TopologyTrace trace;
    trace.x.push_back(x0);
    trace.s.push_back(x0);
    for (const auto& layer : layers) {
        if (layer.out_channels != x0->shape.c)
            throw std::invalid_argument("additive connection requires equal widths");
        TensorPtr summed = trace.x[0];
        for (std::size_t i = 1; i < trace.x.size(); ++i) summed = add(summed, trace.x[i]);
        trace.x.push_back(layer(summed));
        trace.s.push_back(add(summed, trace.x.back()));
    }
    return trace;
}

TopologyTrace eval_mixed(std::span<const MixedLayer> layers, const TensorPtr& x0,
                         const ConnectionKind& connect) {
    if (connect.kind != ConnectionKind::Kind::Mixed)
        throw std::invalid_argument("eval_mixed requires a mixed connection");
    TopologyTrace trace;
    trace.x.push_back(x0);
    trace.s.push_back(x0);
    for (const auto& layer : layers)
        trace.s.push_back(mixed_step(trace.s.back(), layer.inner, layer.outer, connect));
    return trace;
}

TensorPtr inner_link_step(const TensorPtr& s_prev, const TransformFn& h_in, int offset) {
    if (offset < 0 || offset + h_in.out_channels > s_prev->shape.c)
        throw std::invalid_argument("inner link range [" + std::to_string(offset) + ", " +
                                    std::to_string(offset + h_in.out_channels) +
                                    ") overflows width " + std::to_string(s_prev->shape.c));
    return channel_add_at(s_prev, h_in(s_prev), offset);
}

TensorPtr outer_link_step(const TensorPtr& s_prev, const TransformFn& h_out) {
    if (h_out.absent()) return s_prev;
    return channel_concat(s_prev, h_out(s_prev));
}

TensorPtr mixed_step(const TensorPtr& s_prev, const TransformFn& h_in, const TransformFn& h_out,
                     const ConnectionKind& config) {
    if (config.kind != ConnectionKind::Kind::Mixed)
        throw std::invalid_argument("mixed_step requires a mixed connection");
    if (config.k1 > s_prev->shape.c)
        throw std::invalid_argument("inner link size " + std::to_string(config.k1) +
                                    " exceeds current width " + std::to_string(s_prev->shape.c));
    TensorPtr merged = s_prev;
    if (config.k1 > 0) {
        if (h_in.out_channels != config.k1)
            throw std::invalid_argument("inner transform width " +
                                        std::to_string(h_in.out_channels) +
                                        " does not match k1 = " + std::to_string(config.k1));
        const int offset =
            config.position == LinkPosition::Fixed ? 0 : s_prev->shape.c - config.k1;
        merged = channel_add_at(s_prev, h_in(s_prev), offset);
    }
    if (config.k2 > 0) {
        if (h_out.out_channels != config.k2)
            throw std::invalid_argument("outer transform width " +
                                        std::to_string(h_out.out_channels) +
                                        " does not match k2 = " + std::to_string(config.k2));
        // Both transforms read the pre-update S_{l-1}.
        merged = channel_concat(merged, h_out(s_prev));
    }
    return merged;
}

TensorPtr eval_dual_path_reference(std::span<const MixedLayer> layers, const TensorPtr& x0,
                                   int k1, int k2) {
    if (k1 < 0 || k2 < 0 || k1 + k2 == 0)
        throw std::invalid_argument("dual path requires k1, k2 >= 0 and k1 + k2 > 0");
    if (k1 > x0->shape.c)
        throw std::invalid_argument("residual path width " + std::to_string(k1) +
                                    " exceeds input width " + std::to_string(x0->shape.c));

    TensorPtr residual = slice_channels(x0, 0, k1);
    std::vector<TensorPtr> dense_parts;
    if (x0->shape.c > k1) dense_parts.push_back(slice_channels(x0, k1, x0->shape.c - k1));

    auto join = [&]() {
        TensorPtr s = residual;
        for (const auto& part : dense_parts) s = channel_concat(s, part);
        return s;
    };

    TensorPtr joined = join();
    for (const auto& layer : layers) {
        TensorPtr next_residual = residual;
        if (k1 > 0) next_residual = add(residual, layer.inner(joined));
        if (k2 > 0) dense_parts.push_back(layer.outer(joined));
        residual = next_residual;
        joined = join();
    }
    return joined;
}

} // namespace mixlink
