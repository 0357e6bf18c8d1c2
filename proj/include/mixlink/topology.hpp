#ifndef MIXLINK_TOPOLOGY_HPP
#define MIXLINK_TOPOLOGY_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mixlink/tensor.hpp"

// Connection functions and evaluators for the dense-topology family: the
// general form, the concatenative (DenseNet) and additive (ResNet) special
// cases, and the mixed inner/outer link steps that subsume all of them.

namespace mixlink {

/// An opaque layer transform with a declared output channel count.
/// A default-constructed TransformFn is the "absent" transform (width 0),
/// used where one of the two link sizes is zero.
struct TransformFn {
    std::function<TensorPtr(const TensorPtr&)> fn;
    int out_channels = 0;

    TransformFn() = default;
    TransformFn(std::function<TensorPtr(const TensorPtr&)> f, int out) : fn(std::move(f)), out_channels(out) {}

    bool absent() const { return out_channels == 0; }
    TensorPtr operator()(const TensorPtr& x) const;
};

enum class LinkPosition { Fixed, Unfixed };

/// The connection function C(.) of the dense topology: pure addition, pure
/// concatenation, or the mixed inner/outer form parameterized by
/// (k1, k2, position).
struct ConnectionKind {
    enum class Kind { Sum, Concat, Mixed };
    Kind kind = Kind::Sum;
    int k1 = 0;
    int k2 = 0;
    LinkPosition position = LinkPosition::Fixed;

    static ConnectionKind sum() { return {Kind::Sum, 0, 0, LinkPosition::Fixed}; }
    static ConnectionKind concat() { return {Kind::Concat, 0, 0, LinkPosition::Fixed}; }
    static ConnectionKind mixed(int k1, int k2, LinkPosition pos = LinkPosition::Unfixed);
};

/// Ordered record of the feature-maps an evaluator produced. x holds the
/// per-layer transform outputs X_0..X_L, s the running connection results
/// S_0..S_L, r the post-skip maps R_0..R_L (additive recursion only; for
/// that evaluator s aliases r since the two sequences coincide). The mixed
/// evaluator records s only (its per-layer outputs come in inner/outer
/// pairs).
struct TopologyTrace {
    std::vector<TensorPtr> x;
    std::vector<TensorPtr> s;
    std::vector<TensorPtr> r;

    const TensorPtr& final_s() const { return s.back(); }
};

/// One layer of a mixed chain: a transform for the inner (additive) link
/// and one for the outer (concatenative) link. Either may be absent.
struct MixedLayer {
    TransformFn inner;
    TransformFn outer;
};

/// General dense topology: X_l = H_l(C(X_0, ..., X_{l-1})) with the
/// connection recomputed from scratch each layer. Supports Sum and Concat;
/// the mixed connection needs per-layer transform pairs, use eval_mixed.
TopologyTrace eval_dense_general(std::span<const TransformFn> layers, const TensorPtr& x0,
                                 const ConnectionKind& connect);

/// Pure concatenation built incrementally: X_l = H_l(X_0 || ... || X_{l-1}).
TopologyTrace eval_densenet(std::span<const TransformFn> layers, const TensorPtr& x0);

/// Skip-connection recursion: R_l = H_l(R_{l-1}) + R_{l-1}, X_l = H_l(R_{l-1}).
TopologyTrace eval_resnet_recursive(std::span<const TransformFn> layers, const TensorPtr& x0);

/// The unrolled additive form: X_l = H_l(X_0 + X_1 + ... + X_{l-1}), each
/// sum recomputed by explicit left-fold over the stored X_i.
TopologyTrace eval_resnet_unrolled(std::span<const TransformFn> layers, const TensorPtr& x0);

/// The mixed chain: S_l = mixed_step(S_{l-1}, layers[l-1]).
TopologyTrace eval_mixed(std::span<const MixedLayer> layers, const TensorPtr& x0,
                         const ConnectionKind& connect);

/// S_{l-1} + H_in(S_{l-1}) added into channel range [offset, offset+k1).
TensorPtr inner_link_step(const TensorPtr& s_prev, const TransformFn& h_in, int offset);

/// S_{l-1} || H_out(S_{l-1}); identity when the transform is absent.
TensorPtr outer_link_step(const TensorPtr& s_prev, const TransformFn& h_out);

/// One step of the mixed link connection:
///   S_l = (S_{l-1} + H_in(S_{l-1})) || H_out(S_{l-1})
/// with the addition at offset 0 (Fixed) or width - k1 (Unfixed, the
/// growing boundary). Both transforms consume the pre-update S_{l-1}.
TensorPtr mixed_step(const TensorPtr& s_prev, const TransformFn& h_in, const TransformFn& h_out,
                     const ConnectionKind& config);

/// Independent dual-path oracle: a residual path of width k1 kept as its
/// own tensor and updated by addition, plus a list of concatenated dense
/// parts, re-joined into one embedding before each layer. Matches the
/// fixed-position mixed chain bit for bit.
TensorPtr eval_dual_path_reference(std::span<const MixedLayer> layers, const TensorPtr& x0,
                                   int k1, int k2);

} // namespace mixlink

#endif
