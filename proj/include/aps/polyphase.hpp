#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "aps/tensor.hpp"

namespace aps {

/// Grid offset (i, j) of a polyphase component, 0 <= i, j < stride.
struct ApsIndex {
    int i = 0;
    int j = 0;
    bool operator==(const ApsIndex&) const = default;
};

enum class NormKind { L1, L2, Linf, L1PlusL2 };
enum class SelectMode { Argmax, Argmin };

/// Permutation-invariant component selection rule. Ties always break to the
/// lexicographically first (i, j); the rule is fixed so that selection is
/// deterministic even on degenerate inputs.
struct SelectionCriterion {
    NormKind norm = NormKind::L2;
    SelectMode mode = SelectMode::Argmax;
};

/// The s*s stride-s polyphase components of a tensor: component (i, j) holds
/// x(s*n1 + i, s*n2 + j) for all batch elements and channels. Components are
/// stored row-major by (i, j). For inputs with a degenerate (extent-1) axis
/// the components with i >= H or j >= W are empty (zero rows or columns);
/// they are excluded from score-based selection.
struct PolyphaseSet {
    int stride = 1;
    int src_h = 0;
    int src_w = 0;
    std::vector<Tensor> components;  // size stride*stride

    const Tensor& component(int i, int j) const;
    bool component_empty(int i, int j) const;
};

PolyphaseSet decompose(const Tensor& x, int s);

/// Exact inverse of decompose.
Tensor reassemble(const PolyphaseSet& ps);

/// Score of component (i, j) under the criterion's norm, taken over every
/// element of the component (all batch items of the given tensor, all
/// channels, all pixels). Accumulation is sequential in 64-bit. Empty
/// components score 0.
std::vector<double> component_scores(const PolyphaseSet& ps, const SelectionCriterion& c);

/// Argmax/argmin of component_scores over non-empty components,
/// lexicographic-first tie break.
ApsIndex select(const PolyphaseSet& ps, const SelectionCriterion& c);

struct ApsResult {
    Tensor tensor;
    ApsIndex index;
};

/// Adaptive polyphase sampling: decompose, select, return the winning
/// component and its grid offset. s == 1 is the identity.
ApsResult aps_downsample(const Tensor& x, int s, const SelectionCriterion& c);

/// Component idx of decompose(x, s); used to sample residual shortcuts with
/// the index chosen on the main branch.
Tensor downsample_with_index(const Tensor& x, int s, ApsIndex idx);

/// Component (0, 0) — what a conventional stride layer computes.
Tensor conventional_downsample(const Tensor& x, int s);

/// Straight-through gradient of aps_downsample / downsample_with_index:
/// scatters the upstream gradient into positions (s*n1+i, s*n2+j) of a
/// zero tensor of shape in_shape. The selection index is treated as a
/// constant (it is piecewise constant away from score ties).
Tensor aps_backward(const Tensor& upstream, ApsIndex idx, int s, Shape in_shape);

/// Smallest circular shift (dy, dx) with |dy|,|dx| <= max_shift such that
/// circular_shift(a, dy, dx) matches b elementwise within 1e-6. Shifts are
/// scanned in magnitude order with the positive shift first (0, 1, -1, 2,
/// -2, ...) per axis, so equal inputs report (0, 0) and ambiguous wraps on
/// tiny extents resolve to the positive direction.
std::optional<std::pair<int, int>> equal_up_to_shift(const Tensor& a, const Tensor& b,
                                                     int max_shift);

}  // namespace aps
