#include "aps/polyphase.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace aps {

namespace {

inline int component_extent(int src, int offset, int s) {
    // ceil((src - offset) / s), zero when offset >= src
    if (offset >= src) return 0;
    return (src - offset + s - 1) / s;
}

void check_stride(const Tensor& x, int s) {
    const Shape& sh = x.shape();
    if (s < 1) throw std::invalid_argument("decompose: stride must be >= 1");
    // Degenerate (extent-1) axes carry 1-D signals; the stride only has to
    // fit the non-degenerate axes.
    if ((sh.h > 1 && s > sh.h) || (sh.w > 1 && s > sh.w)) {
        throw std::invalid_argument("decompose: stride " + std::to_string(s) +
                                    " out of range for input " + to_string(sh));
    }
}

}  // namespace

const Tensor& PolyphaseSet::component(int i, int j) const {
    if (i < 0 || i >= stride || j < 0 || j >= stride) {
        throw std::invalid_argument("polyphase component index (" + std::to_string(i) + "," +
                                    std::to_string(j) + ") out of range for stride " +
                                    std::to_string(stride));
    }
    return components[static_cast<size_t>(i) * stride + j];
}

bool PolyphaseSet::component_empty(int i, int j) const {
    return component(i, j).numel() == 0;
}

PolyphaseSet decompose(const Tensor& x, int s) {
    check_stride(x, s);
    const Shape& sh = x.shape();
    PolyphaseSet ps;
    ps.stride = s;
    ps.src_h = sh.h;
    ps.src_w = sh.w;
    ps.components.reserve(static_cast<size_t>(s) * s);
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
            const int ch = component_extent(sh.h, i, s);
            const int cw = component_extent(sh.w, j, s);
            Tensor comp({sh.n, sh.c, ch, cw}, x.precision());
            for (int n = 0; n < sh.n; ++n) {
                for (int c = 0; c < sh.c; ++c) {
                    for (int y = 0; y < ch; ++y) {
                        for (int xo = 0; xo < cw; ++xo) {
                            comp.set(n, c, y, xo, x.at(n, c, s * y + i, s * xo + j));
                        }
                    }
                }
            }
            ps.components.push_back(std::move(comp));
        }
    }
    return ps;
}

Tensor reassemble(const PolyphaseSet& ps) {
    if (ps.components.empty()) throw std::invalid_argument("reassemble: empty set");
    const Shape& c0 = ps.components.front().shape();
    Tensor out({c0.n, c0.c, ps.src_h, ps.src_w}, ps.components.front().precision());
    const int s = ps.stride;
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
            const Tensor& comp = ps.component(i, j);
            const Shape& cs = comp.shape();
            for (int n = 0; n < cs.n; ++n) {
                for (int c = 0; c < cs.c; ++c) {
                    for (int y = 0; y < cs.h; ++y) {
                        for (int xo = 0; xo < cs.w; ++xo) {
                            out.set(n, c, s * y + i, s * xo + j, comp.at(n, c, y, xo));
                        }
                    }
                }
            }
        }
    }
    return out;
}

namespace {

double norm_of(const Tensor& t, NormKind norm) {
    double l1 = 0.0, sq = 0.0, linf = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) {
        const double v = t.at_flat(i);
        const double a = std::abs(v);
        l1 += a;
        sq += v * v;
        if (a > linf) linf = a;
    }
    switch (norm) {
        case NormKind::L1: return l1;
        case NormKind::L2: return std::sqrt(sq);
        case NormKind::Linf: return linf;
        case NormKind::L1PlusL2: return l1 + std::sqrt(sq);
    }
    return 0.0;
}

}  // namespace

std::vector<double> component_scores(const PolyphaseSet& ps, const SelectionCriterion& c) {
    std::vector<double> scores;
    scores.reserve(ps.components.size());
    for (const Tensor& comp : ps.components) scores.push_back(norm_of(comp, c.norm));
    return scores;
}

ApsIndex select(const PolyphaseSet& ps, const SelectionCriterion& c) {
    const std::vector<double> scores = component_scores(ps, c);
    const int s = ps.stride;
    ApsIndex best{0, 0};
    bool have = false;
    double best_score = 0.0;
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
            if (ps.component_empty(i, j)) continue;
            const double score = scores[static_cast<size_t>(i) * s + j];
            const bool better = c.mode == SelectMode::Argmax ? score > best_score
                                                             : score < best_score;
            if (!have || better) {
                best = {i, j};
                best_score = score;
                have = true;
            }
        }
    }
    if (!have) throw std::invalid_argument("select: all components empty");
    return best;
}

ApsResult aps_downsample(const Tensor& x, int s, const SelectionCriterion& c) {
    PolyphaseSet ps = decompose(x, s);
    const ApsIndex idx = select(ps, c);
    return {ps.component(idx.i, idx.j), idx};
}

Tensor downsample_with_index(const Tensor& x, int s, ApsIndex idx) {
    check_stride(x, s);
    if (idx.i < 0 || idx.i >= s || idx.j < 0 || idx.j >= s) {
        throw std::invalid_argument("downsample_with_index: index (" + std::to_string(idx.i) +
                                    "," + std::to_string(idx.j) + ") out of range for stride " +
                                    std::to_string(s));
    }
    const Shape& sh = x.shape();
    const int ch = component_extent(sh.h, idx.i, s);
    const int cw = component_extent(sh.w, idx.j, s);
    Tensor out({sh.n, sh.c, ch, cw}, x.precision());
    for (int n = 0; n < sh.n; ++n) {
        for (int c = 0; c < sh.c; ++c) {
            for (int y = 0; y < ch; ++y) {
                for (int xo = 0; xo < cw; ++xo) {
                    out.set(n, c, y, xo, x.at(n, c, s * y + idx.i, s * xo + idx.j));
                }
            }
        }
    }
    return out;
}

Tensor conventional_downsample(const Tensor& x, int s) {
    return downsample_with_index(x, s, {0, 0});
}

Tensor aps_backward(const Tensor& upstream, ApsIndex idx, int s, Shape in_shape) {
    const int ch = component_extent(in_shape.h, idx.i, s);
    const int cw = component_extent(in_shape.w, idx.j, s);
    if (upstream.shape() != Shape{in_shape.n, in_shape.c, ch, cw}) {
        throw std::invalid_argument("aps_backward: upstream shape " +
                                    to_string(upstream.shape()) +
                                    " does not match component " +
                                    to_string(Shape{in_shape.n, in_shape.c, ch, cw}));
    }
    Tensor dx(in_shape, Precision::F64);
    for (int n = 0; n < in_shape.n; ++n) {
        for (int c = 0; c < in_shape.c; ++c) {
            for (int y = 0; y < ch; ++y) {
                for (int xo = 0; xo < cw; ++xo) {
                    dx.set(n, c, s * y + idx.i, s * xo + idx.j, upstream.at(n, c, y, xo));
                }
            }
        }
    }
    return dx;
}

std::optional<std::pair<int, int>> equal_up_to_shift(const Tensor& a, const Tensor& b,
                                                     int max_shift) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("equal_up_to_shift: shapes " + to_string(a.shape()) +
                                    " vs " + to_string(b.shape()));
    }
    constexpr double kTol = 1e-6;
    // magnitude order, positive first: 0, 1, -1, 2, -2, ...
    std::vector<int> order;
    order.push_back(0);
    for (int m = 1; m <= max_shift; ++m) {
        order.push_back(m);
        order.push_back(-m);
    }
    for (int dy : order) {
        for (int dx : order) {
            if (max_abs_diff(circular_shift(a, dy, dx), b) <= kTol) {
                return std::make_pair(dy, dx);
            }
        }
    }
    return std::nullopt;
}

}  // namespace aps
