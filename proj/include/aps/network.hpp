#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aps/antialias.hpp"
#include "aps/polyphase.hpp"
#include "aps/tensor.hpp"

namespace aps {

/// Downsampling flavour of a stride layer or residual block.
///   None      no downsampling (stride-1 block)
///   Baseline  conventional component-(0,0) sampling
///   LPF       binomial blur then conventional sampling
///   APS       adaptive polyphase sampling
///   APSBlur   binomial blur then adaptive polyphase sampling
enum class DownKind { None, Baseline, LPF, APS, APSBlur };

std::string to_string(DownKind kind);
DownKind down_kind_from_string(const std::string& name);

/// One entry of the layer graph. Convolutions are always stride 1; all
/// strided behaviour is expressed through Down / Block entries, mirroring
/// the dense-op-then-sample decomposition of strided layers.
struct LayerSpec {
    enum class Kind { Conv, Act, MaxPool, Down, Block, Gap, Fc };

    Kind kind = Kind::Conv;
    int out_channels = 0;                     // Conv, Block
    int ksize = 3;                            // Conv, MaxPool
    Activation act = Activation::relu();      // Act; Block inner activation
    DownKind down = DownKind::None;           // Down, Block
    int stride = 1;                           // Down, Block
    int blur = 3;                             // LPF / APSBlur kernel size
    SelectionCriterion criterion{};           // APS / APSBlur
    int classes = 0;                          // Fc

    static LayerSpec conv(int out_ch, int k = 3);
    static LayerSpec activation(Activation a);
    static LayerSpec max_pool(int k);
    static LayerSpec downsample(DownKind kind, int s, SelectionCriterion c = {},
                                int blur_size = 3);
    static LayerSpec block(int out_ch, DownKind kind = DownKind::None, int s = 1,
                           SelectionCriterion c = {}, int blur_size = 3,
                           Activation a = Activation::relu());
    static LayerSpec global_avg_pool();
    static LayerSpec fully_connected(int classes);
};

struct NetworkSpec {
    int in_channels = 1;
    int in_h = 32;
    int in_w = 32;
    Precision precision = Precision::F32;
    PadMode pad = PadMode::Circular;
    uint64_t seed = 0;
    std::vector<LayerSpec> layers;

    /// Key/value text form (schema documented in the README).
    std::string to_text() const;
    static NetworkSpec from_text(const std::string& text);
};

/// A named parameter tensor and its 64-bit gradient accumulator.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;  // always F64

    void zero_grad() { grad = Tensor::zeros(value.shape(), Precision::F64); }
};

namespace detail {
class LayerImpl;
struct TraceFrame;
}  // namespace detail

/// An instantiated network: spec plus parameters, deterministic in
/// (spec, seed). forward is const and reentrant; backward and parameter
/// updates require exclusive access.
class Network {
public:
    explicit Network(const NetworkSpec& spec);
    Network(Network&&) noexcept;
    Network& operator=(Network&&) noexcept;
    ~Network();

    const NetworkSpec& spec() const { return spec_; }

    Tensor forward(const Tensor& x) const;

    struct TapResult {
        Tensor logits;
        std::map<std::string, Tensor> taps;
    };
    /// As forward, also returning the activation after each layer whose id
    /// appears in tap_ids. Unknown ids are an error.
    TapResult forward_with_taps(const Tensor& x, std::span<const std::string> tap_ids) const;

    /// Forward + softmax cross-entropy + reverse pass; accumulates parameter
    /// gradients and returns the mean loss.
    double backward(const Tensor& x, std::span<const int> labels);

    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    void zero_grads();

    std::vector<std::string> layer_ids() const;
    /// Ids of residual blocks, in order (taps for stability probes).
    std::vector<std::string> block_ids() const;

    Shape input_shape(int batch) const {
        return {batch, spec_.in_channels, spec_.in_h, spec_.in_w};
    }
    int num_classes() const;

private:
    NetworkSpec spec_;
    std::vector<std::unique_ptr<detail::LayerImpl>> layers_;

    void check_input(const Tensor& x) const;
};

/// Mean softmax cross-entropy over the batch. If dlogits is non-null it
/// receives the 64-bit gradient (softmax - onehot) / N.
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Tensor* dlogits);

/// Per-element argmax over the class axis; ties resolve to the lowest index.
std::vector<int> predict_labels(const Tensor& logits);

/// Small residual classifier covering every mechanism: stride-1 stem
/// convolution, one plain block per stage, a strided block between stages,
/// global average pooling and a linear head.
struct ToyOptions {
    std::vector<int> channels = {8, 16, 32};
    int input = 32;
    int in_channels = 1;
    int classes = 4;
    Precision precision = Precision::F32;
    PadMode pad = PadMode::Circular;
    uint64_t seed = 0;
    SelectionCriterion criterion{};
    int blur = 3;
};

NetworkSpec make_toy_spec(DownKind kind, const ToyOptions& opt = {});

/// Parameter snapshots: one PSFT file per parameter plus a manifest.
void save_parameters(const Network& net, const std::string& dir);
void load_parameters(Network& net, const std::string& dir);

}  // namespace aps
