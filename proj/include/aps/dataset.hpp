#pragma once

#include <vector>

#include "aps/tensor.hpp"

namespace aps {

/// Labelled single-image tensors (each (1, C, H, W)).
struct Dataset {
    std::vector<Tensor> images;
    std::vector<int> labels;
    int classes = 0;

    int size() const { return static_cast<int>(images.size()); }
    bool empty() const { return images.empty(); }
};

}  // namespace aps
