#pragma once

#include "tslc/graph.hpp"
#include "tslc/rng.hpp"

namespace tslc::model {

enum class SlicePolicy : std::uint8_t { DENSE_CNN = 0, LORA_ALL = 1 };

/// Registered desk architectures (all take 8x8 single-channel inputs and
/// emit 10 classes unless noted):
///   "mlp-s"  4x Linear(64,64) with ReLU between, Classifier(64,10).
///   "cnn-s"  6x Conv 3x3 stride 1 pad 1 (channels 2,4,8,16,32,64),
///            ReLU after each, Classifier(4096,10).
///   "vit-t"  Linear patch embed (2x2 patches -> d_model 32), then
///            2x [AttentionBlock(32,2) + FFN(32,64)], Classifier(32,10).
/// Channels in cnn-s double per conv so every 1x1 adapter fits the
/// 18x parameter budget of its target layer.
GraphSpec build_backbone(const std::string& arch, Rng& rng, int n_classes = 10);

/// Adds trainable slices to a frozen backbone.
/// DENSE_CNN: one adapter per backbone layer pair (p, i) with i - p in {1,2};
///            1x1 convs after conv layers, rank-r pairs after linear layers
///            with r = max(1, floor(d_in*d_out / (18*(d_in+d_out)))).
/// LORA_ALL:  one rank-4 pair on wq and wv of every attention block.
GraphSpec attach_slices(const GraphSpec& backbone, SlicePolicy policy, Rng& rng,
                        float alpha_init = 1.0f);

/// Parameter budget (18x rule) for an adapter targeting backbone ordinal i.
std::int64_t slice_param_budget(const GraphSpec& g, int target_ordinal);

bool is_registered_arch(const std::string& arch);

}  // namespace tslc::model
