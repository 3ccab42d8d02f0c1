#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lshg/blocks.hpp"
#include "lshg/graph.hpp"

namespace lshg {

struct NetworkConfig {
    int num_stacks = 1;
    Variant variant = Variant::original;
    int hg_depth = 4;  // pooling levels inside each hourglass
    std::array<int, 2> stem_channels{64, 128};
    int hg_channels = 128;
    int num_joints = 16;
    int input_res = 256;
    int heatmap_res = 64;
    bool reduced_stem = false;     // halve the stem ladder widths
    int blocks_per_scale = 1;      // residual units per hourglass scale slot
    MergeMode multidilated_merge = MergeMode::concat;

    void validate() const;

    int stem0() const { return reduced_stem ? stem_channels[0] / 2 : stem_channels[0]; }
    int stem1() const { return reduced_stem ? stem_channels[1] / 2 : stem_channels[1]; }
    BlockSpec block_spec(int cin, int cout) const;
};

template <typename T>
struct StackedHourglass {
    NetworkConfig config;
    uint64_t seed = 0;
    LayerGraph<T> graph;

    // One heatmap tensor per stack, each (batch, num_joints, heatmap_res, heatmap_res).
    // Pointers index into the executor and stay valid until its next forward.
    std::vector<const Tensor4<T>*> forward(const Tensor4<T>& input, BnMode mode,
                                           GraphExec<T>& ex, bool retain) {
        return graph_forward(graph, input, mode, ex, retain);
    }
};

template <typename T>
StackedHourglass<T> build_network(const NetworkConfig& config, uint64_t seed);

// Standalone recursive hourglass (input/output at `channels`).
template <typename T>
LayerGraph<T> build_hourglass(int depth, int channels, Variant variant, int blocks_per_scale = 1,
                              MergeMode merge = MergeMode::concat);

// Sub-structure itemization of the closed-form audit.
struct ParamBreakdown {
    int64_t stem = 0;
    int64_t hourglasses = 0;
    int64_t post_blocks = 0;
    int64_t heads = 0;   // fc + score per stack
    int64_t remaps = 0;  // inter-stack re-injection convs
    int64_t total() const { return stem + hourglasses + post_blocks + heads + remaps; }
};

ParamBreakdown network_param_closed_form(const NetworkConfig& config);
uint64_t network_mac_closed_form(const NetworkConfig& config, int input_res);

// Registry enumeration, cross-checked against the closed form; disagreement
// throws InternalConsistencyError.
template <typename T>
int64_t count_parameters(const StackedHourglass<T>& net);

template <typename T>
uint64_t count_macs(const StackedHourglass<T>& net, int input_res);

}  // namespace lshg
