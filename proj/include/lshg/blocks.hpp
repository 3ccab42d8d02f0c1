#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lshg/graph.hpp"

namespace lshg {

enum class Variant { original, dw1, dw3, ghost, multidilated };

const char* variant_name(Variant v);
// Accepts the five block variants plus "ghost_reduced" (ghost + reduced stem)
// at the config surface; throws ConfigError naming all six on anything else.
Variant parse_variant(const std::string& name, bool* reduced_stem = nullptr);

enum class MergeMode { concat, sum };

struct GhostModuleSpec {
    int in_channels = 0;
    int out_channels = 0;
    int ratio = 2;         // intrinsic = out / ratio, ghosts from a cheap depthwise op
    int cheap_kernel = 3;  // odd
    bool relu_after = true;

    void validate() const;
    int intrinsic_channels() const { return out_channels / ratio; }
    int ghost_channels() const { return out_channels - intrinsic_channels(); }
};

struct BlockSpec {
    Variant variant = Variant::original;
    int in_channels = 0;
    int out_channels = 0;
    int mid_channels = 0;  // 0 -> out_channels / 2
    std::vector<int> dilations{1, 2, 3};        // multidilated only
    int ghost_ratio = 2;                        // ghost only
    MergeMode multidilated_merge = MergeMode::concat;

    void validate() const;
    int mid() const { return mid_channels > 0 ? mid_channels : out_channels / 2; }
    bool has_projection() const { return in_channels != out_channels; }
};

// Appends one residual block to the graph; returns the output node.
template <typename T>
int emit_block(GraphBuilder<T>& b, const std::string& prefix, const BlockSpec& spec, int in);

template <typename T>
int emit_ghost_module(GraphBuilder<T>& b, const std::string& prefix, const GhostModuleSpec& spec,
                      int in);

// Standalone single-block / single-module graphs.
template <typename T>
LayerGraph<T> build_block(const BlockSpec& spec, uint64_t seed);

template <typename T>
LayerGraph<T> build_ghost_module(const GhostModuleSpec& spec, uint64_t seed);

// Closed-form learnable-parameter totals (conv weights + biases + bn gamma/beta),
// mirroring the emitted structure exactly.
int64_t ghost_module_param_count_closed_form(const GhostModuleSpec& spec);
int64_t block_param_count_closed_form(const BlockSpec& spec);

// Closed-form MACs for one forward at spatial size h x w (stride-1 blocks).
uint64_t block_mac_count_closed_form(const BlockSpec& spec, int64_t h, int64_t w);

// Enumerated totals from the built graph, cross-checked against the closed
// form; any disagreement throws InternalConsistencyError.
int64_t block_param_count(const BlockSpec& spec);
uint64_t block_mac_count(const BlockSpec& spec, int64_t h, int64_t w);

}  // namespace lshg
