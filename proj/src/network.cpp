#include "lshg/network.hpp"

namespace lshg {

void NetworkConfig::validate() const {
    if (num_stacks < 1) throw ConfigError("network: num_stacks must be >= 1");
    if (hg_depth < 1) throw ConfigError("network: hg_depth must be >= 1");
    if (num_joints < 1) throw ConfigError("network: num_joints must be >= 1");
    if (blocks_per_scale < 1) throw ConfigError("network: blocks_per_scale must be >= 1");
    if (input_res < 4 || heatmap_res < 4)
        throw ConfigError("network: resolutions too small");
    if (input_res != 4 * heatmap_res)
        throw ConfigError("network: input_res must be 4x heatmap_res (two stride-2 stem "
                          "stages), got " +
                          std::to_string(input_res) + "/" + std::to_string(heatmap_res));
    if (heatmap_res % (1 << hg_depth) != 0 || heatmap_res / (1 << hg_depth) < 4)
        throw ConfigError("network: hourglass must bottom out at >= 4x4; heatmap_res " +
                          std::to_string(heatmap_res) + " with depth " +
                          std::to_string(hg_depth) + " does not");
    if (stem_channels[0] < 2 || stem_channels[1] < 2 || hg_channels < 2)
        throw ConfigError("network: channel widths must be >= 2");
    block_spec(stem0(), stem1()).validate();
    block_spec(hg_channels, hg_channels).validate();
}

BlockSpec NetworkConfig::block_spec(int cin, int cout) const {
    BlockSpec s;
    s.variant = variant;
    s.in_channels = cin;
    s.out_channels = cout;
    s.multidilated_merge = multidilated_merge;
    return s;
}

namespace {

template <typename T>
int emit_block_chain(GraphBuilder<T>& b, const std::string& prefix, const NetworkConfig& cfg,
                     int count, int cin, int cout, int in) {
    int cur = in;
    for (int i = 0; i < count; i++) {
        cur = emit_block(b, prefix + ".b" + std::to_string(i),
                         cfg.block_spec(i == 0 ? cin : cout, cout), cur);
    }
    return cur;
}

// One hourglass level: full-resolution skip blocks merged with a pooled,
// recursed, upsampled main branch.
template <typename T>
int emit_hourglass_level(GraphBuilder<T>& b, const std::string& prefix,
                         const NetworkConfig& cfg, int level, int in) {
    const int ch = cfg.hg_channels;
    const std::string lp = prefix + ".d" + std::to_string(level);
    const int up1 = emit_block_chain(b, lp + ".up1", cfg, cfg.blocks_per_scale, ch, ch, in);
    int low = b.maxpool(lp + ".pool", in);
    low = emit_block_chain(b, lp + ".low1", cfg, cfg.blocks_per_scale, ch, ch, low);
    if (level > 1)
        low = emit_hourglass_level(b, prefix, cfg, level - 1, low);
    else
        low = emit_block_chain(b, lp + ".low2", cfg, cfg.blocks_per_scale, ch, ch, low);
    low = emit_block_chain(b, lp + ".low3", cfg, cfg.blocks_per_scale, ch, ch, low);
    const int up2 = b.upsample(lp + ".up", low);
    return b.add(lp + ".add", up1, up2);
}

ConvSpec head_conv(int cin, int cout, bool bias) {
    ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = 1;
    s.has_bias = bias;
    return s;
}

}  // namespace

template <typename T>
LayerGraph<T> build_hourglass(int depth, int channels, Variant variant, int blocks_per_scale,
                              MergeMode merge) {
    if (depth < 1) throw ConfigError("hourglass: depth must be >= 1");
    NetworkConfig cfg;
    cfg.variant = variant;
    cfg.hg_channels = channels;
    cfg.blocks_per_scale = blocks_per_scale;
    cfg.multidilated_merge = merge;
    LayerGraph<T> g;
    GraphBuilder<T> b(g, 0);
    const int in = b.input();
    const int out = emit_hourglass_level(b, "hg", cfg, depth, in);
    b.mark_output(out);
    return g;
}

template <typename T>
StackedHourglass<T> build_network(const NetworkConfig& config, uint64_t seed) {
    config.validate();
    StackedHourglass<T> net;
    net.config = config;
    net.seed = seed;
    GraphBuilder<T> b(net.graph, seed);

    const int s0 = config.stem0(), s1 = config.stem1(), ch = config.hg_channels;
    const int J = config.num_joints;

    int x = b.input();
    ConvSpec c7;
    c7.in_channels = 3;
    c7.out_channels = s0;
    c7.kernel = 7;
    c7.stride = 2;
    c7.padding = 3;
    x = b.conv("stem.conv1", x, c7);
    x = b.batchnorm("stem.bn1", x, s0);
    x = b.relu("stem.relu1", x);
    x = emit_block(b, "stem.b1", config.block_spec(s0, s1), x);
    x = b.maxpool("stem.pool", x);
    x = emit_block(b, "stem.b2", config.block_spec(s1, ch), x);
    x = emit_block(b, "stem.b3", config.block_spec(ch, ch), x);

    for (int i = 0; i < config.num_stacks; i++) {
        const std::string sp = "stack" + std::to_string(i);
        const int stack_in = x;
        int y = emit_hourglass_level(b, sp + ".hg", config, config.hg_depth, stack_in);
        y = emit_block_chain(b, sp + ".res", config, config.blocks_per_scale, ch, ch, y);
        y = b.conv(sp + ".fc.conv", y, head_conv(ch, ch, false));
        y = b.batchnorm(sp + ".fc.bn", y, ch);
        y = b.relu(sp + ".fc.relu", y);
        const int score = b.conv(sp + ".score", y, head_conv(ch, J, true));
        b.mark_output(score);
        if (i + 1 < config.num_stacks) {
            const int remap_feat = b.conv(sp + ".remap_feat", y, head_conv(ch, ch, true));
            const int remap_score =
                b.conv(sp + ".remap_score", score, head_conv(J, ch, true));
            int merged = b.add(sp + ".merge1", stack_in, remap_feat);
            x = b.add(sp + ".merge2", merged, remap_score);
        }
    }
    return net;
}

namespace {

int64_t chain_params(const NetworkConfig& cfg, int count, int cin, int cout) {
    int64_t total = 0;
    for (int i = 0; i < count; i++)
        total += block_param_count_closed_form(cfg.block_spec(i == 0 ? cin : cout, cout));
    return total;
}

uint64_t chain_macs(const NetworkConfig& cfg, int count, int cin, int cout, int64_t r) {
    uint64_t total = 0;
    for (int i = 0; i < count; i++)
        total += block_mac_count_closed_form(cfg.block_spec(i == 0 ? cin : cout, cout), r, r);
    return total;
}

uint64_t hourglass_macs_closed(const NetworkConfig& cfg, int level, int64_t r) {
    const int ch = cfg.hg_channels;
    const int nb = cfg.blocks_per_scale;
    uint64_t total = chain_macs(cfg, nb, ch, ch, r);       // up1
    total += chain_macs(cfg, nb, ch, ch, r / 2);           // low1
    if (level > 1)
        total += hourglass_macs_closed(cfg, level - 1, r / 2);
    else
        total += chain_macs(cfg, nb, ch, ch, r / 2);       // low2 (innermost)
    total += chain_macs(cfg, nb, ch, ch, r / 2);           // low3
    return total;
}

}  // namespace

ParamBreakdown network_param_closed_form(const NetworkConfig& cfg) {
    cfg.validate();
    const int s0 = cfg.stem0(), s1 = cfg.stem1(), ch = cfg.hg_channels, J = cfg.num_joints;
    ParamBreakdown pb;
    pb.stem = int64_t(s0) * 3 * 49 + 2 * s0  // conv1 + bn1
              + block_param_count_closed_form(cfg.block_spec(s0, s1))
              + block_param_count_closed_form(cfg.block_spec(s1, ch))
              + block_param_count_closed_form(cfg.block_spec(ch, ch));
    const int units_per_hg = (3 * cfg.hg_depth + 1) * cfg.blocks_per_scale;
    const int64_t block = block_param_count_closed_form(cfg.block_spec(ch, ch));
    pb.hourglasses = int64_t(cfg.num_stacks) * units_per_hg * block;
    pb.post_blocks = int64_t(cfg.num_stacks) * cfg.blocks_per_scale * block;
    pb.heads = int64_t(cfg.num_stacks) *
               (int64_t(ch) * ch + 2 * ch           // fc conv + bn
                + int64_t(ch) * J + J);             // score conv + bias
    pb.remaps = int64_t(cfg.num_stacks - 1) *
                (int64_t(ch) * ch + ch + int64_t(J) * ch + ch);
    return pb;
}

uint64_t network_mac_closed_form(const NetworkConfig& cfg, int input_res) {
    cfg.validate();
    const int s0 = cfg.stem0(), s1 = cfg.stem1(), ch = cfg.hg_channels, J = cfg.num_joints;
    const int64_t r2 = input_res / 2;       // after the stride-2 stem conv
    const int64_t r4 = input_res / 4;       // hourglass working resolution
    uint64_t total = uint64_t(r2) * r2 * s0 * 3 * 49;  // stem conv1
    total += chain_macs(cfg, 1, s0, s1, r2);
    total += chain_macs(cfg, 1, s1, ch, r4);
    total += chain_macs(cfg, 1, ch, ch, r4);
    const uint64_t hw = uint64_t(r4) * r4;
    for (int i = 0; i < cfg.num_stacks; i++) {
        total += hourglass_macs_closed(cfg, cfg.hg_depth, r4);
        total += chain_macs(cfg, cfg.blocks_per_scale, ch, ch, r4);
        total += hw * ch * ch;      // fc
        total += hw * ch * J;       // score
        if (i + 1 < cfg.num_stacks) total += hw * (uint64_t(ch) * ch + uint64_t(J) * ch);
    }
    return total;
}

template <typename T>
int64_t count_parameters(const StackedHourglass<T>& net) {
    const int64_t enumerated = net.graph.param_count();
    const int64_t closed = network_param_closed_form(net.config).total();
    if (enumerated != closed)
        throw InternalConsistencyError("count_parameters: enumeration " +
                                       std::to_string(enumerated) + " != closed-form audit " +
                                       std::to_string(closed));
    return enumerated;
}

template <typename T>
uint64_t count_macs(const StackedHourglass<T>& net, int input_res) {
    const uint64_t enumerated =
        graph_macs(net.graph, Shape4{1, 3, input_res, input_res});
    const uint64_t closed = network_mac_closed_form(net.config, input_res);
    if (enumerated != closed)
        throw InternalConsistencyError("count_macs: enumeration " + std::to_string(enumerated) +
                                       " != closed-form audit " + std::to_string(closed));
    return enumerated;
}

#define LSHG_INSTANTIATE(T)                                                                \
    template StackedHourglass<T> build_network<T>(const NetworkConfig&, uint64_t);         \
    template LayerGraph<T> build_hourglass<T>(int, int, Variant, int, MergeMode);          \
    template int64_t count_parameters<T>(const StackedHourglass<T>&);                      \
    template uint64_t count_macs<T>(const StackedHourglass<T>&, int);

LSHG_INSTANTIATE(float)
LSHG_INSTANTIATE(double)

#undef LSHG_INSTANTIATE

}  // namespace lshg
