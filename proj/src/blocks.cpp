#include "lshg/blocks.hpp"

namespace lshg {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::original: return "original";
        case Variant::dw1: return "dw1";
        case Variant::dw3: return "dw3";
        case Variant::ghost: return "ghost";
        case Variant::multidilated: return "multidilated";
    }
    return "?";
}

Variant parse_variant(const std::string& name, bool* reduced_stem) {
    if (reduced_stem) *reduced_stem = false;
    if (name == "original") return Variant::original;
    if (name == "dw1") return Variant::dw1;
    if (name == "dw3") return Variant::dw3;
    if (name == "ghost") return Variant::ghost;
    if (name == "multidilated") return Variant::multidilated;
    if (name == "ghost_reduced") {
        if (reduced_stem) *reduced_stem = true;
        return Variant::ghost;
    }
    throw ConfigError("unknown variant '" + name +
                      "' (valid: original, dw1, dw3, ghost, ghost_reduced, multidilated)");
}

void GhostModuleSpec::validate() const {
    if (in_channels <= 0 || out_channels <= 0)
        throw ConfigError("ghost module: channel counts must be positive");
    if (ratio <= 0) throw ConfigError("ghost module: ratio must be positive");
    if (out_channels % ratio != 0)
        throw ConfigError("ghost module: out_channels " + std::to_string(out_channels) +
                          " not divisible by ratio " + std::to_string(ratio));
    if (cheap_kernel <= 0 || cheap_kernel % 2 == 0)
        throw ConfigError("ghost module: cheap_kernel must be odd and positive");
}

void BlockSpec::validate() const {
    if (in_channels <= 0 || out_channels <= 0)
        throw ConfigError("block: channel counts must be positive");
    if (mid() < 1) throw ConfigError("block: mid_channels must be >= 1");
    if (variant == Variant::ghost) {
        if (ghost_ratio <= 0) throw ConfigError("block: ghost_ratio must be positive");
        if (mid() % ghost_ratio != 0 || out_channels % ghost_ratio != 0)
            throw ConfigError("block: ghost variant needs mid and out divisible by ratio " +
                              std::to_string(ghost_ratio));
    }
    if (variant == Variant::multidilated) {
        if (dilations.empty()) throw ConfigError("block: multidilated needs dilations");
        for (int d : dilations)
            if (d <= 0) throw ConfigError("block: dilations must be positive");
    }
}

namespace {

ConvSpec conv1x1(int cin, int cout, bool bias = false) {
    ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = 1;
    s.has_bias = bias;
    return s;
}

ConvSpec conv3x3(int cin, int cout, int dilation = 1) {
    ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = 3;
    s.padding = dilation;
    s.dilation = dilation;
    return s;
}

ConvSpec conv_dw(int ch, int kernel, int dilation = 1) {
    ConvSpec s;
    s.in_channels = ch;
    s.out_channels = ch;
    s.kernel = kernel;
    s.padding = dilation * (kernel - 1) / 2;
    s.dilation = dilation;
    s.groups = ch;
    return s;
}

// batchnorm + relu in front of a conv unit (pre-activation order)
template <typename T>
int preact(GraphBuilder<T>& b, const std::string& prefix, int in, int channels) {
    const int bn = b.batchnorm(prefix + ".bn", in, channels);
    return b.relu(prefix + ".relu", bn);
}

}  // namespace

template <typename T>
int emit_ghost_module(GraphBuilder<T>& b, const std::string& prefix,
                      const GhostModuleSpec& spec, int in) {
    spec.validate();
    const int intr = spec.intrinsic_channels();
    int primary = b.conv(prefix + ".primary", in, conv1x1(spec.in_channels, intr));
    primary = b.batchnorm(prefix + ".primary_bn", primary, intr);
    if (spec.relu_after) primary = b.relu(prefix + ".primary_relu", primary);
    if (spec.ghost_channels() == 0) return primary;  // ratio 1: plain 1x1 conv

    ConvSpec cheap = conv_dw(intr, spec.cheap_kernel);
    cheap.out_channels = spec.ghost_channels();  // channel multiplier ratio-1
    int ghost = b.conv(prefix + ".cheap", primary, cheap);
    ghost = b.batchnorm(prefix + ".cheap_bn", ghost, spec.ghost_channels());
    if (spec.relu_after) ghost = b.relu(prefix + ".cheap_relu", ghost);
    return b.concat(prefix + ".concat", {primary, ghost});
}

template <typename T>
int emit_block(GraphBuilder<T>& b, const std::string& prefix, const BlockSpec& spec, int in) {
    spec.validate();
    const int cin = spec.in_channels, cout = spec.out_channels, mid = spec.mid();
    int main = in;

    switch (spec.variant) {
        case Variant::original: {
            main = preact(b, prefix + ".u1", main, cin);
            main = b.conv(prefix + ".u1.conv", main, conv1x1(cin, mid));
            main = preact(b, prefix + ".u2", main, mid);
            main = b.conv(prefix + ".u2.conv", main, conv3x3(mid, mid));
            main = preact(b, prefix + ".u3", main, mid);
            main = b.conv(prefix + ".u3.conv", main, conv1x1(mid, cout));
            break;
        }
        case Variant::dw1: {
            main = preact(b, prefix + ".u1", main, cin);
            main = b.conv(prefix + ".u1.conv", main, conv1x1(cin, mid));
            main = preact(b, prefix + ".u2", main, mid);
            main = b.conv(prefix + ".u2.dw", main, conv_dw(mid, 3));
            main = b.conv(prefix + ".u2.pw", main, conv1x1(mid, mid));
            main = preact(b, prefix + ".u3", main, mid);
            main = b.conv(prefix + ".u3.conv", main, conv1x1(mid, cout));
            break;
        }
        case Variant::dw3: {
            main = preact(b, prefix + ".u1", main, cin);
            main = b.conv(prefix + ".u1.dw", main, conv_dw(cin, 3));
            main = b.conv(prefix + ".u1.pw", main, conv1x1(cin, mid));
            main = preact(b, prefix + ".u2", main, mid);
            main = b.conv(prefix + ".u2.dw", main, conv_dw(mid, 3));
            main = b.conv(prefix + ".u2.pw", main, conv1x1(mid, mid));
            main = preact(b, prefix + ".u3", main, mid);
            main = b.conv(prefix + ".u3.dw", main, conv_dw(mid, 3));
            main = b.conv(prefix + ".u3.pw", main, conv1x1(mid, cout));
            break;
        }
        case Variant::ghost: {
            GhostModuleSpec gm1{cin, mid, spec.ghost_ratio, 3, true};
            GhostModuleSpec gm2{mid, cout, spec.ghost_ratio, 3, false};
            main = emit_ghost_module(b, prefix + ".gm1", gm1, main);
            main = emit_ghost_module(b, prefix + ".gm2", gm2, main);
            break;
        }
        case Variant::multidilated: {
            main = preact(b, prefix + ".pre", main, cin);
            std::vector<int> branches;
            for (size_t i = 0; i < spec.dilations.size(); i++) {
                const std::string bp = prefix + ".branch" + std::to_string(i);
                int t = b.conv(bp + ".reduce", main, conv1x1(cin, mid));
                t = preact(b, bp, t, mid);
                t = b.conv(bp + ".dw", t, conv_dw(mid, 3, spec.dilations[i]));
                t = b.conv(bp + ".pw", t, conv1x1(mid, mid));
                branches.push_back(t);
            }
            int merged;
            int merged_ch;
            if (spec.multidilated_merge == MergeMode::concat) {
                merged = b.concat(prefix + ".concat", branches);
                merged_ch = mid * static_cast<int>(spec.dilations.size());
            } else {
                merged = branches[0];
                for (size_t i = 1; i < branches.size(); i++)
                    merged = b.add(prefix + ".merge" + std::to_string(i), merged, branches[i]);
                merged_ch = mid;
            }
            merged = preact(b, prefix + ".post", merged, merged_ch);
            main = b.conv(prefix + ".post.conv", merged, conv1x1(merged_ch, cout));
            break;
        }
    }

    int skip = in;
    if (spec.has_projection())
        skip = b.conv(prefix + ".skip", in, conv1x1(cin, cout, /*bias=*/true));
    return b.add(prefix + ".add", skip, main);
}

template <typename T>
LayerGraph<T> build_block(const BlockSpec& spec, uint64_t seed) {
    LayerGraph<T> g;
    GraphBuilder<T> b(g, seed);
    const int in = b.input();
    const int out = emit_block(b, "block", spec, in);
    b.mark_output(out);
    return g;
}

template <typename T>
LayerGraph<T> build_ghost_module(const GhostModuleSpec& spec, uint64_t seed) {
    LayerGraph<T> g;
    GraphBuilder<T> b(g, seed);
    const int in = b.input();
    const int out = emit_ghost_module(b, "ghost", spec, in);
    b.mark_output(out);
    return g;
}

namespace {

int64_t bn_params(int64_t ch) { return 2 * ch; }
int64_t conv_params(int64_t cin, int64_t cout, int64_t k, int64_t groups = 1,
                    bool bias = false) {
    return cout * (cin / groups) * k * k + (bias ? cout : 0);
}

}  // namespace

int64_t ghost_module_param_count_closed_form(const GhostModuleSpec& spec) {
    spec.validate();
    const int64_t intr = spec.intrinsic_channels();
    const int64_t ghost = spec.ghost_channels();
    int64_t total = conv_params(spec.in_channels, intr, 1) + bn_params(intr);
    if (ghost > 0)
        total += conv_params(intr, ghost, spec.cheap_kernel, intr) + bn_params(ghost);
    return total;
}

int64_t block_param_count_closed_form(const BlockSpec& spec) {
    spec.validate();
    const int64_t cin = spec.in_channels, cout = spec.out_channels, mid = spec.mid();
    int64_t total = 0;
    switch (spec.variant) {
        case Variant::original:
            total = bn_params(cin) + conv_params(cin, mid, 1) + bn_params(mid) +
                    conv_params(mid, mid, 3) + bn_params(mid) + conv_params(mid, cout, 1);
            break;
        case Variant::dw1:
            total = bn_params(cin) + conv_params(cin, mid, 1) + bn_params(mid) +
                    conv_params(mid, mid, 3, mid) + conv_params(mid, mid, 1) + bn_params(mid) +
                    conv_params(mid, cout, 1);
            break;
        case Variant::dw3:
            total = bn_params(cin) + conv_params(cin, cin, 3, cin) + conv_params(cin, mid, 1) +
                    bn_params(mid) + conv_params(mid, mid, 3, mid) + conv_params(mid, mid, 1) +
                    bn_params(mid) + conv_params(mid, mid, 3, mid) + conv_params(mid, cout, 1);
            break;
        case Variant::ghost: {
            GhostModuleSpec gm1{spec.in_channels, static_cast<int>(mid), spec.ghost_ratio, 3,
                                true};
            GhostModuleSpec gm2{static_cast<int>(mid), spec.out_channels, spec.ghost_ratio, 3,
                                false};
            total = ghost_module_param_count_closed_form(gm1) +
                    ghost_module_param_count_closed_form(gm2);
            break;
        }
        case Variant::multidilated: {
            const int64_t nb = static_cast<int64_t>(spec.dilations.size());
            const int64_t branch = conv_params(cin, mid, 1) + bn_params(mid) +
                                   conv_params(mid, mid, 3, mid) + conv_params(mid, mid, 1);
            const int64_t merged_ch =
                spec.multidilated_merge == MergeMode::concat ? nb * mid : mid;
            total = bn_params(cin) + nb * branch + bn_params(merged_ch) +
                    conv_params(merged_ch, cout, 1);
            break;
        }
    }
    if (spec.has_projection()) total += conv_params(cin, cout, 1, 1, /*bias=*/true);
    return total;
}

uint64_t block_mac_count_closed_form(const BlockSpec& spec, int64_t h, int64_t w) {
    spec.validate();
    const uint64_t hw = uint64_t(h) * uint64_t(w);
    const uint64_t cin = spec.in_channels, cout = spec.out_channels, mid = spec.mid();
    uint64_t per_px = 0;
    switch (spec.variant) {
        case Variant::original:
            per_px = cin * mid + mid * mid * 9 + mid * cout;
            break;
        case Variant::dw1:
            per_px = cin * mid + mid * 9 + mid * mid + mid * cout;
            break;
        case Variant::dw3:
            per_px = cin * 9 + cin * mid + mid * 9 + mid * mid + mid * 9 + mid * cout;
            break;
        case Variant::ghost: {
            const uint64_t i1 = uint64_t(mid) / spec.ghost_ratio;
            const uint64_t g1 = mid - i1;
            const uint64_t i2 = cout / spec.ghost_ratio;
            const uint64_t g2 = cout - i2;
            per_px = cin * i1 + g1 * 9 + mid * i2 + g2 * 9;
            break;
        }
        case Variant::multidilated: {
            const uint64_t nb = spec.dilations.size();
            const uint64_t merged_ch =
                spec.multidilated_merge == MergeMode::concat ? nb * mid : mid;
            per_px = nb * (cin * mid + mid * 9 + mid * mid) + merged_ch * cout;
            break;
        }
    }
    if (spec.has_projection()) per_px += cin * cout;
    return per_px * hw;
}

int64_t block_param_count(const BlockSpec& spec) {
    const auto g = build_block<float>(spec, 0);
    const int64_t enumerated = g.param_count();
    const int64_t closed = block_param_count_closed_form(spec);
    if (enumerated != closed)
        throw InternalConsistencyError(
            "block_param_count: enumeration " + std::to_string(enumerated) +
            " != closed form " + std::to_string(closed) + " for variant " +
            variant_name(spec.variant));
    return enumerated;
}

uint64_t block_mac_count(const BlockSpec& spec, int64_t h, int64_t w) {
    const auto g = build_block<float>(spec, 0);
    const uint64_t enumerated = graph_macs(g, Shape4{1, spec.in_channels, h, w});
    const uint64_t closed = block_mac_count_closed_form(spec, h, w);
    if (enumerated != closed)
        throw InternalConsistencyError("block_mac_count: enumeration " +
                                       std::to_string(enumerated) + " != closed form " +
                                       std::to_string(closed) + " for variant " +
                                       variant_name(spec.variant));
    return enumerated;
}

#define LSHG_INSTANTIATE(T)                                                                   \
    template int emit_block<T>(GraphBuilder<T>&, const std::string&, const BlockSpec&, int); \
    template int emit_ghost_module<T>(GraphBuilder<T>&, const std::string&,                  \
                                      const GhostModuleSpec&, int);                          \
    template LayerGraph<T> build_block<T>(const BlockSpec&, uint64_t);                       \
    template LayerGraph<T> build_ghost_module<T>(const GhostModuleSpec&, uint64_t);

LSHG_INSTANTIATE(float)
LSHG_INSTANTIATE(double)

#undef LSHG_INSTANTIATE

}  // namespace lshg
