#include "lshg/graph.hpp"

#include <algorithm>

namespace lshg {

const char* node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::input: return "input";
        case NodeKind::conv: return "conv";
        case NodeKind::batchnorm: return "batchnorm";
        case NodeKind::relu: return "relu";
        case NodeKind::maxpool: return "maxpool";
        case NodeKind::upsample: return "upsample";
        case NodeKind::add: return "add";
        case NodeKind::concat: return "concat";
    }
    return "?";
}

template <typename T>
int GraphBuilder<T>::add_node(Node n) {
    for (int i : n.in)
        if (i < 0 || i >= static_cast<int>(g_.nodes.size()))
            throw ConfigError("graph: node '" + n.name + "' references unknown input node");
    g_.nodes.push_back(std::move(n));
    return static_cast<int>(g_.nodes.size()) - 1;
}

template <typename T>
int GraphBuilder<T>::add_param(const std::string& name, Shape4 shape, double uniform_bound) {
    if (g_.find_param(name) >= 0) throw ConfigError("graph: duplicate parameter '" + name + "'");
    Param<T> p;
    p.name = name;
    p.value = Tensor4<T>(shape);
    Rng rng = param_rng(seed_, name);
    for (auto& v : p.value.data) v = T(rng.uniform(-uniform_bound, uniform_bound));
    g_.params.push_back(std::move(p));
    return static_cast<int>(g_.params.size()) - 1;
}

template <typename T>
int GraphBuilder<T>::add_const_param(const std::string& name, Shape4 shape, T value) {
    if (g_.find_param(name) >= 0) throw ConfigError("graph: duplicate parameter '" + name + "'");
    Param<T> p;
    p.name = name;
    p.value = Tensor4<T>(shape);
    p.value.fill(value);
    g_.params.push_back(std::move(p));
    return static_cast<int>(g_.params.size()) - 1;
}

template <typename T>
int GraphBuilder<T>::add_buffer(const std::string& name, Shape4 shape, T value) {
    Param<T> p;
    p.name = name;
    p.value = Tensor4<T>(shape);
    p.value.fill(value);
    g_.buffers.push_back(std::move(p));
    return static_cast<int>(g_.buffers.size()) - 1;
}

template <typename T>
int GraphBuilder<T>::input() {
    if (g_.input >= 0) throw ConfigError("graph: input node already exists");
    Node n;
    n.kind = NodeKind::input;
    n.name = "input";
    g_.input = add_node(std::move(n));
    return g_.input;
}

template <typename T>
int GraphBuilder<T>::conv(const std::string& name, int in, const ConvSpec& spec) {
    spec.validate();
    Node n;
    n.kind = NodeKind::conv;
    n.name = name;
    n.in = {in};
    n.conv = spec;
    const double bound = std::sqrt(1.0 / double(spec.fan_in()));
    n.weight = add_param(name + ".weight", spec.weight_shape(), bound);
    if (spec.has_bias) n.bias = add_param(name + ".bias", {1, spec.out_channels, 1, 1}, bound);
    return add_node(std::move(n));
}

template <typename T>
int GraphBuilder<T>::batchnorm(const std::string& name, int in, int channels, double momentum,
                               double epsilon) {
    Node n;
    n.kind = NodeKind::batchnorm;
    n.name = name;
    n.in = {in};
    n.bn_momentum = momentum;
    n.bn_epsilon = epsilon;
    n.gamma = add_const_param(name + ".gamma", {1, channels, 1, 1}, T(1));
    n.beta = add_const_param(name + ".beta", {1, channels, 1, 1}, T(0));
    n.running_mean = add_buffer(name + ".running_mean", {1, channels, 1, 1}, T(0));
    n.running_var = add_buffer(name + ".running_var", {1, channels, 1, 1}, T(1));
    return add_node(std::move(n));
}

template <typename T>
int GraphBuilder<T>::relu(const std::string& name, int in) {
    Node n;
    n.kind = NodeKind::relu;
    n.name = name;
    n.in = {in};
    return add_node(std::move(n));
}

template <typename T>
int GraphBuilder<T>::maxpool(const std::string& name, int in) {
    Node n;
    n.kind = NodeKind::maxpool;
    n.name = name;
    n.in = {in};
    return add_node(std::move(n));
}

template <typename T>
int GraphBuilder<T>::upsample(const std::string& name, int in) {
    Node n;
    n.kind = NodeKind::upsample;
    n.name = name;
    n.in = {in};
    return add_node(std::move(n));
}

template <typename T>
int GraphBuilder<T>::add(const std::string& name, int a, int b) {
    Node n;
    n.kind = NodeKind::add;
    n.name = name;
    n.in = {a, b};
    return add_node(std::move(n));
}

template <typename T>
int GraphBuilder<T>::concat(const std::string& name, std::vector<int> ins) {
    Node n;
    n.kind = NodeKind::concat;
    n.name = name;
    n.in = std::move(ins);
    return add_node(std::move(n));
}

namespace {

template <typename T>
void accumulate(Tensor4<T>& dst, const Tensor4<T>& src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    check_same_shape(dst, src, "gradient accumulate");
    for (int64_t i = 0; i < dst.numel(); i++) dst.data[i] += src.data[i];
}

template <typename T>
void accumulate_move(Tensor4<T>& dst, Tensor4<T>&& src) {
    if (dst.empty()) {
        dst = std::move(src);
        return;
    }
    accumulate(dst, src);
}

}  // namespace

template <typename T>
std::vector<const Tensor4<T>*> graph_forward(LayerGraph<T>& g, const Tensor4<T>& input,
                                             BnMode mode, GraphExec<T>& ex, bool retain) {
    const int n_nodes = static_cast<int>(g.nodes.size());
    if (g.input < 0) throw ConfigError("graph: no input node");
    ex.act.assign(n_nodes, Tensor4<T>());
    ex.pool_idx.assign(n_nodes, {});
    ex.bn_cache.assign(n_nodes, {});
    ex.mode = mode;
    ex.retained = retain;

    // consumer counts drive early frees in inference mode
    std::vector<int> pending(n_nodes, 0);
    if (!retain) {
        for (const Node& node : g.nodes)
            for (int i : node.in) pending[i]++;
        for (int out : g.outputs) pending[out]++;  // outputs stay alive
    }

    for (int i = 0; i < n_nodes; i++) {
        const Node& node = g.nodes[i];
        switch (node.kind) {
            case NodeKind::input:
                ex.act[i] = input;
                break;
            case NodeKind::conv: {
                const Tensor4<T>* b =
                    node.bias >= 0 ? &g.params[node.bias].value : nullptr;
                ex.act[i] =
                    conv2d_forward(ex.act[node.in[0]], node.conv, g.params[node.weight].value, b);
                break;
            }
            case NodeKind::batchnorm:
                ex.act[i] = batchnorm_forward(
                    ex.act[node.in[0]], g.params[node.gamma].value, g.params[node.beta].value,
                    g.buffers[node.running_mean].value, g.buffers[node.running_var].value, mode,
                    T(node.bn_momentum), T(node.bn_epsilon),
                    mode == BnMode::train ? &ex.bn_cache[i] : nullptr);
                break;
            case NodeKind::relu:
                ex.act[i] = relu_forward(ex.act[node.in[0]]);
                break;
            case NodeKind::maxpool: {
                auto r = maxpool2x2_forward(ex.act[node.in[0]]);
                ex.act[i] = std::move(r.output);
                ex.pool_idx[i] = std::move(r.argmax);
                break;
            }
            case NodeKind::upsample:
                ex.act[i] = upsample_nearest2x_forward(ex.act[node.in[0]]);
                break;
            case NodeKind::add:
                ex.act[i] = add_forward(ex.act[node.in[0]], ex.act[node.in[1]]);
                break;
            case NodeKind::concat: {
                std::vector<const Tensor4<T>*> parts;
                parts.reserve(node.in.size());
                for (int p : node.in) parts.push_back(&ex.act[p]);
                ex.act[i] = concat_channels_forward(parts);
                break;
            }
        }
        if (!retain) {
            for (int p : node.in) {
                if (--pending[p] == 0) ex.act[p] = Tensor4<T>();
            }
        }
    }

    std::vector<const Tensor4<T>*> outs;
    outs.reserve(g.outputs.size());
    for (int o : g.outputs) outs.push_back(&ex.act[o]);
    return outs;
}

template <typename T>
void graph_backward(const LayerGraph<T>& g, GraphExec<T>& ex,
                    const std::vector<const Tensor4<T>*>& grad_outputs) {
    if (!ex.retained) throw ConfigError("graph_backward: forward must retain activations");
    if (grad_outputs.size() != g.outputs.size())
        throw ShapeError("graph_backward: expected " + std::to_string(g.outputs.size()) +
                         " output grads, got " + std::to_string(grad_outputs.size()));
    ex.param_grads.resize(g.params.size());

    const int n_nodes = static_cast<int>(g.nodes.size());
    std::vector<Tensor4<T>> node_grad(n_nodes);
    for (size_t i = 0; i < g.outputs.size(); i++) {
        if (!grad_outputs[i]) continue;
        check_same_shape(ex.act[g.outputs[i]], *grad_outputs[i], "graph_backward output grad");
        accumulate(node_grad[g.outputs[i]], *grad_outputs[i]);
    }

    for (int i = n_nodes - 1; i >= 0; i--) {
        if (node_grad[i].empty()) continue;
        const Node& node = g.nodes[i];
        Tensor4<T>& gout = node_grad[i];
        switch (node.kind) {
            case NodeKind::input:
                accumulate_move(ex.input_grad, std::move(gout));
                break;
            case NodeKind::conv: {
                ConvGrads<T> cg = conv2d_backward(ex.act[node.in[0]], node.conv,
                                                  g.params[node.weight].value, gout);
                accumulate_move(node_grad[node.in[0]], std::move(cg.input));
                accumulate_move(ex.param_grads[node.weight], std::move(cg.weights));
                if (node.bias >= 0)
                    accumulate_move(ex.param_grads[node.bias], std::move(cg.bias));
                break;
            }
            case NodeKind::batchnorm: {
                BnGrads<T> bg =
                    ex.mode == BnMode::train
                        ? batchnorm_backward(ex.act[node.in[0]], g.params[node.gamma].value,
                                             ex.bn_cache[i], gout)
                        : batchnorm_backward_eval(ex.act[node.in[0]], g.params[node.gamma].value,
                                                  g.buffers[node.running_var].value,
                                                  T(node.bn_epsilon), gout);
                accumulate_move(node_grad[node.in[0]], std::move(bg.input));
                accumulate_move(ex.param_grads[node.gamma], std::move(bg.gamma));
                accumulate_move(ex.param_grads[node.beta], std::move(bg.beta));
                break;
            }
            case NodeKind::relu:
                accumulate_move(node_grad[node.in[0]], relu_backward(ex.act[i], gout));
                break;
            case NodeKind::maxpool:
                accumulate_move(node_grad[node.in[0]],
                                maxpool2x2_backward(ex.pool_idx[i], ex.act[node.in[0]].shape,
                                                    gout));
                break;
            case NodeKind::upsample:
                accumulate_move(node_grad[node.in[0]], upsample_nearest2x_backward(gout));
                break;
            case NodeKind::add:
                accumulate(node_grad[node.in[0]], gout);
                accumulate(node_grad[node.in[1]], gout);
                break;
            case NodeKind::concat: {
                std::vector<int64_t> pcs;
                pcs.reserve(node.in.size());
                for (int p : node.in) pcs.push_back(ex.act[p].shape.c);
                auto parts = concat_channels_backward(pcs, gout);
                for (size_t p = 0; p < node.in.size(); p++)
                    accumulate_move(node_grad[node.in[p]], std::move(parts[p]));
                break;
            }
        }
        node_grad[i] = Tensor4<T>();  // done with this node's grad
    }
}

template <typename T>
void zero_param_grads(GraphExec<T>& ex) {
    for (auto& g : ex.param_grads) g = Tensor4<T>();
    ex.input_grad = Tensor4<T>();
}

template <typename T>
std::vector<Shape4> graph_shapes(const LayerGraph<T>& g, Shape4 input_shape) {
    std::vector<Shape4> s(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); i++) {
        const Node& node = g.nodes[i];
        switch (node.kind) {
            case NodeKind::input:
                s[i] = input_shape;
                break;
            case NodeKind::conv: {
                const Shape4 in = s[node.in[0]];
                if (in.c != node.conv.in_channels)
                    throw ShapeError("graph_shapes: node '" + node.name + "' expects " +
                                     std::to_string(node.conv.in_channels) + " channels, got " +
                                     std::to_string(in.c));
                const int64_t oh = node.conv.out_dim(in.h), ow = node.conv.out_dim(in.w);
                if (oh < 1 || ow < 1)
                    throw GeometryError("graph_shapes: node '" + node.name +
                                        "' output dims < 1");
                s[i] = {in.n, node.conv.out_channels, oh, ow};
                break;
            }
            case NodeKind::batchnorm:
            case NodeKind::relu:
                s[i] = s[node.in[0]];
                break;
            case NodeKind::maxpool: {
                const Shape4 in = s[node.in[0]];
                if (in.h % 2 || in.w % 2)
                    throw GeometryError("graph_shapes: node '" + node.name +
                                        "' needs even spatial dims, got " + in.str());
                s[i] = {in.n, in.c, in.h / 2, in.w / 2};
                break;
            }
            case NodeKind::upsample: {
                const Shape4 in = s[node.in[0]];
                s[i] = {in.n, in.c, in.h * 2, in.w * 2};
                break;
            }
            case NodeKind::add:
                s[i] = s[node.in[0]];
                break;
            case NodeKind::concat: {
                Shape4 sh = s[node.in[0]];
                sh.c = 0;
                for (int p : node.in) sh.c += s[p].c;
                s[i] = sh;
                break;
            }
        }
    }
    return s;
}

template <typename T>
uint64_t graph_macs(const LayerGraph<T>& g, Shape4 input_shape) {
    input_shape.n = 1;
    const auto shapes = graph_shapes(g, input_shape);
    uint64_t total = 0;
    for (size_t i = 0; i < g.nodes.size(); i++) {
        const Node& node = g.nodes[i];
        if (node.kind != NodeKind::conv) continue;
        const Shape4 in = shapes[node.in[0]];
        total += node.conv.macs(in.h, in.w);
    }
    return total;
}

#define LSHG_INSTANTIATE(T)                                                                 \
    template class GraphBuilder<T>;                                                        \
    template std::vector<const Tensor4<T>*> graph_forward<T>(                              \
        LayerGraph<T>&, const Tensor4<T>&, BnMode, GraphExec<T>&, bool);                   \
    template void graph_backward<T>(const LayerGraph<T>&, GraphExec<T>&,                   \
                                    const std::vector<const Tensor4<T>*>&);                \
    template void zero_param_grads<T>(GraphExec<T>&);                                      \
    template std::vector<Shape4> graph_shapes<T>(const LayerGraph<T>&, Shape4);            \
    template uint64_t graph_macs<T>(const LayerGraph<T>&, Shape4);

LSHG_INSTANTIATE(float)
LSHG_INSTANTIATE(double)

#undef LSHG_INSTANTIATE

}  // namespace lshg
