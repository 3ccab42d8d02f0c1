#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lshg/ops.hpp"
#include "lshg/rng.hpp"
#include "lshg/tensor.hpp"

namespace lshg {

enum class NodeKind { input, conv, batchnorm, relu, maxpool, upsample, add, concat };

const char* node_kind_name(NodeKind k);

struct Node {
    NodeKind kind = NodeKind::input;
    std::string name;
    std::vector<int> in;

    ConvSpec conv{};
    int weight = -1, bias = -1;               // param slots (conv)
    int gamma = -1, beta = -1;                // param slots (batchnorm)
    int running_mean = -1, running_var = -1;  // buffer slots (batchnorm)
    double bn_momentum = 0.1, bn_epsilon = 1e-5;
};

template <typename T>
struct Param {
    std::string name;
    Tensor4<T> value;
};

// An ordered, named composition of layer nodes. Nodes are appended in
// topological order; parameters and batchnorm buffers live in flat registries
// addressed by slot index and unique dotted-path name.
template <typename T>
class LayerGraph {
public:
    std::vector<Node> nodes;
    std::vector<Param<T>> params;
    std::vector<Param<T>> buffers;
    int input = -1;
    std::vector<int> outputs;

    int64_t param_count() const {
        int64_t total = 0;
        for (const auto& p : params) total += p.value.numel();
        return total;
    }
    int find_param(const std::string& name) const {
        for (size_t i = 0; i < params.size(); i++)
            if (params[i].name == name) return static_cast<int>(i);
        return -1;
    }
    int find_node(const std::string& name) const {
        for (size_t i = 0; i < nodes.size(); i++)
            if (nodes[i].name == name) return static_cast<int>(i);
        return -1;
    }
};

// Appends nodes and registers their parameters. Parameter values are drawn
// from a per-name stream of the given seed, so two graphs sharing a parameter
// name and shape get bit-identical values regardless of construction order.
template <typename T>
class GraphBuilder {
public:
    GraphBuilder(LayerGraph<T>& g, uint64_t seed) : g_(g), seed_(seed) {}

    int input();
    int conv(const std::string& name, int in, const ConvSpec& spec);
    int batchnorm(const std::string& name, int in, int channels, double momentum = 0.1,
                  double epsilon = 1e-5);
    int relu(const std::string& name, int in);
    int maxpool(const std::string& name, int in);
    int upsample(const std::string& name, int in);
    int add(const std::string& name, int a, int b);
    int concat(const std::string& name, std::vector<int> ins);
    void mark_output(int node) { g_.outputs.push_back(node); }

    LayerGraph<T>& graph() { return g_; }
    uint64_t seed() const { return seed_; }

private:
    int add_node(Node n);
    int add_param(const std::string& name, Shape4 shape, double uniform_bound);
    int add_const_param(const std::string& name, Shape4 shape, T value);
    int add_buffer(const std::string& name, Shape4 shape, T value);

    LayerGraph<T>& g_;
    uint64_t seed_;
};

// Per-call execution state: activations, op caches, accumulated gradients.
// A graph may be shared by many concurrent executors in eval mode.
template <typename T>
struct GraphExec {
    std::vector<Tensor4<T>> act;
    std::vector<std::vector<int32_t>> pool_idx;
    std::vector<BnCache<T>> bn_cache;
    std::vector<Tensor4<T>> param_grads;  // lazily sized to the activation's shape
    Tensor4<T> input_grad;
    BnMode mode = BnMode::eval;
    bool retained = false;
};

// retain=true keeps every activation for a subsequent backward; retain=false
// frees intermediates as soon as their consumers have run. Train-mode
// batchnorm mutates the graph's running stats.
template <typename T>
std::vector<const Tensor4<T>*> graph_forward(LayerGraph<T>& g, const Tensor4<T>& input,
                                             BnMode mode, GraphExec<T>& ex, bool retain);

// grad_outputs[i] pairs with g.outputs[i]; a null entry contributes nothing.
// Parameter gradients accumulate into ex.param_grads across calls.
template <typename T>
void graph_backward(const LayerGraph<T>& g, GraphExec<T>& ex,
                    const std::vector<const Tensor4<T>*>& grad_outputs);

template <typename T>
void zero_param_grads(GraphExec<T>& ex);

// Static shape propagation (no allocation of activations).
template <typename T>
std::vector<Shape4> graph_shapes(const LayerGraph<T>& g, Shape4 input_shape);

// Multiply-accumulates of all conv nodes for one batch element.
template <typename T>
uint64_t graph_macs(const LayerGraph<T>& g, Shape4 input_shape);

}  // namespace lshg
