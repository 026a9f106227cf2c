#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cml/errors.hpp"
#include "cml/tensor.hpp"

namespace cml {

/// Training/inference switch. Dropout and batch normalization branch on this
/// flag and on nothing else.
enum class Mode { training, inference };

/// Vertex of a reverse-mode computation DAG. Values are computed eagerly at
/// construction; gradients flow on demand via backward(). A node's
/// backward_rule reads its own grad and accumulates into its parents' grads.
class GraphNode {
public:
    Tensor value;
    Tensor grad; // same shape as value, zero until backward touches it
    bool requires_grad = false;
    std::vector<std::shared_ptr<GraphNode>> parents;
    std::function<void(GraphNode&)> backward_rule;
};

using NodePtr = std::shared_ptr<GraphNode>;

inline NodePtr make_leaf(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<GraphNode>();
    n->grad = Tensor(value.shape());
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

inline NodePtr make_op_node(Tensor value, std::vector<NodePtr> parents,
                            std::function<void(GraphNode&)> rule) {
    auto n = std::make_shared<GraphNode>();
    n->grad = Tensor(value.shape());
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_rule = std::move(rule);
    return n;
}

inline void zero_grad(const NodePtr& n) {
    std::fill(n->grad.values().begin(), n->grad.values().end(), 0.0);
}

/// Reverse-mode sweep from a scalar loss. Visits each reachable node exactly
/// once, in reverse topological order; gradients accumulate additively across
/// fan-out. Interior node grads start at zero (they are freshly built per
/// forward pass); leaf grads accumulate until zero_grad().
inline void backward(const NodePtr& loss) {
    if (loss->value.numel() != 1)
        throw Error("backward: loss must be scalar, got shape " + shape_str(loss->value.shape()));

    // Iterative post-order DFS; graphs can be deep.
    std::vector<GraphNode*> order;
    std::unordered_set<GraphNode*> visited;
    std::vector<std::pair<GraphNode*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            GraphNode* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        GraphNode* n = *it;
        if (n->requires_grad && n->backward_rule) n->backward_rule(*n);
    }
}

} // namespace cml
