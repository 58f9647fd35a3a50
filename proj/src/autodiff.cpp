#include "segkit/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace segkit {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined()) throw std::logic_error("backward on an undefined value");
  if (loss.value().size() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                loss.shape().str());
  if (!std::isfinite(static_cast<double>(loss.value()[0])))
    throw std::domain_error("backward on a non-finite loss");
  auto root = loss.node();
  if (!root->requires_grad || root->is_leaf())
    throw std::logic_error("backward called before any recorded forward pass");

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order)
    if (!n->is_leaf()) n->grad = Tensor<T>(n->value.shape());
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
}

template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace segkit
