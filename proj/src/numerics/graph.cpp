#include "provg/numerics/graph.hpp"

#include <algorithm>
#include <cmath>

namespace provg::nx {

template <typename T>
std::string Graph<T>::current_scope() const {
  std::string s;
  for (const auto& part : scope_) {
    if (!s.empty()) s += ".";
    s += part;
  }
  return s;
}

template <typename T>
std::string Graph<T>::label(int id) const {
  return nodes_.at(static_cast<std::size_t>(id)).label;
}

template <typename T>
void Graph<T>::check_var(Var<T> v) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw Error("variable does not belong to this graph");
}

template <typename T>
void Graph<T>::check_finite(const Node& n) const {
  for (T x : n.value.data)
    if (!std::isfinite(x)) throw NonFiniteError("non-finite value produced at node " + n.label);
}

template <typename T>
Var<T> Graph<T>::push_leaf(Node node) {
  check_finite(node);
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::input(const std::string& name, Tensor<T> value, bool requires_grad) {
  if (named_inputs_.count(name)) throw Error("duplicate graph input: " + name);
  Node n;
  n.label = (scope_.empty() ? "" : current_scope() + ".") + "input:" + name;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  n.value.requires_grad = requires_grad;
  n.input_name = name;
  auto v = push_leaf(std::move(n));
  named_inputs_[name] = v.id;
  return v;
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.label = (scope_.empty() ? "" : current_scope() + ".") + "const#" + std::to_string(nodes_.size());
  n.value = std::move(value);
  return push_leaf(std::move(n));
}

template <typename T>
Var<T> Graph<T>::param(ParamStore<T>& store, std::size_t index) {
  auto key = std::make_pair(static_cast<const void*>(&store), index);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var<T>{this, it->second};
  Node n;
  n.label = "param:" + store.spec(index).name;
  n.value = store.value(index);
  n.value.requires_grad = true;
  n.needs_grad = true;
  n.store = &store;
  n.param_index = index;
  auto v = push_leaf(std::move(n));
  param_nodes_[key] = v.id;
  return v;
}

template <typename T>
Var<T> Graph<T>::param(ParamStore<T>& store, const std::string& name) {
  return param(store, store.index(name));
}

template <typename T>
void Graph<T>::evaluate(Node& n) {
  std::vector<const Tensor<T>*> in;
  in.reserve(n.inputs.size());
  for (int i : n.inputs) in.push_back(&nodes_[static_cast<std::size_t>(i)].value);
  n.op->forward(in, n.value);
  check_finite(n);
}

template <typename T>
Var<T> Graph<T>::apply(std::unique_ptr<Op<T>> op, const std::vector<Var<T>>& inputs,
                       std::vector<std::size_t> out_shape) {
  if (stale_) throw Error("graph has stale values; call replay() before building further");
  Node n;
  n.label = (scope_.empty() ? "" : current_scope() + ".") + op->name() + "#" +
            std::to_string(nodes_.size());
  for (const auto& v : inputs) {
    check_var(v);
    n.inputs.push_back(v.id);
    n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(v.id)].needs_grad;
  }
  std::size_t count = 1;
  for (auto e : out_shape) count *= e;
  n.value.shape = std::move(out_shape);
  n.value.data.assign(count, T(0));
  n.op = std::move(op);
  evaluate(n);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
void Graph<T>::set_output(const std::string& name, Var<T> v) {
  check_var(v);
  outputs_[name] = v.id;
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var<T> v) const {
  check_var(v);
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> v) const {
  check_var(v);
  const auto& n = nodes_[static_cast<std::size_t>(v.id)];
  Tensor<T> g;
  g.shape = n.value.shape;
  if (n.grad.size() == n.value.data.size())
    g.data = n.grad;
  else
    g.data.assign(n.value.data.size(), T(0));
  return g;
}

template <typename T>
void Graph<T>::set_value(Var<T> leaf, Tensor<T> value) {
  check_var(leaf);
  auto& n = nodes_[static_cast<std::size_t>(leaf.id)];
  if (n.op) throw Error("set_value on non-leaf node " + n.label);
  if (value.shape != n.value.shape)
    throw ShapeError("set_value shape " + shape_string(value.shape) + " does not match " +
                     shape_string(n.value.shape) + " at " + n.label);
  value.requires_grad = n.needs_grad;
  n.value = std::move(value);
  check_finite(n);
  stale_ = true;
}

template <typename T>
void Graph<T>::replay() {
  for (auto& n : nodes_)
    if (n.op) evaluate(n);
  for (auto& n : nodes_) n.grad.clear();
  stale_ = false;
}

template <typename T>
std::optional<Var<T>> Graph<T>::find_input(const std::string& name) const {
  auto it = named_inputs_.find(name);
  if (it == named_inputs_.end()) return std::nullopt;
  return Var<T>{const_cast<Graph*>(this), it->second};
}

template <typename T>
std::vector<Var<T>> Graph<T>::param_leaves() const {
  std::vector<Var<T>> out;
  for (const auto& [key, id] : param_nodes_) out.push_back(Var<T>{const_cast<Graph*>(this), id});
  std::sort(out.begin(), out.end(), [](auto a, auto b) { return a.id < b.id; });
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> Graph<T>::forward(const std::map<std::string, Tensor<T>>& inputs) {
  if (inputs.size() != named_inputs_.size())
    throw ShapeError("forward expects " + std::to_string(named_inputs_.size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  for (const auto& [name, t] : inputs) {
    auto it = named_inputs_.find(name);
    if (it == named_inputs_.end()) throw ShapeError("unknown graph input: " + name);
    set_value(Var<T>{this, it->second}, t);
  }
  replay();
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, id] : outputs_) out[name] = nodes_[static_cast<std::size_t>(id)].value;
  return out;
}

template <typename T>
void Graph<T>::backward(Var<T> out, const Tensor<T>& seed) {
  check_var(out);
  if (stale_) throw Error("backward before forward: leaf values changed since the last replay");
  auto& root = nodes_[static_cast<std::size_t>(out.id)];
  if (seed.data.size() != root.value.data.size() || seed.rows() != root.value.rows())
    throw ShapeError("backward seed shape " + shape_string(seed.shape) + " does not match " +
                     shape_string(root.value.shape) + " at " + root.label);
  for (auto& n : nodes_) {
    if (n.needs_grad)
      n.grad.assign(n.value.data.size(), T(0));
    else
      n.grad.clear();
  }
  if (!root.needs_grad) return;
  root.grad = seed.data;

  std::vector<const Tensor<T>*> in;
  std::vector<std::vector<T>*> gin;
  for (int id = out.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.op || !n.needs_grad) continue;
    in.clear();
    gin.clear();
    for (int i : n.inputs) {
      auto& src = nodes_[static_cast<std::size_t>(i)];
      in.push_back(&src.value);
      gin.push_back(src.needs_grad ? &src.grad : nullptr);
    }
    n.op->backward(in, n.value, n.grad, gin);
  }
}

template <typename T>
std::map<std::string, Tensor<T>> Graph<T>::gradients() const {
  std::map<std::string, Tensor<T>> grads;
  for (const auto& n : nodes_) {
    if (n.op || !n.needs_grad) continue;
    std::string key = n.store ? n.store->spec(n.param_index).name : n.input_name;
    grads[key] = Tensor<T>(n.value.shape,
                           n.grad.empty() ? std::vector<T>(n.value.data.size(), T(0)) : n.grad);
  }
  return grads;
}

template <typename T>
void Graph<T>::backward(Var<T> out) {
  check_var(out);
  const auto& v = nodes_[static_cast<std::size_t>(out.id)].value;
  if (v.data.size() != 1) throw ShapeError("scalar backward on non-scalar node " + label(out.id));
  Tensor<T> seed(v.shape, std::vector<T>{T(1)});
  backward(out, seed);
}

template <typename T>
void Graph<T>::accumulate_param_grads() {
  for (const auto& n : nodes_) {
    if (!n.store || n.grad.empty()) continue;
    auto& g = n.store->grad(n.param_index);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace provg::nx
