#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "provg/numerics/params.hpp"
#include "provg/numerics/tensor.hpp"

namespace provg::nx {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// A primitive with a forward rule and its adjoint. Ops are stateless apart
/// from construction-time attributes, which is what makes replay possible.
template <typename T>
class Op {
 public:
  using Inputs = std::span<const Tensor<T>* const>;
  using Grads = std::span<std::vector<T>* const>;

  virtual ~Op() = default;
  virtual const char* name() const = 0;
  virtual void forward(Inputs in, Tensor<T>& out) const = 0;
  // gin[i] is null when input i does not need a gradient; otherwise accumulate into it.
  virtual void backward(Inputs in, const Tensor<T>& out, const std::vector<T>& gout,
                        Grads gin) const = 0;
};

/// Define-by-run tape. Building a node evaluates it immediately; the record
/// can be replayed after leaf values change, and differentiated in reverse.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> input(const std::string& name, Tensor<T> value, bool requires_grad = false);
  Var<T> constant(Tensor<T> value);
  /// Leaf bound to a stored parameter. Repeated calls return the same node.
  Var<T> param(ParamStore<T>& store, std::size_t index);
  Var<T> param(ParamStore<T>& store, const std::string& name);

  Var<T> apply(std::unique_ptr<Op<T>> op, const std::vector<Var<T>>& inputs,
               std::vector<std::size_t> out_shape);

  void set_output(const std::string& name, Var<T> v);

  /// Rebinds named inputs and replays the record; returns named outputs.
  std::map<std::string, Tensor<T>> forward(const std::map<std::string, Tensor<T>>& inputs);
  /// Reverse pass seeded with d(out).
  void backward(Var<T> out, const Tensor<T>& seed);
  /// Scalar convenience: seed 1.
  void backward(Var<T> out);

  /// Gradients from the last backward for named inputs flagged
  /// requires_grad and for every parameter leaf, keyed by name.
  std::map<std::string, Tensor<T>> gradients() const;

  /// Adds parameter-leaf gradients into their owning stores.
  void accumulate_param_grads();

  const Tensor<T>& value(Var<T> v) const;
  Tensor<T> grad(Var<T> v) const;
  void set_value(Var<T> leaf, Tensor<T> value);
  void replay();

  std::size_t size() const { return nodes_.size(); }
  std::string label(int id) const;
  std::optional<Var<T>> find_input(const std::string& name) const;
  std::vector<Var<T>> param_leaves() const;

  class Scope {
   public:
    Scope(Graph& g, std::string name) : g_(&g) { g_->scope_.push_back(std::move(name)); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope() { g_->scope_.pop_back(); }

   private:
    Graph* g_;
  };
  /// Names nodes built while the returned guard lives, for error messages.
  [[nodiscard]] Scope scope(std::string name) { return Scope(*this, std::move(name)); }
  std::string current_scope() const;

 private:
  struct Node {
    std::string label;
    Tensor<T> value;
    std::vector<T> grad;
    std::unique_ptr<Op<T>> op;
    std::vector<int> inputs;
    bool needs_grad = false;
    ParamStore<T>* store = nullptr;
    std::size_t param_index = 0;
    std::string input_name;
  };

  Var<T> push_leaf(Node node);
  void check_finite(const Node& n) const;
  void check_var(Var<T> v) const;
  void evaluate(Node& n);

  std::vector<Node> nodes_;
  std::vector<std::string> scope_;
  std::map<std::pair<const void*, std::size_t>, int> param_nodes_;
  std::map<std::string, int> named_inputs_;
  std::map<std::string, int> outputs_;
  bool stale_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(*this);
}

}  // namespace provg::nx
