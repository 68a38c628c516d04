#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "demure/ndcore/array.hpp"

namespace demure::nd {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid for the
/// tape session (generation) it was created in.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;
  std::uint32_t generation = 0;

  const Array& value() const;
  bool requires_grad() const;
};

/// Access handed to a node's backward rule during the reverse sweep.
class BackwardContext {
 public:
  const Array& out_grad() const { return *out_grad_; }
  const Array& value(std::uint32_t id) const;
  bool needs(std::uint32_t id) const;
  // Adjoint buffer of node `id`, zero-allocated on first use.
  Array& grad(std::uint32_t id);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::vector<Array>& adjoints)
      : tape_(tape), adjoints_(adjoints) {}
  Tape& tape_;
  std::vector<Array>& adjoints_;
  const Array* out_grad_ = nullptr;
};

using BackwardRule = std::function<void(BackwardContext&)>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so the graph is
/// acyclic by construction and the reverse sweep is a single backward scan.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value, std::string name = {});
  Var leaf(Array value, std::string name = {});

  // Appends an op node; used by the kernel functions in ops.hpp.
  Var record(Array value, std::string_view op, bool requires_grad, BackwardRule rule);

  /// Reverse sweep from a scalar loss. Gradients accumulate (+=) into every
  /// gradient-tracked node until zero_grad() or reset() is called.
  void backward(Var loss);

  /// Stored gradient of any node on this tape, intermediates included.
  /// Nodes the loss does not depend on report zeros.
  const Array& gradient_of(Var node) const;
  const Array& value(Var node) const;

  void zero_grad();
  // Drops all nodes and invalidates existing Vars.
  void reset();

  std::size_t size() const noexcept { return nodes_.size(); }
  void set_name(Var node, std::string name);
  std::string describe(std::uint32_t id) const;
  void check(Var v) const;

 private:
  friend class BackwardContext;
  friend struct Var;

  struct Node {
    Array value;
    mutable Array grad;
    BackwardRule rule;
    std::string_view op;
    std::string name;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::uint32_t generation_ = 1;
};

}  // namespace demure::nd
