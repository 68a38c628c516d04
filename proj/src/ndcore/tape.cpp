#include "demure/ndcore/tape.hpp"

#include "demure/errors.hpp"

namespace demure::nd {

const Array& Var::value() const {
  if (tape == nullptr) throw LookupError("Var: not attached to a tape");
  return tape->value(*this);
}

bool Var::requires_grad() const {
  tape->check(*this);
  return tape->nodes_[id].requires_grad;
}

const Array& BackwardContext::value(std::uint32_t id) const { return tape_.nodes_[id].value; }

bool BackwardContext::needs(std::uint32_t id) const { return tape_.nodes_[id].requires_grad; }

Array& BackwardContext::grad(std::uint32_t id) {
  Array& g = adjoints_[id];
  if (g.empty()) g = Array(tape_.nodes_[id].value.shape(),
                           std::vector<double>(tape_.nodes_[id].value.size(), 0.0));
  return g;
}

Var Tape::constant(Array value, std::string name) {
  Var v = record(std::move(value), "constant", false, nullptr);
  nodes_[v.id].name = std::move(name);
  return v;
}

Var Tape::leaf(Array value, std::string name) {
  Var v = record(std::move(value), "leaf", true, nullptr);
  nodes_[v.id].name = std::move(name);
  return v;
}

Var Tape::record(Array value, std::string_view op, bool requires_grad, BackwardRule rule) {
  if (value.empty()) throw ContractError(std::string("tape: op '") + std::string(op) +
                                         "' produced an empty array");
  if (const auto bad = value.first_non_finite(); bad != value.size()) {
    throw NumericError("tape: non-finite value at entry " + std::to_string(bad) + " of node #" +
                       std::to_string(nodes_.size()) + " (" + std::string(op) + ")");
  }
  Node node;
  node.value = std::move(value);
  node.op = op;
  node.requires_grad = requires_grad;
  if (requires_grad) node.rule = std::move(rule);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1), generation_};
}

void Tape::check(Var v) const {
  if (v.tape != this || v.generation != generation_ || v.id >= nodes_.size()) {
    throw LookupError("tape: node #" + std::to_string(v.id) + " is not on this tape");
  }
}

const Array& Tape::value(Var node) const {
  check(node);
  return nodes_[node.id].value;
}

void Tape::backward(Var loss) {
  check(loss);
  const Node& root = nodes_[loss.id];
  if (root.value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + root.value.shape_string());
  }
  if (!root.requires_grad) return;

  std::vector<Array> adjoints(loss.id + 1);
  adjoints[loss.id] = Array(root.value.shape(), {1.0});
  BackwardContext ctx(*this, adjoints);

  for (std::int64_t i = loss.id; i >= 0; --i) {
    const auto id = static_cast<std::uint32_t>(i);
    Array& adj = adjoints[id];
    if (adj.empty()) continue;
    if (const auto bad = adj.first_non_finite(); bad != adj.size()) {
      throw NumericError("backward: non-finite gradient at " + describe(id));
    }
    if (nodes_[id].rule) {
      ctx.out_grad_ = &adj;
      nodes_[id].rule(ctx);
    }
  }

  for (std::uint32_t id = 0; id <= loss.id; ++id) {
    if (adjoints[id].empty()) continue;
    Node& n = nodes_[id];
    if (n.grad.empty()) {
      n.grad = std::move(adjoints[id]);
    } else {
      n.grad += adjoints[id];
    }
  }
}

const Array& Tape::gradient_of(Var node) const {
  check(node);
  const Node& n = nodes_[node.id];
  if (n.grad.empty()) n.grad = Array(n.value.shape(), std::vector<double>(n.value.size(), 0.0));
  return n.grad;
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad = Array();
}

void Tape::reset() {
  nodes_.clear();
  ++generation_;
}

void Tape::set_name(Var node, std::string name) {
  check(node);
  nodes_[node.id].name = std::move(name);
}

std::string Tape::describe(std::uint32_t id) const {
  const Node& n = nodes_[id];
  std::string s = "node #" + std::to_string(id) + " (" + std::string(n.op);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ", shape " + n.value.shape_string() + ")";
}

}  // namespace demure::nd
