#include "rlp/numerics/tape.hpp"

#include <stdexcept>

namespace rlp::num {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::parameter(Tensor& p) {
  Node n;
  n.ref = &p;
  n.param = record_ ? &p : nullptr;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant_ref(const Tensor& v) {
  Node n;
  n.ref = &v;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor v) {
  Node n;
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      check_owns(in);
      if (nodes_[in.id()].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.value;
}

std::span<const double> Tape::grad(std::uint32_t id) const {
  const Node& n = nodes_[id];
  if (n.param) return n.param->grad();
  return n.grad;
}

std::span<double> Tape::grad_accum(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad();
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Tape::check_owns(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size())
    throw std::invalid_argument("tape: variable does not belong to this tape");
}

void Tape::backward(Var loss, double seed) {
  check_owns(loss);
  if (!record_) throw std::logic_error("tape: backward on a non-recording tape");
  if (replayed_) throw std::logic_error("tape: backward already ran on this tape");
  if (value(loss.id()).size() != 1)
    throw std::invalid_argument("tape: loss must be scalar, got shape " +
                                value(loss.id()).shape_string());
  replayed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_accum(loss.id())[0] += seed;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
}

}  // namespace rlp::num
