#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "rlp/numerics/tensor.hpp"

namespace rlp::num {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode tape. Every op appends one node holding its value and a closure
// that pushes the node's gradient to its inputs. backward() walks the nodes
// once, newest first. Parameter leaves accumulate straight into the parameter
// tensor's gradient buffer, so several tapes may feed the same parameters
// before one optimizer step.
//
// A tape built with record=false keeps values only; it is the inference mode.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf. The tensor must outlive the tape.
  Var parameter(Tensor& p);
  // Leaf that never receives gradient. The tensor must outlive the tape and
  // must not be a value held by this tape (node storage can move).
  Var constant_ref(const Tensor& v);
  Var constant(Tensor v);
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  // Appends an op result. `fn` runs during backward only when some input
  // requires gradient.
  Var record(Tensor value, std::span<const Var> inputs, Backward fn);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  const Tensor& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Gradient of the loss w.r.t. node `id`; empty when nothing flowed into it.
  std::span<const double> grad(std::uint32_t id) const;
  std::span<const double> grad(Var v) const { return grad(v.id()); }
  // Writable gradient buffer used by op closures (zero-allocated on demand).
  std::span<double> grad_accum(std::uint32_t id);
  std::span<double> grad_accum(Var v) { return grad_accum(v.id()); }

  // Accumulates d(seed * loss)/d(leaf) into every reachable parameter.
  // Throws std::invalid_argument if `loss` is not a scalar on this tape and
  // std::logic_error if the tape was built without recording or was already
  // replayed.
  void backward(Var loss, double seed = 1.0);

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void check_owns(Var v) const;

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;  // leaf referencing external storage
    Tensor* param = nullptr;      // trainable leaf
    AlignedVector grad;
    Backward backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_ = true;
  bool replayed_ = false;
};

}  // namespace rlp::num
