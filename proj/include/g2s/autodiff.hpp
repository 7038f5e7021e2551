#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "g2s/errors.hpp"
#include "g2s/tensor.hpp"

namespace g2s {

template <typename T>
class Tape;

template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  Tape<T>* tape = nullptr;  // tape that recorded the producing op
  int64_t entry = -1;       // index of that op on the tape; -1 for leaves

  bool grad_connected() const { return requires_grad || entry >= 0; }

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    T* pg = grad.data();
    const T* ps = g.data();
    for (int64_t i = 0, n = grad.numel(); i < n; ++i) pg[i] += ps[i];
  }
};

// Handle to a node in the computation graph. Copies share state.
template <typename T>
class Variable {
 public:
  Variable() = default;
  explicit Variable(std::shared_ptr<VarNode<T>> n) : n_(std::move(n)) {}

  static Variable leaf(Tensor<T> v, bool requires_grad = false) {
    auto n = std::make_shared<VarNode<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Variable(std::move(n));
  }

  static Variable constant(Tensor<T> v) { return leaf(std::move(v), false); }

  bool defined() const { return n_ != nullptr; }
  const Tensor<T>& value() const { return n_->value; }
  Tensor<T>& value() { return n_->value; }
  const Tensor<T>& grad() const { return n_->grad; }
  Tensor<T>& grad() { return n_->grad; }
  bool has_grad() const { return n_ && !n_->grad.empty(); }
  bool requires_grad() const { return n_->requires_grad; }
  void zero_grad() {
    if (n_ && !n_->grad.empty()) n_->grad.fill(T(0));
  }
  const Shape& shape() const { return n_->value.shape(); }
  int64_t numel() const { return n_->value.numel(); }

  const std::shared_ptr<VarNode<T>>& node() const { return n_; }

 private:
  std::shared_ptr<VarNode<T>> n_;
};

// Ordered record of primitive applications. Ops append entries while a
// TapeScope is active; backward() replays them in exact reverse order.
template <typename T>
class Tape {
 public:
  struct Entry {
    std::function<void()> backward;
    std::shared_ptr<VarNode<T>> out;
    const char* op;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& current() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

  int64_t record(std::function<void()> bwd, const std::shared_ptr<VarNode<T>>& out,
                 const char* op) {
    entries_.push_back({std::move(bwd), out, op});
    return int64_t(entries_.size()) - 1;
  }

  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Populates d(loss)/d(leaf) for every grad-connected leaf. Repeated calls
  // accumulate on leaves; intermediate grads are reset on every call.
  void backward(const Variable<T>& loss) {
    const auto& n = loss.node();
    if (!n || n->tape != this || n->entry < 0)
      throw NumericError("backward: value is detached from this tape");
    if (n->value.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(n->value.shape()));
    int64_t top = n->entry;
    for (int64_t i = 0; i <= top; ++i) {
      auto& out = entries_[size_t(i)].out;
      if (out->grad.empty())
        out->grad = Tensor<T>(out->value.shape());
      else
        out->grad.fill(T(0));
    }
    n->grad[0] = T(1);
    for (int64_t i = top; i >= 0; --i) entries_[size_t(i)].backward();
  }

 private:
  std::vector<Entry> entries_;
};

template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& t) : prev_(Tape<T>::current()) { Tape<T>::current() = &t; }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

namespace detail {

template <typename T>
bool any_connected(std::initializer_list<const Variable<T>*> ins) {
  for (auto* v : ins)
    if (v->defined() && v->node()->grad_connected()) return true;
  return false;
}

// Wrap a freshly computed value. `make_bwd(out_node)` builds the backward
// closure; it is only invoked when a tape is active and some input is
// grad-connected, so pure evaluation never pays for it.
template <typename T, typename BwdFactory>
Variable<T> make_result(Tensor<T> value, std::initializer_list<const Variable<T>*> ins,
                        const char* op, BwdFactory&& make_bwd) {
  auto out = Variable<T>::leaf(std::move(value), false);
  Tape<T>* tape = Tape<T>::current();
  if (tape && any_connected<T>(ins)) {
    const auto& node = out.node();
    node->tape = tape;
    node->entry = tape->record(make_bwd(node), node, op);
  }
  return out;
}

template <typename T>
void accum_if_needed(const Variable<T>& v, const Tensor<T>& g) {
  if (v.node()->grad_connected()) v.node()->accumulate(g);
}

}  // namespace detail

}  // namespace g2s
