#include "rfnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rfnet/error.hpp"

namespace rfnet {

std::size_t shape_numel(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string shape_to_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape dims, double fill, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  for (auto d : dims) {
    if (d == 0) throw ShapeError("tensor dims must be positive: " + shape_to_string(dims));
  }
  impl_->values.assign(shape_numel(dims), fill);
  impl_->dims = std::move(dims);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape dims, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  for (auto d : dims) {
    if (d == 0) throw ShapeError("tensor dims must be positive: " + shape_to_string(dims));
  }
  if (shape_numel(dims) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match dims " + shape_to_string(dims));
  }
  impl_->dims = std::move(dims);
  impl_->values = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, value, requires_grad);
}

const Shape& Tensor::dims() const {
  static const Shape kEmpty;
  return impl_ ? impl_->dims : kEmpty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(dims()));
  }
  return impl_->dims[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->values.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) return {};
  return impl_->values;
}

std::span<double> Tensor::data() {
  if (!impl_) return {};
  return impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of dims " + shape_to_string(dims()));
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ContractError("set_requires_grad on undefined tensor");
  impl_->requires_grad = on;
}

bool Tensor::has_grad() const { return impl_ && !impl_->gradient.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) return {};
  return impl_->gradient;
}

std::span<double> Tensor::grad_mut() const {
  if (!impl_) throw ContractError("grad_mut on undefined tensor");
  if (impl_->gradient.empty()) impl_->gradient.assign(impl_->values.size(), 0.0);
  return impl_->gradient;
}

void Tensor::zero_grad() {
  if (impl_) impl_->gradient.clear();
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->dims, impl_->values, false);
}

void Tensor::assign(const Tensor& other) {
  if (dims() != other.dims()) {
    throw ShapeError("assign: dims " + shape_to_string(other.dims()) + " vs " +
                     shape_to_string(dims()));
  }
  std::copy(other.data().begin(), other.data().end(), impl_->values.begin());
}

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;

#ifdef NDEBUG
bool g_numeric_checks = false;
#else
bool g_numeric_checks = true;
#endif
}  // namespace

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

Tape::Scope::~Scope() { g_active_tape = previous_; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got dims " +
                        shape_to_string(loss.dims()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to any tensor requiring grad");
  }
  Tensor seed = loss;
  seed.grad_mut()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    for (auto& in : it->inputs) {
      if (in.requires_grad()) in.grad_mut();
    }
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw ContractError("backward called with no active tape");
  tape->backward(loss);
}

bool numeric_checks_enabled() { return g_numeric_checks; }
void set_numeric_checks(bool enabled) { g_numeric_checks = enabled; }

void check_finite(const Tensor& t, const char* op) {
  if (!g_numeric_checks) return;
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + op);
  }
}

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

void maybe_record(std::vector<Tensor> inputs, Tensor& output, Tape::BackwardFn backward) {
  Tape* tape = Tape::active();
  if (!tape) return;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return;
  output.set_requires_grad(true);
  tape->record(std::move(inputs), output, std::move(backward));
}

}  // namespace detail

}  // namespace rfnet
