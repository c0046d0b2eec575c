#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rfnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& dims);
std::string shape_to_string(const Shape& dims);

/// Dense row-major tensor of doubles.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape and parameter registries refer to a parameter by value.
/// Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape dims, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& dims() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return dims().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  /// Gradient buffer; empty span when no gradient has been produced.
  std::span<const double> grad() const;
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> grad_mut() const;
  void zero_grad();

  /// Deep copy of the values; the copy does not require grad.
  Tensor clone() const;
  /// Copies `other`'s values into this tensor's storage (dims must match).
  void assign(const Tensor& other);

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape dims;
    std::vector<double> values;
    std::vector<double> gradient;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Operations are appended as they execute, so the record is topologically
/// ordered by construction. Recording only happens while a tape is active
/// (see Tape::Scope) and at least one input requires grad.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  /// Reverse sweep from a scalar loss. Every tensor with requires_grad that
  /// feeds a recorded op ends with a (possibly zero) gradient buffer.
  void backward(const Tensor& loss);

  static Tape* active();

  /// Installs a tape as the active one for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<Entry> entries_;
};

/// Backward through the currently active tape.
void backward(const Tensor& loss);

/// Runtime switch for finite-value checks on op outputs. Defaults to on in
/// builds without NDEBUG.
bool numeric_checks_enabled();
void set_numeric_checks(bool enabled);
void check_finite(const Tensor& t, const char* op);

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

/// Marks `output` as differentiable and records it when a tape is active and
/// some input requires grad. `backward` is only ever run by the tape.
void maybe_record(std::vector<Tensor> inputs, Tensor& output,
                  Tape::BackwardFn backward);

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
  return Tape::active() != nullptr && any_requires_grad(inputs);
}

}  // namespace detail

}  // namespace rfnet
