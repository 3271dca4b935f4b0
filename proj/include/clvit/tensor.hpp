#pragma once

#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "clvit/common.hpp"

// Dense f64 tensors with reverse-mode autodiff. The tape is define-by-run:
// ops always compute values; they additionally record a backward closure
// whenever a tape is active and some input can reach a requires-grad leaf.
// Tensors are immutable after creation and share storage across copies, so
// read-only sharing between threads is safe. Each training step builds a
// fresh Tape (one per thread via TapeScope).

namespace clvit {

class Tape;

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from_data(Shape shape, std::vector<double> data);

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::int64_t size(int axis) const;
    std::int64_t numel() const { return storage_ ? static_cast<std::int64_t>(storage_->size()) : 0; }
    const double* data() const { return storage_->data(); }
    std::vector<double> copy_of_data() const { return *storage_; }
    double item() const;
    double at(std::int64_t flat_index) const;

    const std::string& name() const { return name_; }
    bool requires_grad() const { return requires_grad_; }

    // Same storage, new name.
    Tensor named(std::string n) const;
    // Fresh leaf variable: named, requires_grad, detached from any tape.
    Tensor trainable(std::string n) const;
    // Constant view: requires_grad off, detached. Keeps the name.
    Tensor frozen() const;
    Tensor detached() const;

    bool same_storage(const Tensor& o) const { return storage_ == o.storage_; }
    bool bit_equal(const Tensor& o) const {
        return defined() && o.defined() && shape_ == o.shape_ &&
               std::memcmp(storage_->data(), o.storage_->data(),
                           storage_->size() * sizeof(double)) == 0;
    }

  private:
    friend class Tape;
    friend struct OpAccess;

    std::shared_ptr<std::vector<double>> storage_;
    Shape shape_;
    std::string name_;
    bool requires_grad_ = false;
    const Tape* tape_ = nullptr;
    int node_ = -1;
};

// Named gradients for the requires-grad leaves that participated in a
// forward pass. Frozen parameters never appear.
struct GradMap {
    std::map<std::string, Tensor> grads;

    bool contains(const std::string& n) const { return grads.count(n) != 0; }
    const Tensor& at(const std::string& n) const;
    std::size_t size() const { return grads.size(); }
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Reverse pass from a scalar recorded loss. Visits nodes once, in
    // reverse creation order (creation order is topological).
    GradMap backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }

  private:
    friend struct OpAccess;

    struct Node {
        Shape shape;
        std::vector<double> grad;
        bool has_grad = false;
        bool is_leaf = false;
        std::string leaf_name;
        std::function<void(Tape&, const std::vector<double>&)> backward;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> leaf_ids_;
    std::unordered_map<std::string, const void*> leaf_names_;

    int leaf(const Tensor& t);
    int record(Shape out_shape, std::function<void(Tape&, const std::vector<double>&)> fn);
    double* grad_for(int id);
};

// RAII activation of a tape on the current thread.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

Tape* active_tape();

// ------------------------------- ops --------------------------------------

// Elementwise. add() also accepts a rhs whose shape is a trailing suffix of
// lhs (bias rows, positional tables); the rhs gradient then reduces over the
// leading dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);

// Matrix product over the trailing two dims. Either b is 2-D (shared right
// operand, leading dims of a flatten away) or both operands carry identical
// leading batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// Data movement (0 FLOPs forward).
Tensor transpose(const Tensor& a);                        // swap trailing two dims
Tensor transpose(const Tensor& a, std::vector<int> perm); // general permutation
Tensor reshape(const Tensor& a, Shape shape);
Tensor select(const Tensor& a, int axis, std::int64_t index);
// [b,T,M] + token[M] -> [b,T+1,M] with the token broadcast to slot 0.
Tensor prepend_token(const Tensor& x, const Tensor& token);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
// Row-mean KL(p||q) over the trailing axis, logs clamped at kernels::kLogFloor.
Tensor kl_div(const Tensor& p, const Tensor& q);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scalar_mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scalar_mul(a, c); }

// |a-b| / max(|a|,|b|,1): relative for O(1)+ magnitudes, absolute below.
double rel_err(double a, double b);

// Central-difference check of a scalar-valued function against the tape.
// Returns the max rel_err over all coordinates of x. eps must be > 0.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace clvit
