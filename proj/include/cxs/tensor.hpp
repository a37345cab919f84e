#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cxs {

using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Float64 tensor with shared state. Copies are handles to the same storage,
/// so a tensor captured by a tape closure sees gradients accumulated later.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  int size() const { return static_cast<int>(st_->data.size()); }
  double* data() { return st_->data.data(); }
  const double* data() const { return st_->data.data(); }
  std::vector<double>& vec() { return st_->data; }
  const std::vector<double>& vec() const { return st_->data; }
  double item() const;

  bool requires_grad() const { return st_->requires_grad; }
  void set_requires_grad(bool v) { st_->requires_grad = v; }

  /// Gradient buffer, zero-initialized on first access. Const because it
  /// mutates shared state, not the handle; backward closures hold const
  /// copies of their inputs.
  std::vector<double>& grad() const;
  bool grad_allocated() const { return !st_->grad.empty(); }
  void zero_grad() { st_->grad.clear(); }

  /// Stable identity of the underlying storage.
  const void* id() const { return st_.get(); }

 private:
  struct State {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;
  };
  std::shared_ptr<State> st_;
};

/// Reverse-mode tape. Constructing a Tape makes it the active tape for the
/// current thread; destruction restores the previous one. Ops record a
/// backward closure when any input requires grad. backward() replays the
/// closures in reverse recording order (reverse topological order by
/// construction), accumulating gradients additively across fan-out.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn);
  void backward(const Tensor& loss);
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  static Tape* active();

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
};

// ---- primitive catalog ----
// Each primitive validates shapes (throwing ShapeError naming the primitive
// and offending shapes), computes the forward value, and records its backward
// rule on the active tape when needed.

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D only
Tensor transpose(const Tensor& a);                // 2-D only
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor row_softmax(const Tensor& a);  // softmax over last axis, max-subtracted
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);  // sign-branched, stable
Tensor exp(const Tensor& a);
Tensor mean_axis(const Tensor& a, int axis);
Tensor var_axis(const Tensor& a, int axis);  // population variance
Tensor mean_all(const Tensor& a);            // scalar
Tensor l2_normalize(const Tensor& a);        // over last axis; zero rows stay zero
Tensor cosine_similarity(const Tensor& a, const Tensor& b);  // over last axis
Tensor avg_pool_2x2(const Tensor& a);        // [H,W,C], even H and W
Tensor nearest_upsample_2x(const Tensor& a); // [H,W,C]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);  // x [Cin,H,W], w [Cout,Cin,kh,kw], b [Cout]
Tensor norm_rows(const Tensor& a, double eps = 1e-5);  // (x-mean)/sqrt(var+eps) per row
Tensor mul_rowvec(const Tensor& a, const Tensor& v);   // [T,d] * [d] broadcast
Tensor add_rowvec(const Tensor& a, const Tensor& v);   // [T,d] + [d] broadcast
Tensor scalar_mul(const Tensor& a, const Tensor& s);   // multiply by scalar tensor
Tensor scalar_add(const Tensor& a, const Tensor& s);   // add scalar tensor

struct PrimitiveAttrs {
  int axis = 0;
  int start = 0;
  int len = 0;
  double value = 0.0;
  int stride = 1;
  int pad = 0;
  double eps = 1e-5;
  Shape shape;
};

/// Dispatch by primitive id; used by the gradient-check suite to walk the
/// whole catalog. Throws std::invalid_argument on unknown ids.
Tensor apply_primitive(const std::string& op, std::span<const Tensor> inputs,
                       const PrimitiveAttrs& attrs = {});

/// Names of every differentiable primitive in the catalog.
const std::vector<std::string>& primitive_catalog();

}  // namespace cxs
