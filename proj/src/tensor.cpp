#include "cxs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace cxs {

int shape_numel(const Shape& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

[[noreturn]] void shape_fail(const char* prim, const Shape& a) {
  throw ShapeError(std::string(prim) + ": bad shape " + shape_str(a));
}

[[noreturn]] void shape_fail2(const char* prim, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(prim) + ": shape mismatch " + shape_str(a) +
                   " vs " + shape_str(b));
}

void check_positive_dims(const Shape& shape) {
  for (int d : shape)
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  check_positive_dims(shape);
  if (shape_numel(shape) != static_cast<int>(data.size()))
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
  st_ = std::make_shared<State>();
  st_->shape = std::move(shape);
  st_->data = std::move(data);
  st_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  int n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  int n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
  return st_->data[0];
}

std::vector<double>& Tensor::grad() const {
  if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
  return st_->grad;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Tensor l = loss;
  l.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

namespace {

bool want_grad(std::initializer_list<Tensor> inputs) {
  if (!Tape::active()) return false;
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

Tensor traced(Shape shape, std::vector<double> data, bool trace) {
  Tensor y(std::move(shape), std::move(data), trace);
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail2("add", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  bool tr = want_grad({a, b});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, b, y]() mutable {
      const auto& g = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail2("subtract", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  bool tr = want_grad({a, b});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, b, y]() mutable {
      const auto& g = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail2("multiply", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  bool tr = want_grad({a, b});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, b, y]() mutable {
      const auto& g = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] * c;
  bool tr = want_grad({a});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y, c]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    shape_fail2("matmul", a.shape(), b.shape());
  int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* ad = a.data();
  const double* bd = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd + p * n;
      double* orow = out.data() + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  bool tr = want_grad({a, b});
  Tensor y = traced({m, n}, std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, b, y, m, k, n]() mutable {
      const auto& g = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += g[i * n + j] * b.data()[p * n + j];
            ga[i * k + p] += s;
          }
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += a.data()[i * k + p] * g[i * n + j];
            gb[p * n + j] += s;
          }
      }
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) shape_fail("transpose", a.shape());
  int r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  bool tr = want_grad({a});
  Tensor y = traced({c, r}, std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y, r, c]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) shape_fail2("reshape", a.shape(), shape);
  std::vector<double> out(a.vec());
  bool tr = want_grad({a});
  Tensor y = traced(std::move(shape), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size())) shape_fail("concat", s0);
  int total_axis = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != s0.size()) shape_fail2("concat", s0, p.shape());
    for (size_t i = 0; i < s0.size(); ++i)
      if (static_cast<int>(i) != axis && p.shape()[i] != s0[i])
        shape_fail2("concat", s0, p.shape());
    total_axis += p.shape()[axis];
  }
  Shape oshape = s0;
  oshape[axis] = total_axis;
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<double> out(shape_numel(oshape));
  int offset = 0;
  for (const auto& p : parts) {
    int pa = p.shape()[axis];
    for (int o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * total_axis + offset) * inner,
                  p.data() + o * pa * inner, sizeof(double) * pa * inner);
    offset += pa;
  }
  bool tr = false;
  if (Tape::active())
    for (const auto& p : parts)
      if (p.requires_grad()) tr = true;
  Tensor y = traced(std::move(oshape), std::move(out), tr);
  if (tr) {
    auto ps = parts;
    Tape::active()->record([ps, y, outer, inner, total_axis, axis]() mutable {
      const auto& g = y.grad();
      int offset = 0;
      for (auto& p : ps) {
        int pa = p.shape()[axis];
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int o = 0; o < outer; ++o)
            for (int i = 0; i < pa * inner; ++i)
              gp[o * pa * inner + i] += g[(o * total_axis + offset) * inner + i];
        }
        offset += pa;
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len <= 0 ||
      start + len > s[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") axis " + std::to_string(axis) +
                     " invalid for " + shape_str(s));
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape oshape = s;
  oshape[axis] = len;
  std::vector<double> out(static_cast<size_t>(outer) * len * inner);
  for (int o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner,
                a.data() + (o * s[axis] + start) * inner, sizeof(double) * len * inner);
  bool tr = want_grad({a});
  Tensor y = traced(std::move(oshape), std::move(out), tr);
  if (tr) {
    int sa = s[axis];
    Tape::active()->record([a, y, outer, inner, sa, start, len]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (int o = 0; o < outer; ++o)
        for (int i = 0; i < len * inner; ++i)
          ga[(o * sa + start) * inner + i] += g[o * len * inner + i];
    });
  }
  return y;
}

Tensor row_softmax(const Tensor& a) {
  if (a.shape().empty()) shape_fail("row-softmax", a.shape());
  int d = a.shape().back();
  int rows = a.size() / d;
  std::vector<double> out(a.size());
  for (int r = 0; r < rows; ++r) {
    const double* x = a.data() + r * d;
    double* o = out.data() + r * d;
    double mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) {
      o[j] = std::exp(x[j] - mx);
      sum += o[j];
    }
    for (int j = 0; j < d; ++j) o[j] /= sum;
  }
  bool tr = want_grad({a});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y, rows, d]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (int r = 0; r < rows; ++r) {
        const double* yv = y.data() + r * d;
        const double* gv = g.data() + r * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += yv[j] * gv[j];
        for (int j = 0; j < d; ++j) ga[r * d + j] += yv[j] * (gv[j] - dot);
      }
    });
  }
  return y;
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = std::tanh(a.data()[i]);
  bool tr = want_grad({a});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * (1.0 - y.data()[i] * y.data()[i]);
    });
  }
  return y;
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) {
    double x = a.data()[i];
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  bool tr = want_grad({a});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * y.data()[i] * (1.0 - y.data()[i]);
    });
  }
  return y;
}

Tensor log_sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) {
    double x = a.data()[i];
    out[i] = x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  }
  bool tr = want_grad({a});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        double x = a.data()[i];
        double sneg = x >= 0 ? std::exp(-x) / (1.0 + std::exp(-x))
                             : 1.0 / (1.0 + std::exp(x));
        ga[i] += g[i] * sneg;  // d/dx log sigma(x) = sigma(-x)
      }
    });
  }
  return y;
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = std::exp(a.data()[i]);
  bool tr = want_grad({a});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y.data()[i];
    });
  }
  return y;
}

namespace {

void axis_extents(const Shape& s, int axis, int& outer, int& n, int& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

Shape drop_axis(const Shape& s, int axis) {
  Shape o;
  for (size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != axis) o.push_back(s[i]);
  if (o.empty()) o.push_back(1);
  return o;
}

}  // namespace

Tensor mean_axis(const Tensor& a, int axis) {
  if (axis < 0 || axis >= static_cast<int>(a.shape().size()))
    shape_fail("mean-axis", a.shape());
  int outer, n, inner;
  axis_extents(a.shape(), axis, outer, n, inner);
  std::vector<double> out(static_cast<size_t>(outer) * inner, 0.0);
  for (int o = 0; o < outer; ++o)
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < inner; ++i)
        out[o * inner + i] += a.data()[(o * n + k) * inner + i];
  for (auto& v : out) v /= n;
  bool tr = want_grad({a});
  Tensor y = traced(drop_axis(a.shape(), axis), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y, outer, n, inner]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (int o = 0; o < outer; ++o)
        for (int k = 0; k < n; ++k)
          for (int i = 0; i < inner; ++i)
            ga[(o * n + k) * inner + i] += g[o * inner + i] / n;
    });
  }
  return y;
}

Tensor var_axis(const Tensor& a, int axis) {
  if (axis < 0 || axis >= static_cast<int>(a.shape().size()))
    shape_fail("var-axis", a.shape());
  int outer, n, inner;
  axis_extents(a.shape(), axis, outer, n, inner);
  std::vector<double> mean(static_cast<size_t>(outer) * inner, 0.0);
  for (int o = 0; o < outer; ++o)
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < inner; ++i)
        mean[o * inner + i] += a.data()[(o * n + k) * inner + i];
  for (auto& v : mean) v /= n;
  std::vector<double> out(mean.size(), 0.0);
  for (int o = 0; o < outer; ++o)
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < inner; ++i) {
        double d = a.data()[(o * n + k) * inner + i] - mean[o * inner + i];
        out[o * inner + i] += d * d;
      }
  for (auto& v : out) v /= n;
  bool tr = want_grad({a});
  Tensor y = traced(drop_axis(a.shape(), axis), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y, mean, outer, n, inner]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (int o = 0; o < outer; ++o)
        for (int k = 0; k < n; ++k)
          for (int i = 0; i < inner; ++i) {
            double d = a.data()[(o * n + k) * inner + i] - mean[o * inner + i];
            ga[(o * n + k) * inner + i] += g[o * inner + i] * 2.0 * d / n;
          }
    });
  }
  return y;
}

Tensor mean_all(const Tensor& a) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a.data()[i];
  s /= a.size();
  bool tr = want_grad({a});
  Tensor y = traced({1}, {s}, tr);
  if (tr) {
    Tape::active()->record([a, y]() mutable {
      double g = y.grad()[0] / a.size();
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return y;
}

Tensor l2_normalize(const Tensor& a) {
  if (a.shape().empty()) shape_fail("l2-normalize", a.shape());
  int d = a.shape().back();
  int rows = a.size() / d;
  std::vector<double> out(a.size());
  std::vector<double> norms(rows);
  for (int r = 0; r < rows; ++r) {
    const double* x = a.data() + r * d;
    double n2 = 0.0;
    for (int j = 0; j < d; ++j) n2 += x[j] * x[j];
    double nrm = std::sqrt(n2);
    norms[r] = nrm;
    for (int j = 0; j < d; ++j) out[r * d + j] = nrm >= 1e-30 ? x[j] / nrm : 0.0;
  }
  bool tr = want_grad({a});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y, norms, rows, d]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (int r = 0; r < rows; ++r) {
        if (norms[r] < 1e-30) continue;
        const double* yv = y.data() + r * d;
        const double* gv = g.data() + r * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += yv[j] * gv[j];
        for (int j = 0; j < d; ++j)
          ga[r * d + j] += (gv[j] - yv[j] * dot) / norms[r];
      }
    });
  }
  return y;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.shape().empty())
    shape_fail2("cosine-similarity", a.shape(), b.shape());
  int d = a.shape().back();
  int rows = a.size() / d;
  std::vector<double> out(rows);
  std::vector<double> na(rows), nb(rows);
  constexpr double kDegenerate = 1e-12;
  for (int r = 0; r < rows; ++r) {
    const double* av = a.data() + r * d;
    const double* bv = b.data() + r * d;
    double dot = 0.0, a2 = 0.0, b2 = 0.0;
    for (int j = 0; j < d; ++j) {
      dot += av[j] * bv[j];
      a2 += av[j] * av[j];
      b2 += bv[j] * bv[j];
    }
    na[r] = std::sqrt(a2);
    nb[r] = std::sqrt(b2);
    out[r] = (na[r] < kDegenerate || nb[r] < kDegenerate) ? 0.0 : dot / (na[r] * nb[r]);
  }
  Shape oshape(a.shape().begin(), a.shape().end() - 1);
  if (oshape.empty()) oshape.push_back(1);
  bool tr = want_grad({a, b});
  Tensor y = traced(std::move(oshape), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, b, y, na, nb, rows, d]() mutable {
      const auto& g = y.grad();
      for (int r = 0; r < rows; ++r) {
        if (na[r] < 1e-12 || nb[r] < 1e-12) continue;
        const double* av = a.data() + r * d;
        const double* bv = b.data() + r * d;
        double c = y.data()[r];
        double gr = g[r];
        if (a.requires_grad()) {
          auto& ga = a.grad();
          for (int j = 0; j < d; ++j)
            ga[r * d + j] += gr * (bv[j] / (na[r] * nb[r]) - c * av[j] / (na[r] * na[r]));
        }
        if (b.requires_grad()) {
          auto& gb = b.grad();
          for (int j = 0; j < d; ++j)
            gb[r * d + j] += gr * (av[j] / (na[r] * nb[r]) - c * bv[j] / (nb[r] * nb[r]));
        }
      }
    });
  }
  return y;
}

Tensor avg_pool_2x2(const Tensor& a) {
  if (a.shape().size() != 3) shape_fail("avg-pool-2x2", a.shape());
  int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("avg-pool-2x2: odd spatial extent in " + shape_str(a.shape()));
  int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<size_t>(oh) * ow * c);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j)
      for (int k = 0; k < c; ++k) {
        double s = a.data()[((2 * i) * w + 2 * j) * c + k] +
                   a.data()[((2 * i) * w + 2 * j + 1) * c + k] +
                   a.data()[((2 * i + 1) * w + 2 * j) * c + k] +
                   a.data()[((2 * i + 1) * w + 2 * j + 1) * c + k];
        out[(i * ow + j) * c + k] = s * 0.25;
      }
  bool tr = want_grad({a});
  Tensor y = traced({oh, ow, c}, std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y, oh, ow, w, c]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
          for (int k = 0; k < c; ++k) {
            double gv = g[(i * ow + j) * c + k] * 0.25;
            ga[((2 * i) * w + 2 * j) * c + k] += gv;
            ga[((2 * i) * w + 2 * j + 1) * c + k] += gv;
            ga[((2 * i + 1) * w + 2 * j) * c + k] += gv;
            ga[((2 * i + 1) * w + 2 * j + 1) * c + k] += gv;
          }
    });
  }
  return y;
}

Tensor nearest_upsample_2x(const Tensor& a) {
  if (a.shape().size() != 3) shape_fail("nearest-upsample-2x", a.shape());
  int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
  int oh = h * 2, ow = w * 2;
  std::vector<double> out(static_cast<size_t>(oh) * ow * c);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j)
      for (int k = 0; k < c; ++k)
        out[(i * ow + j) * c + k] = a.data()[((i / 2) * w + j / 2) * c + k];
  bool tr = want_grad({a});
  Tensor y = traced({oh, ow, c}, std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y, oh, ow, w, c]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
          for (int k = 0; k < c; ++k)
            ga[((i / 2) * w + j / 2) * c + k] += g[(i * ow + j) * c + k];
    });
  }
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.shape().size() != 3 || w.shape().size() != 4 || b.shape().size() != 1 ||
      w.shape()[1] != x.shape()[0] || b.shape()[0] != w.shape()[0])
    shape_fail2("conv2d", x.shape(), w.shape());
  int cin = x.shape()[0], h = x.shape()[1], ww = x.shape()[2];
  int cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (ww + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) shape_fail2("conv2d", x.shape(), w.shape());
  std::vector<double> out(static_cast<size_t>(cout) * oh * ow);
  auto xat = [&](int c, int i, int j) -> double {
    if (i < 0 || i >= h || j < 0 || j >= ww) return 0.0;
    return x.data()[(c * h + i) * ww + j];
  };
  for (int co = 0; co < cout; ++co)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double s = b.data()[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v)
              s += w.data()[((co * cin + ci) * kh + u) * kw + v] *
                   xat(ci, i * stride - pad + u, j * stride - pad + v);
        out[(co * oh + i) * ow + j] = s;
      }
  bool tr = want_grad({x, w, b});
  Tensor y = traced({cout, oh, ow}, std::move(out), tr);
  if (tr) {
    Tape::active()->record([x, w, b, y, cin, h, ww, cout, kh, kw, oh, ow, stride,
                            pad]() mutable {
      const auto& g = y.grad();
      for (int co = 0; co < cout; ++co)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            double gv = g[(co * oh + i) * ow + j];
            if (b.requires_grad()) b.grad()[co] += gv;
            for (int ci = 0; ci < cin; ++ci)
              for (int u = 0; u < kh; ++u)
                for (int v = 0; v < kw; ++v) {
                  int ii = i * stride - pad + u;
                  int jj = j * stride - pad + v;
                  if (ii < 0 || ii >= h || jj < 0 || jj >= ww) continue;
                  if (w.requires_grad())
                    w.grad()[((co * cin + ci) * kh + u) * kw + v] +=
                        gv * x.data()[(ci * h + ii) * ww + jj];
                  if (x.requires_grad())
                    x.grad()[(ci * h + ii) * ww + jj] +=
                        gv * w.data()[((co * cin + ci) * kh + u) * kw + v];
                }
          }
    });
  }
  return y;
}

Tensor norm_rows(const Tensor& a, double eps) {
  if (a.shape().empty()) shape_fail("norm-rows", a.shape());
  int d = a.shape().back();
  int rows = a.size() / d;
  std::vector<double> out(a.size());
  std::vector<double> inv_std(rows);
  for (int r = 0; r < rows; ++r) {
    const double* x = a.data() + r * d;
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += x[j];
    m /= d;
    double v = 0.0;
    for (int j = 0; j < d; ++j) v += (x[j] - m) * (x[j] - m);
    v /= d;
    double is = 1.0 / std::sqrt(v + eps);
    inv_std[r] = is;
    for (int j = 0; j < d; ++j) out[r * d + j] = (x[j] - m) * is;
  }
  bool tr = want_grad({a});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, y, inv_std, rows, d]() mutable {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (int r = 0; r < rows; ++r) {
        const double* yv = y.data() + r * d;
        const double* gv = g.data() + r * d;
        double gm = 0.0, gym = 0.0;
        for (int j = 0; j < d; ++j) {
          gm += gv[j];
          gym += gv[j] * yv[j];
        }
        gm /= d;
        gym /= d;
        for (int j = 0; j < d; ++j)
          ga[r * d + j] += inv_std[r] * (gv[j] - gm - yv[j] * gym);
      }
    });
  }
  return y;
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  if (a.shape().empty() || v.shape().size() != 1 || a.shape().back() != v.shape()[0])
    shape_fail2("mul-rowvec", a.shape(), v.shape());
  int d = v.shape()[0];
  int rows = a.size() / d;
  std::vector<double> out(a.size());
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j) out[r * d + j] = a.data()[r * d + j] * v.data()[j];
  bool tr = want_grad({a, v});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, v, y, rows, d]() mutable {
      const auto& g = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) ga[r * d + j] += g[r * d + j] * v.data()[j];
      }
      if (v.requires_grad()) {
        auto& gv = v.grad();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) gv[j] += g[r * d + j] * a.data()[r * d + j];
      }
    });
  }
  return y;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (a.shape().empty() || v.shape().size() != 1 || a.shape().back() != v.shape()[0])
    shape_fail2("add-rowvec", a.shape(), v.shape());
  int d = v.shape()[0];
  int rows = a.size() / d;
  std::vector<double> out(a.size());
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j) out[r * d + j] = a.data()[r * d + j] + v.data()[j];
  bool tr = want_grad({a, v});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, v, y, rows, d]() mutable {
      const auto& g = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (v.requires_grad()) {
        auto& gv = v.grad();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) gv[j] += g[r * d + j];
      }
    });
  }
  return y;
}

Tensor scalar_mul(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) shape_fail2("scalar-mul", a.shape(), s.shape());
  double sv = s.data()[0];
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] * sv;
  bool tr = want_grad({a, s});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, s, y, sv]() mutable {
      const auto& g = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
      }
      if (s.requires_grad()) {
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += g[i] * a.data()[i];
        s.grad()[0] += acc;
      }
    });
  }
  return y;
}

Tensor scalar_add(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) shape_fail2("scalar-add", a.shape(), s.shape());
  double sv = s.data()[0];
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] + sv;
  bool tr = want_grad({a, s});
  Tensor y = traced(a.shape(), std::move(out), tr);
  if (tr) {
    Tape::active()->record([a, s, y]() mutable {
      const auto& g = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (s.requires_grad()) {
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += g[i];
        s.grad()[0] += acc;
      }
    });
  }
  return y;
}

const std::vector<std::string>& primitive_catalog() {
  static const std::vector<std::string> names = {
      "add",        "subtract",     "multiply",          "scale",
      "matmul",     "transpose",    "reshape",           "concat",
      "slice",      "row-softmax",  "tanh",              "sigmoid",
      "log-sigmoid", "exp",         "mean-axis",         "var-axis",
      "mean-all",   "l2-normalize", "cosine-similarity", "avg-pool-2x2",
      "nearest-upsample-2x", "conv2d", "norm-rows",      "mul-rowvec",
      "add-rowvec", "scalar-mul",   "scalar-add"};
  return names;
}

Tensor apply_primitive(const std::string& op, std::span<const Tensor> in,
                       const PrimitiveAttrs& attrs) {
  auto need = [&](size_t n) {
    if (in.size() != n)
      throw std::invalid_argument("apply_primitive: " + op + " expects " +
                                  std::to_string(n) + " inputs");
  };
  if (op == "add") { need(2); return add(in[0], in[1]); }
  if (op == "subtract") { need(2); return subtract(in[0], in[1]); }
  if (op == "multiply") { need(2); return multiply(in[0], in[1]); }
  if (op == "scale") { need(1); return scale(in[0], attrs.value); }
  if (op == "matmul") { need(2); return matmul(in[0], in[1]); }
  if (op == "transpose") { need(1); return transpose(in[0]); }
  if (op == "reshape") { need(1); return reshape(in[0], attrs.shape); }
  if (op == "concat") return concat(std::vector<Tensor>(in.begin(), in.end()), attrs.axis);
  if (op == "slice") { need(1); return slice(in[0], attrs.axis, attrs.start, attrs.len); }
  if (op == "row-softmax") { need(1); return row_softmax(in[0]); }
  if (op == "tanh") { need(1); return tanh(in[0]); }
  if (op == "sigmoid") { need(1); return sigmoid(in[0]); }
  if (op == "log-sigmoid") { need(1); return log_sigmoid(in[0]); }
  if (op == "exp") { need(1); return exp(in[0]); }
  if (op == "mean-axis") { need(1); return mean_axis(in[0], attrs.axis); }
  if (op == "var-axis") { need(1); return var_axis(in[0], attrs.axis); }
  if (op == "mean-all") { need(1); return mean_all(in[0]); }
  if (op == "l2-normalize") { need(1); return l2_normalize(in[0]); }
  if (op == "cosine-similarity") { need(2); return cosine_similarity(in[0], in[1]); }
  if (op == "avg-pool-2x2") { need(1); return avg_pool_2x2(in[0]); }
  if (op == "nearest-upsample-2x") { need(1); return nearest_upsample_2x(in[0]); }
  if (op == "conv2d") { need(3); return conv2d(in[0], in[1], in[2], attrs.stride, attrs.pad); }
  if (op == "norm-rows") { need(1); return norm_rows(in[0], attrs.eps); }
  if (op == "mul-rowvec") { need(2); return mul_rowvec(in[0], in[1]); }
  if (op == "add-rowvec") { need(2); return add_rowvec(in[0], in[1]); }
  if (op == "scalar-mul") { need(2); return scalar_mul(in[0], in[1]); }
  if (op == "scalar-add") { need(2); return scalar_add(in[0], in[1]); }
  throw std::invalid_argument("apply_primitive: unknown primitive '" + op + "'");
}

}  // namespace cxs
