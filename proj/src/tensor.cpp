#include "udarc/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "udarc/errors.hpp"

namespace udarc {

namespace {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

thread_local Tape* g_current_tape = nullptr;

bool tracking(const Tensor& a) {
  return g_current_tape != nullptr && a.requires_grad();
}
bool tracking(const Tensor& a, const Tensor& b) {
  return g_current_tape != nullptr && (a.requires_grad() || b.requires_grad());
}

void require_2d(const Tensor& x, const char* op) {
  if (x.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(x.shape()));
  }
}

void require_finite(const Tensor& x, const char* op) {
  for (double v : x.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite input value");
    }
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  const std::size_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(n, 0.0);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(n, 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = value;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (values.size() != n) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(n, 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on && impl_->grad.size() != impl_->data.size()) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  }
  if (!on) impl_->grad.clear();
}

double* Tensor::grad() {
  return impl_->grad.empty() ? nullptr : impl_->grad.data();
}

const double* Tensor::grad() const {
  return impl_->grad.empty() ? nullptr : impl_->grad.data();
}

void Tensor::zero_grad() {
  for (double& g : impl_->grad) g = 0.0;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
  }
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = impl_->shape;
  if (idx.size() != s.size()) throw IndexError("at(): rank mismatch");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (int v : idx) {
    if (v < 0 || v >= s[i]) throw IndexError("at(): index out of range");
    flat = flat * static_cast<std::size_t>(s[i]) + static_cast<std::size_t>(v);
    ++i;
  }
  return impl_->data[flat];
}

Tensor Tensor::copy() const {
  return Tensor::from(impl_->shape, impl_->data, impl_->requires_grad);
}

// --- Tape --------------------------------------------------------------------

Tape::Tape() : prev_(g_current_tape) {
  g_current_tape = this;
}

Tape::~Tape() {
  g_current_tape = prev_;
}

Tape* Tape::current() {
  return g_current_tape;
}

void Tape::record(const char* op, std::function<void()> backward) {
  nodes_.push_back({op, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not track gradients on this tape");
  }
  loss.impl()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->back();
  }
}

// --- ops ---------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const bool rec = tracking(a, b);
  Tensor out = Tensor::zeros(a.shape(), rec);
  const std::size_t n = a.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (rec) {
    g_current_tape->record("add", [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
      const double* g = oi->grad.data();
      if (ai->requires_grad)
        for (std::size_t i = 0; i < n; ++i) ai->grad[i] += g[i];
      if (bi->requires_grad)
        for (std::size_t i = 0; i < n; ++i) bi->grad[i] += g[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const bool rec = tracking(a, b);
  Tensor out = Tensor::zeros(a.shape(), rec);
  const std::size_t n = a.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (rec) {
    g_current_tape->record("mul", [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
      const double* g = oi->grad.data();
      if (ai->requires_grad)
        for (std::size_t i = 0; i < n; ++i) ai->grad[i] += g[i] * bi->data[i];
      if (bi->requires_grad)
        for (std::size_t i = 0; i < n; ++i) bi->grad[i] += g[i] * ai->data[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  const bool rec = tracking(x);
  Tensor out = Tensor::zeros(x.shape(), rec);
  const std::size_t n = x.numel();
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * c;
  if (rec) {
    g_current_tape->record("scale", [xi = x.impl(), oi = out.impl(), c, n] {
      const double* g = oi->grad.data();
      for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g[i] * c;
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool rec = tracking(a, b);
  Tensor out = Tensor::zeros({m, n}, rec);
  {
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
      const double* arow = pa + static_cast<std::size_t>(i) * k;
      double* orow = po + static_cast<std::size_t>(i) * n;
      for (int l = 0; l < k; ++l) {
        const double av = arow[l];
        if (av == 0.0) continue;
        const double* brow = pb + static_cast<std::size_t>(l) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  if (rec) {
    g_current_tape->record("matmul", [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
      const double* g = oi->grad.data();
      if (ai->requires_grad) {
        // dA += g . B^T
        for (int i = 0; i < m; ++i) {
          const double* grow = g + static_cast<std::size_t>(i) * n;
          double* darow = ai->grad.data() + static_cast<std::size_t>(i) * k;
          for (int l = 0; l < k; ++l) {
            const double* brow = bi->data.data() + static_cast<std::size_t>(l) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            darow[l] += acc;
          }
        }
      }
      if (bi->requires_grad) {
        // dB += A^T . g
        for (int i = 0; i < m; ++i) {
          const double* arow = ai->data.data() + static_cast<std::size_t>(i) * k;
          const double* grow = g + static_cast<std::size_t>(i) * n;
          for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            double* dbrow = bi->grad.data() + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()) + " transposed");
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  const bool rec = tracking(a, b);
  Tensor out = Tensor::zeros({m, n}, rec);
  {
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
      const double* arow = pa + static_cast<std::size_t>(i) * k;
      double* orow = po + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = pb + static_cast<std::size_t>(j) * k;
        double acc = 0.0;
        for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
        orow[j] = acc;
      }
    }
  }
  if (rec) {
    g_current_tape->record("matmul_nt", [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
      const double* g = oi->grad.data();
      if (ai->requires_grad) {
        // dA += g . B
        for (int i = 0; i < m; ++i) {
          const double* grow = g + static_cast<std::size_t>(i) * n;
          double* darow = ai->grad.data() + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < n; ++j) {
            const double gv = grow[j];
            if (gv == 0.0) continue;
            const double* brow = bi->data.data() + static_cast<std::size_t>(j) * k;
            for (int l = 0; l < k; ++l) darow[l] += gv * brow[l];
          }
        }
      }
      if (bi->requires_grad) {
        // dB += g^T . A
        for (int i = 0; i < m; ++i) {
          const double* grow = g + static_cast<std::size_t>(i) * n;
          const double* arow = ai->data.data() + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < n; ++j) {
            const double gv = grow[j];
            if (gv == 0.0) continue;
            double* dbrow = bi->grad.data() + static_cast<std::size_t>(j) * k;
            for (int l = 0; l < k; ++l) dbrow[l] += gv * arow[l];
          }
        }
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_2d(x, "add_bias");
  if (b.ndim() != 1 || b.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match columns of " +
                     shape_str(x.shape()));
  }
  const int r = x.dim(0), c = x.dim(1);
  const bool rec = tracking(x, b);
  Tensor out = Tensor::zeros({r, c}, rec);
  const double* px = x.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      po[static_cast<std::size_t>(i) * c + j] = px[static_cast<std::size_t>(i) * c + j] + pb[j];
    }
  }
  if (rec) {
    g_current_tape->record("add_bias", [xi = x.impl(), bi = b.impl(), oi = out.impl(), r, c] {
      const double* g = oi->grad.data();
      if (xi->requires_grad) {
        for (std::size_t i = 0; i < static_cast<std::size_t>(r) * c; ++i) xi->grad[i] += g[i];
      }
      if (bi->requires_grad) {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) bi->grad[j] += g[static_cast<std::size_t>(i) * c + j];
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.ndim() < 1) throw ShapeError("softmax_rows: rank must be at least 1");
  require_finite(x, "softmax_rows");
  const int cols = x.dim(x.ndim() - 1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(cols);
  const bool rec = tracking(x);
  Tensor out = Tensor::zeros(x.shape(), rec);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * cols;
    double* orow = po + r * cols;
    double mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int j = 0; j < cols; ++j) orow[j] /= denom;
  }
  if (rec) {
    g_current_tape->record("softmax_rows", [xi = x.impl(), oi = out.impl(), rows, cols] {
      const double* g = oi->grad.data();
      const double* y = oi->data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = g + r * cols;
        const double* yrow = y + r * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += grow[j] * yrow[j];
        double* dx = xi->grad.data() + r * cols;
        for (int j = 0; j < cols; ++j) dx[j] += yrow[j] * (grow[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  if (x.ndim() < 1) throw ShapeError("layer_norm: rank must be at least 1");
  const int h = x.dim(x.ndim() - 1);
  if (gain.ndim() != 1 || gain.dim(0) != h || bias.ndim() != 1 || bias.dim(0) != h) {
    throw ShapeError("layer_norm: gain/bias must be vectors of length " + std::to_string(h));
  }
  const std::size_t rows = x.numel() / static_cast<std::size_t>(h);
  const bool rec = g_current_tape != nullptr &&
                   (x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  Tensor out = Tensor::zeros(x.shape(), rec);
  // Saved per row for backward: normalized values and 1/sigma.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<double>>(rows);
  const double* px = x.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * h;
    double mean = 0.0;
    for (int j = 0; j < h; ++j) mean += row[j];
    mean /= h;
    double var = 0.0;
    for (int j = 0; j < h; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= h;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[r] = inv;
    double* xh = xhat->data() + r * h;
    double* orow = po + r * h;
    for (int j = 0; j < h; ++j) {
      xh[j] = (row[j] - mean) * inv;
      orow[j] = pg[j] * xh[j] + pb[j];
    }
  }
  if (rec) {
    g_current_tape->record(
        "layer_norm",
        [xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl(), xhat, inv_sigma,
         rows, h] {
          const double* g = oi->grad.data();
          for (std::size_t r = 0; r < rows; ++r) {
            const double* grow = g + r * h;
            const double* xh = xhat->data() + r * h;
            if (gi->requires_grad || bi->requires_grad) {
              for (int j = 0; j < h; ++j) {
                if (gi->requires_grad) gi->grad[j] += grow[j] * xh[j];
                if (bi->requires_grad) bi->grad[j] += grow[j];
              }
            }
            if (xi->requires_grad) {
              // dx = (w - mean(w) - xhat * mean(w*xhat)) / sigma, w = dy * gain
              double mean_w = 0.0, mean_wx = 0.0;
              for (int j = 0; j < h; ++j) {
                const double w = grow[j] * gi->data[j];
                mean_w += w;
                mean_wx += w * xh[j];
              }
              mean_w /= h;
              mean_wx /= h;
              double* dx = xi->grad.data() + r * h;
              const double inv = (*inv_sigma)[r];
              for (int j = 0; j < h; ++j) {
                const double w = grow[j] * gi->data[j];
                dx[j] += (w - mean_w - xh[j] * mean_wx) * inv;
              }
            }
          }
        });
  }
  return out;
}

double gelu_scalar(double x, GeluKind kind) {
  if (kind == GeluKind::Erf) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  constexpr double s = 0.7978845608028654;  // sqrt(2/pi)
  const double u = s * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

namespace {

double gelu_grad_scalar(double x, GeluKind kind) {
  if (kind == GeluKind::Erf) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    return cdf + x * phi;
  }
  constexpr double s = 0.7978845608028654;
  constexpr double c = 0.044715;
  const double u = s * (x + c * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * c * x * x);
}

}  // namespace

Tensor gelu(const Tensor& x, GeluKind kind) {
  const bool rec = tracking(x);
  Tensor out = Tensor::zeros(x.shape(), rec);
  const std::size_t n = x.numel();
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = gelu_scalar(px[i], kind);
  if (rec) {
    g_current_tape->record("gelu", [xi = x.impl(), oi = out.impl(), kind, n] {
      const double* g = oi->grad.data();
      for (std::size_t i = 0; i < n; ++i) {
        xi->grad[i] += g[i] * gelu_grad_scalar(xi->data[i], kind);
      }
    });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets) {
  require_2d(logits, "cross_entropy_logits");
  require_finite(logits, "cross_entropy_logits");
  const int b = logits.dim(0), n = logits.dim(1);
  if (static_cast<int>(targets.size()) != b) {
    throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(b) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || t >= n) {
      throw IndexError("cross_entropy_logits: target " + std::to_string(t) +
                       " out of range [0," + std::to_string(n) + ")");
    }
  }
  const bool rec = tracking(logits);
  // Softmax rows are saved for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  const double* pl = logits.data();
  double total = 0.0;
  for (int r = 0; r < b; ++r) {
    const double* row = pl + static_cast<std::size_t>(r) * n;
    double* prow = probs->data() + static_cast<std::size_t>(r) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    for (int j = 0; j < n; ++j) prow[j] /= denom;
    total += -std::log(prow[targets[static_cast<std::size_t>(r)]]);
  }
  Tensor out = Tensor::scalar(total / b, rec);
  if (rec) {
    g_current_tape->record("cross_entropy_logits",
                           [li = logits.impl(), oi = out.impl(), probs, targets, b, n] {
                             const double g = oi->grad[0];
                             if (g == 0.0) return;
                             for (int r = 0; r < b; ++r) {
                               const double* prow = probs->data() + static_cast<std::size_t>(r) * n;
                               double* dl = li->grad.data() + static_cast<std::size_t>(r) * n;
                               const int t = targets[static_cast<std::size_t>(r)];
                               for (int j = 0; j < n; ++j) {
                                 double d = prow[j];
                                 if (j == t) d -= 1.0;
                                 dl[j] += g * d / b;
                               }
                             }
                           });
  }
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  require_2d(table, "embedding_rows");
  const int rows = table.dim(0), h = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= rows) {
      throw IndexError("embedding_rows: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(rows) + ")");
    }
  }
  if (ids.empty()) throw ShapeError("embedding_rows: empty id list");
  const bool rec = tracking(table);
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), h}, rec);
  const double* pt = table.data();
  double* po = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::memcpy(po + i * h, pt + static_cast<std::size_t>(ids[i]) * h,
                sizeof(double) * static_cast<std::size_t>(h));
  }
  if (rec) {
    g_current_tape->record("embedding_rows", [ti = table.impl(), oi = out.impl(), ids, h] {
      const double* g = oi->grad.data();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* drow = ti->grad.data() + static_cast<std::size_t>(ids[i]) * h;
        const double* grow = g + i * h;
        for (int j = 0; j < h; ++j) drow[j] += grow[j];
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  return embedding_rows(x, rows);
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  require_2d(x, "slice_cols");
  const int r = x.dim(0), c = x.dim(1);
  if (start < 0 || len <= 0 || start + len > c) {
    throw IndexError("slice_cols: [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + std::to_string(c) + " columns");
  }
  const bool rec = tracking(x);
  Tensor out = Tensor::zeros({r, len}, rec);
  const double* px = x.data();
  double* po = out.data();
  for (int i = 0; i < r; ++i) {
    std::memcpy(po + static_cast<std::size_t>(i) * len,
                px + static_cast<std::size_t>(i) * c + start,
                sizeof(double) * static_cast<std::size_t>(len));
  }
  if (rec) {
    g_current_tape->record("slice_cols", [xi = x.impl(), oi = out.impl(), r, c, start, len] {
      const double* g = oi->grad.data();
      for (int i = 0; i < r; ++i) {
        double* dx = xi->grad.data() + static_cast<std::size_t>(i) * c + start;
        const double* grow = g + static_cast<std::size_t>(i) * len;
        for (int j = 0; j < len; ++j) dx[j] += grow[j];
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int r = parts[0].dim(0);
  int total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != r) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
    }
    total += p.dim(1);
    any_grad = any_grad || p.requires_grad();
  }
  const bool rec = g_current_tape != nullptr && any_grad;
  Tensor out = Tensor::zeros({r, total}, rec);
  double* po = out.data();
  int col = 0;
  for (const Tensor& p : parts) {
    const int c = p.dim(1);
    const double* pp = p.data();
    for (int i = 0; i < r; ++i) {
      std::memcpy(po + static_cast<std::size_t>(i) * total + col,
                  pp + static_cast<std::size_t>(i) * c,
                  sizeof(double) * static_cast<std::size_t>(c));
    }
    col += c;
  }
  if (rec) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    g_current_tape->record("concat_cols", [impls, oi = out.impl(), r, total] {
      const double* g = oi->grad.data();
      int col = 0;
      for (const auto& pi : impls) {
        const int c = pi->shape[1];
        if (pi->requires_grad) {
          for (int i = 0; i < r; ++i) {
            double* dp = pi->grad.data() + static_cast<std::size_t>(i) * c;
            const double* grow = g + static_cast<std::size_t>(i) * total + col;
            for (int j = 0; j < c; ++j) dp[j] += grow[j];
          }
        }
        col += c;
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  }
  const bool rec = tracking(x);
  Tensor out = Tensor::from(std::move(shape), x.values(), rec);
  if (rec) {
    g_current_tape->record("reshape", [xi = x.impl(), oi = out.impl()] {
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool rec = tracking(x);
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total, rec);
  if (rec) {
    g_current_tape->record("sum", [xi = x.impl(), oi = out.impl()] {
      const double g = oi->grad[0];
      for (double& d : xi->grad) d += g;
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  const std::size_t n = x.numel();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double inv = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i) {
    (*mask)[i] = rng.uniform() < p ? 0.0 : inv;
  }
  const bool rec = tracking(x);
  Tensor out = Tensor::zeros(x.shape(), rec);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * (*mask)[i];
  if (rec) {
    g_current_tape->record("dropout", [xi = x.impl(), oi = out.impl(), mask, n] {
      const double* g = oi->grad.data();
      for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

}  // namespace udarc
