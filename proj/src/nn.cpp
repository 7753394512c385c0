#include "prodat/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace prodat::nn {

bool g_check_finite = true;

namespace {

void check_finite(const Tensor& t, const char* op) {
  if (!g_check_finite) return;
  for (double v : t.data) {
    if (!std::isfinite(v))
      throw ModelError(std::string("non-finite value after op ") + op);
  }
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ArgumentError(std::string(op) + ": shape mismatch " + a.shape_str() +
                      " vs " + b.shape_str());
}

}  // namespace

Tape::Id Tape::push(Tensor value, bool requires_grad,
                    std::function<void(Tape&, Node&)> backward_fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(Tensor value, bool requires_grad) {
  check_finite(value, "leaf");
  return push(std::move(value), requires_grad, nullptr);
}

void Tape::accumulate(Id id, const Tensor& g) {
  Node& n = node(id);
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Tensor(n.value.rows, n.value.cols);
  for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
}

void Tape::backward(Id root) {
  Node& r = node(root);
  if (r.value.rows != 1 || r.value.cols != 1)
    throw ArgumentError("backward: root must be scalar");
  r.grad = Tensor::scalar(1.0);
  for (Id id = root; id >= 0; --id) {
    Node& n = node(id);
    if (n.grad.size() == 0 || !n.backward_fn) continue;
    n.backward_fn(*this, n);
  }
}

Tape::Id Tape::matmul(Id a, Id b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols != B.rows) shape_error("matmul", A, B);
  Tensor Y(A.rows, B.cols);
  // i-k-j order for row-major locality.
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = &A.data[static_cast<std::size_t>(i) * A.cols];
    double* yrow = &Y.data[static_cast<std::size_t>(i) * Y.cols];
    for (int k = 0; k < A.cols; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = &B.data[static_cast<std::size_t>(k) * B.cols];
      for (int j = 0; j < B.cols; ++j) yrow[j] += av * brow[j];
    }
  }
  check_finite(Y, "matmul");
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(Y), rg, [a, b](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    const Tensor& G = n.grad;
    if (t.node(a).requires_grad) {
      Tensor gA(A.rows, A.cols);  // G * B^T
      for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < B.cols; ++j) {
          const double g = G.at(i, j);
          if (g == 0.0) continue;
          for (int k = 0; k < A.cols; ++k) gA.at(i, k) += g * B.at(k, j);
        }
      t.accumulate(a, gA);
    }
    if (t.node(b).requires_grad) {
      Tensor gB(B.rows, B.cols);  // A^T * G
      for (int i = 0; i < A.rows; ++i)
        for (int k = 0; k < A.cols; ++k) {
          const double av = A.at(i, k);
          if (av == 0.0) continue;
          for (int j = 0; j < B.cols; ++j) gB.at(k, j) += av * G.at(i, j);
        }
      t.accumulate(b, gB);
    }
  });
}

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) shape_error("add", A, B);
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] += B.data[i];
  check_finite(Y, "add");
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(Y), rg, [a, b](Tape& t, Node& n) {
    t.accumulate(a, n.grad);
    t.accumulate(b, n.grad);
  });
}

Tape::Id Tape::add_rowvec(Id a, Id b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (B.rows != 1 || B.cols != A.cols) shape_error("add_rowvec", A, B);
  Tensor Y = A;
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) Y.at(i, j) += B.data[static_cast<std::size_t>(j)];
  check_finite(Y, "add_rowvec");
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(Y), rg, [a, b](Tape& t, Node& n) {
    t.accumulate(a, n.grad);
    if (t.node(b).requires_grad) {
      const Tensor& G = n.grad;
      Tensor gB(1, G.cols);
      for (int i = 0; i < G.rows; ++i)
        for (int j = 0; j < G.cols; ++j) gB.data[static_cast<std::size_t>(j)] += G.at(i, j);
      t.accumulate(b, gB);
    }
  });
}

Tape::Id Tape::sub(Id a, Id b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) shape_error("sub", A, B);
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] -= B.data[i];
  check_finite(Y, "sub");
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(Y), rg, [a, b](Tape& t, Node& n) {
    t.accumulate(a, n.grad);
    if (t.node(b).requires_grad) {
      Tensor gB = n.grad;
      for (double& v : gB.data) v = -v;
      t.accumulate(b, gB);
    }
  });
}

Tape::Id Tape::multiply(Id a, Id b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) shape_error("multiply", A, B);
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] *= B.data[i];
  check_finite(Y, "multiply");
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(Y), rg, [a, b](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    if (t.node(a).requires_grad) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= B.data[i];
      t.accumulate(a, g);
    }
    if (t.node(b).requires_grad) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= A.data[i];
      t.accumulate(b, g);
    }
  });
}

Tape::Id Tape::mul_scalar(Id a, Id s) {
  const Tensor& A = value(a);
  const Tensor& S = value(s);
  if (S.rows != 1 || S.cols != 1) shape_error("mul_scalar", A, S);
  Tensor Y = A;
  for (double& v : Y.data) v *= S.data[0];
  check_finite(Y, "mul_scalar");
  const bool rg = node(a).requires_grad || node(s).requires_grad;
  return push(std::move(Y), rg, [a, s](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    const double sv = t.value(s).data[0];
    if (t.node(a).requires_grad) {
      Tensor g = n.grad;
      for (double& v : g.data) v *= sv;
      t.accumulate(a, g);
    }
    if (t.node(s).requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < A.size(); ++i) acc += n.grad.data[i] * A.data[i];
      t.accumulate(s, Tensor::scalar(acc));
    }
  });
}

Tape::Id Tape::scale(Id a, double c) {
  Tensor Y = value(a);
  for (double& v : Y.data) v *= c;
  check_finite(Y, "scale");
  return push(std::move(Y), node(a).requires_grad, [a, c](Tape& t, Node& n) {
    Tensor g = n.grad;
    for (double& v : g.data) v *= c;
    t.accumulate(a, g);
  });
}

Tape::Id Tape::add_const(Id a, double c) {
  Tensor Y = value(a);
  for (double& v : Y.data) v += c;
  check_finite(Y, "add_const");
  return push(std::move(Y), node(a).requires_grad,
              [a](Tape& t, Node& n) { t.accumulate(a, n.grad); });
}

Tape::Id Tape::leaky_relu(Id a, double slope) {
  const Tensor& A = value(a);
  Tensor Y = A;
  for (double& v : Y.data) v = v >= 0.0 ? v : slope * v;
  check_finite(Y, "leaky_relu");
  return push(std::move(Y), node(a).requires_grad, [a, slope](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (A.data[i] < 0.0) g.data[i] *= slope;
    t.accumulate(a, g);
  });
}

Tape::Id Tape::softplus(Id a) {
  const Tensor& A = value(a);
  Tensor Y = A;
  for (double& v : Y.data) v = v > 30.0 ? v : std::log1p(std::exp(v));
  check_finite(Y, "softplus");
  return push(std::move(Y), node(a).requires_grad, [a](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data[i] *= 1.0 / (1.0 + std::exp(-A.data[i]));
    t.accumulate(a, g);
  });
}

Tape::Id Tape::sigmoid(Id a) {
  const Tensor& A = value(a);
  Tensor Y = A;
  for (double& v : Y.data) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                 : std::exp(v) / (1.0 + std::exp(v));
  }
  check_finite(Y, "sigmoid");
  Id id = push(std::move(Y), node(a).requires_grad, nullptr);
  node(id).backward_fn = [a, id](Tape& t, Node& n) {
    const Tensor& Yv = t.value(id);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data[i] *= Yv.data[i] * (1.0 - Yv.data[i]);
    t.accumulate(a, g);
  };
  return id;
}

Tape::Id Tape::reduce_mean(Id a) {
  const Tensor& A = value(a);
  double acc = 0.0;
  for (double v : A.data) acc += v;
  const double inv = 1.0 / static_cast<double>(A.size());
  return push(Tensor::scalar(acc * inv), node(a).requires_grad,
              [a, inv](Tape& t, Node& n) {
                const Tensor& A = t.value(a);
                Tensor g(A.rows, A.cols);
                const double gv = n.grad.data[0] * inv;
                for (double& v : g.data) v = gv;
                t.accumulate(a, g);
              });
}

Tape::Id Tape::reduce_sum(Id a) {
  const Tensor& A = value(a);
  double acc = 0.0;
  for (double v : A.data) acc += v;
  return push(Tensor::scalar(acc), node(a).requires_grad, [a](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g(A.rows, A.cols);
    const double gv = n.grad.data[0];
    for (double& v : g.data) v = gv;
    t.accumulate(a, g);
  });
}

Tape::Id Tape::concat_cols(Id a, Id b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rows != B.rows) shape_error("concat_cols", A, B);
  Tensor Y(A.rows, A.cols + B.cols);
  for (int i = 0; i < A.rows; ++i) {
    for (int j = 0; j < A.cols; ++j) Y.at(i, j) = A.at(i, j);
    for (int j = 0; j < B.cols; ++j) Y.at(i, A.cols + j) = B.at(i, j);
  }
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(Y), rg, [a, b](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    const Tensor& G = n.grad;
    if (t.node(a).requires_grad) {
      Tensor gA(A.rows, A.cols);
      for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) gA.at(i, j) = G.at(i, j);
      t.accumulate(a, gA);
    }
    if (t.node(b).requires_grad) {
      Tensor gB(B.rows, B.cols);
      for (int i = 0; i < B.rows; ++i)
        for (int j = 0; j < B.cols; ++j) gB.at(i, j) = G.at(i, A.cols + j);
      t.accumulate(b, gB);
    }
  });
}

Tape::Id Tape::concat_rows(Id a, Id b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols != B.cols) shape_error("concat_rows", A, B);
  Tensor Y(A.rows + B.rows, A.cols);
  std::copy(A.data.begin(), A.data.end(), Y.data.begin());
  std::copy(B.data.begin(), B.data.end(), Y.data.begin() + static_cast<long>(A.size()));
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(Y), rg, [a, b](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    const Tensor& G = n.grad;
    if (t.node(a).requires_grad) {
      Tensor gA(A.rows, A.cols);
      std::copy(G.data.begin(), G.data.begin() + static_cast<long>(A.size()),
                gA.data.begin());
      t.accumulate(a, gA);
    }
    if (t.node(b).requires_grad) {
      Tensor gB(B.rows, B.cols);
      std::copy(G.data.begin() + static_cast<long>(A.size()), G.data.end(),
                gB.data.begin());
      t.accumulate(b, gB);
    }
  });
}

Tape::Id Tape::gather_rows(Id a, const std::vector<int>& idx) {
  const Tensor& A = value(a);
  Tensor Y(static_cast<int>(idx.size()), A.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const int r = idx[i];
    if (r < 0 || r >= A.rows)
      throw ArgumentError("gather_rows: index out of range");
    std::copy_n(&A.data[static_cast<std::size_t>(r) * A.cols], A.cols,
                &Y.data[i * static_cast<std::size_t>(A.cols)]);
  }
  return push(std::move(Y), node(a).requires_grad, [a, idx](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g(A.rows, A.cols);
    const Tensor& G = n.grad;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = &g.data[static_cast<std::size_t>(idx[i]) * A.cols];
      const double* src = &G.data[i * static_cast<std::size_t>(A.cols)];
      for (int j = 0; j < A.cols; ++j) dst[j] += src[j];
    }
    t.accumulate(a, g);
  });
}

Tape::Id Tape::slice_cols(Id a, int start, int len) {
  const Tensor& A = value(a);
  if (start < 0 || len < 1 || start + len > A.cols)
    throw ArgumentError("slice_cols: bad range");
  Tensor Y(A.rows, len);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < len; ++j) Y.at(i, j) = A.at(i, start + j);
  return push(std::move(Y), node(a).requires_grad, [a, start, len](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < len; ++j) g.at(i, start + j) = n.grad.at(i, j);
    t.accumulate(a, g);
  });
}

Tape::Id Tape::reshape(Id a, int rows, int cols) {
  const Tensor& A = value(a);
  if (static_cast<std::size_t>(rows) * cols != A.size())
    throw ArgumentError("reshape: element count mismatch");
  Tensor Y(rows, cols);
  Y.data = A.data;
  return push(std::move(Y), node(a).requires_grad, [a](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g(A.rows, A.cols);
    g.data = n.grad.data;
    t.accumulate(a, g);
  });
}

Tape::Id Tape::elementwise_abs(Id a) {
  const Tensor& A = value(a);
  Tensor Y = A;
  for (double& v : Y.data) v = std::abs(v);
  return push(std::move(Y), node(a).requires_grad, [a](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (A.data[i] < 0.0)
        g.data[i] = -g.data[i];
      else if (A.data[i] == 0.0)
        g.data[i] = 0.0;
    }
    t.accumulate(a, g);
  });
}

Tape::Id Tape::elementwise_log(Id a) {
  const Tensor& A = value(a);
  Tensor Y = A;
  for (double& v : Y.data) {
    if (v <= 0.0) throw ArgumentError("log: nonpositive input");
    v = std::log(v);
  }
  check_finite(Y, "log");
  return push(std::move(Y), node(a).requires_grad, [a](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] /= A.data[i];
    t.accumulate(a, g);
  });
}

Tape::Id Tape::clamp_min(Id a, double lo) {
  const Tensor& A = value(a);
  Tensor Y = A;
  for (double& v : Y.data) v = std::max(v, lo);
  return push(std::move(Y), node(a).requires_grad, [a, lo](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (A.data[i] <= lo) g.data[i] = 0.0;
    t.accumulate(a, g);
  });
}

Tape::Id Tape::group_max_rows(Id a, int k) {
  const Tensor& A = value(a);
  if (k < 1 || A.rows % k != 0) throw ArgumentError("group_max_rows: bad k");
  const int groups = A.rows / k;
  Tensor Y(groups, A.cols);
  auto argmax = std::make_shared<std::vector<int>>(
      static_cast<std::size_t>(groups) * A.cols);
  for (int g = 0; g < groups; ++g) {
    for (int j = 0; j < A.cols; ++j) {
      int best = g * k;
      double bv = A.at(best, j);
      for (int r = 1; r < k; ++r) {
        const double v = A.at(g * k + r, j);
        if (v > bv) {
          bv = v;
          best = g * k + r;
        }
      }
      Y.at(g, j) = bv;
      (*argmax)[static_cast<std::size_t>(g) * A.cols + j] = best;
    }
  }
  return push(std::move(Y), node(a).requires_grad, [a, argmax](Tape& t, Node& n) {
    const Tensor& A = t.value(a);
    Tensor g(A.rows, A.cols);
    const Tensor& G = n.grad;
    for (int gi = 0; gi < G.rows; ++gi)
      for (int j = 0; j < G.cols; ++j)
        g.at((*argmax)[static_cast<std::size_t>(gi) * G.cols + j], j) += G.at(gi, j);
    t.accumulate(a, g);
  });
}

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (params.count(name)) throw ArgumentError("duplicate parameter " + name);
  Parameter p;
  p.name = name;
  p.grad = Tensor(init.rows, init.cols);
  p.adam_m = Tensor(init.rows, init.cols);
  p.adam_v = Tensor(init.rows, init.cols);
  p.value = std::move(init);
  return params.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ArgumentError("unknown parameter " + name);
  return it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ArgumentError("unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, p] : params)
    std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

void adam_step(ParamStore& params, AdamState& state, double lr) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, p] : params.params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      if (!std::isfinite(g))
        throw ModelError("non-finite gradient in parameter " + name);
      p.adam_m.data[i] = state.beta1 * p.adam_m.data[i] + (1.0 - state.beta1) * g;
      p.adam_v.data[i] = state.beta2 * p.adam_v.data[i] + (1.0 - state.beta2) * g * g;
      const double mhat = p.adam_m.data[i] / bc1;
      const double vhat = p.adam_v.data[i] / bc2;
      p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

Tensor init_uniform(int rows, int cols, double gain, Rng& rng) {
  Tensor t(rows, cols);
  const double bound = gain / std::sqrt(static_cast<double>(std::max(1, rows)));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace prodat::nn
