#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "prodat/common.hpp"

namespace prodat::nn {

// Row-major dense 2-D tensor; scalars are [1,1].
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const {
    return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
  }

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }
  static Tensor from_vector(const std::vector<double>& v, bool column = true) {
    Tensor t(column ? static_cast<int>(v.size()) : 1,
             column ? 1 : static_cast<int>(v.size()));
    t.data = v;
    return t;
  }
};

// Global switch for per-op finiteness assertions (on by default; the
// trainer may disable it for speed outside CI).
extern bool g_check_finite;

// Define-by-run reverse-mode tape. Node ids are indices into the tape.
class Tape {
 public:
  using Id = int;

  Id leaf(Tensor value, bool requires_grad = false);

  // --- registered differentiable op set ---
  Id matmul(Id a, Id b);
  Id add(Id a, Id b);            // same shape
  Id add_rowvec(Id a, Id b);     // a[m,n] + broadcast b[1,n]
  Id sub(Id a, Id b);
  Id multiply(Id a, Id b);       // elementwise, same shape
  Id mul_scalar(Id a, Id s);     // s is [1,1]
  Id scale(Id a, double c);      // constant factor
  Id add_const(Id a, double c);
  Id neg(Id a) { return scale(a, -1.0); }
  Id leaky_relu(Id a, double slope = 0.2);
  Id softplus(Id a);
  Id sigmoid(Id a);
  Id reduce_mean(Id a);          // -> [1,1]
  Id reduce_sum(Id a);           // -> [1,1]
  Id concat_cols(Id a, Id b);
  Id concat_rows(Id a, Id b);
  Id gather_rows(Id a, const std::vector<int>& idx);  // scatter-add backward
  Id slice_cols(Id a, int start, int len);
  Id reshape(Id a, int rows, int cols);
  Id elementwise_abs(Id a);
  Id elementwise_log(Id a);
  Id clamp_min(Id a, double lo);  // gradient passes where a > lo
  // Max over groups of k consecutive rows; backward routes to the argmax.
  Id group_max_rows(Id a, int k);

  void backward(Id root);  // root must be [1,1]

  const Tensor& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, Node&)> backward_fn;  // null for leaves
  };

  Id push(Tensor value, bool requires_grad,
          std::function<void(Tape&, Node&)> backward_fn);
  Node& node(Id id) { return nodes_[static_cast<std::size_t>(id)]; }
  void accumulate(Id id, const Tensor& g);

  std::vector<Node> nodes_;
  friend struct TapeOps;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
};

// Ordered by name so iteration (and thus training) is deterministic.
struct ParamStore {
  std::map<std::string, Parameter> params;

  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  void zero_grads();
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double base_lr = 1e-3;
  std::uint64_t step = 0;
};

// Standard bias-corrected Adam over every parameter in the store.
// Throws ModelError naming the parameter on a non-finite gradient.
void adam_step(ParamStore& params, AdamState& state, double lr);

inline double lr_schedule(std::uint64_t epoch, double base_lr = 1e-3) {
  return base_lr * std::pow(0.5, static_cast<double>(epoch / 15));
}

// Deterministic fan-in scaled uniform init.
Tensor init_uniform(int rows, int cols, double gain, Rng& rng);

}  // namespace prodat::nn
