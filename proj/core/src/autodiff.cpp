#include "rankstack/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rankstack/params.hpp"

namespace rankstack::nn {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

double gelu_fwd(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_bwd(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void softmax_row(const double* in, double* out, int d) {
  double mx = in[0];
  for (int j = 1; j < d; ++j) mx = std::max(mx, in[j]);
  double sum = 0;
  for (int j = 0; j < d; ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  for (int j = 0; j < d; ++j) out[j] /= sum;
}

}  // namespace

struct Tape::Node {
  Tensor value;
  Tensor grad;
  bool needs_grad = false;
  std::string param_name;  // non-empty marks a trainable leaf
  std::vector<int> inputs;

  virtual ~Node() = default;
  virtual void backward(Tape&) {}
};

Tape::Tape() = default;
Tape::~Tape() = default;

int Tape::push(std::unique_ptr<Node> n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tape::Node& Tape::node(Value v) {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("invalid tape value handle");
  return *nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node(Value v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("invalid tape value handle");
  return *nodes_[static_cast<size_t>(v.id)];
}

Tensor& Tape::grad_buf(int id) { return nodes_[static_cast<size_t>(id)]->grad; }

const Tensor& Tape::val(Value v) const { return node(v).value; }

const Tensor& Tape::grad(Value leaf) const {
  const Node& n = node(leaf);
  if (!ran_backward_) throw std::logic_error("grad requested before backward");
  return n.grad;
}

// --- leaves -----------------------------------------------------------------

Value Tape::input(Tensor t) {
  auto n = std::make_unique<Node>();
  n->value = std::move(t);
  return {push(std::move(n))};
}

Value Tape::param(const std::string& name, const Tensor& value) {
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i]->param_name == name) return {static_cast<int>(i)};
  }
  auto n = std::make_unique<Node>();
  n->value = value;
  n->needs_grad = true;
  n->param_name = name;
  return {push(std::move(n))};
}

Value Tape::param(ParameterStore& store, const std::string& name) {
  return param(name, store.value(name));
}

// --- elementwise / simple ops -------------------------------------------------

#define BINARY_PREAMBLE(opname)                                            \
  const Tensor& av = node(a).value;                                        \
  const Tensor& bv = node(b).value;                                        \
  if (!av.same_shape(bv))                                                  \
    shape_error(opname, av.shape_str() + " vs " + bv.shape_str());

Value Tape::add(Value a, Value b) {
  BINARY_PREAMBLE("add")
  struct AddNode : Node {
    void backward(Tape& t) override {
      for (int in : inputs) {
        Tensor& g = t.grad_buf(in);
        if (g.numel()) g.add_inplace(grad);
      }
    }
  };
  auto n = std::make_unique<AddNode>();
  n->value = av;
  n->value.add_inplace(bv);
  n->inputs = {a.id, b.id};
  n->needs_grad = node(a).needs_grad || node(b).needs_grad;
  return {push(std::move(n))};
}

Value Tape::sub(Value a, Value b) {
  BINARY_PREAMBLE("sub")
  struct SubNode : Node {
    void backward(Tape& t) override {
      Tensor& ga = t.grad_buf(inputs[0]);
      if (ga.numel()) ga.add_inplace(grad);
      Tensor& gb = t.grad_buf(inputs[1]);
      if (gb.numel())
        for (size_t i = 0; i < grad.numel(); ++i) gb[i] -= grad[i];
    }
  };
  auto n = std::make_unique<SubNode>();
  n->value = av;
  for (size_t i = 0; i < n->value.numel(); ++i) n->value[i] -= bv[i];
  n->inputs = {a.id, b.id};
  n->needs_grad = node(a).needs_grad || node(b).needs_grad;
  return {push(std::move(n))};
}

Value Tape::mul(Value a, Value b) {
  BINARY_PREAMBLE("mul")
  struct MulNode : Node {
    void backward(Tape& t) override {
      const Tensor& av = t.nodes_[static_cast<size_t>(inputs[0])]->value;
      const Tensor& bv = t.nodes_[static_cast<size_t>(inputs[1])]->value;
      Tensor& ga = t.grad_buf(inputs[0]);
      if (ga.numel())
        for (size_t i = 0; i < grad.numel(); ++i) ga[i] += grad[i] * bv[i];
      Tensor& gb = t.grad_buf(inputs[1]);
      if (gb.numel())
        for (size_t i = 0; i < grad.numel(); ++i) gb[i] += grad[i] * av[i];
    }
  };
  auto n = std::make_unique<MulNode>();
  n->value = av;
  for (size_t i = 0; i < n->value.numel(); ++i) n->value[i] *= bv[i];
  n->inputs = {a.id, b.id};
  n->needs_grad = node(a).needs_grad || node(b).needs_grad;
  return {push(std::move(n))};
}

Value Tape::bias_add(Value m, Value bias) {
  const Tensor& mv = node(m).value;
  const Tensor& bv = node(bias).value;
  if (bv.rank() != 1 || bv.cols() != mv.cols())
    shape_error("bias_add", mv.shape_str() + " vs bias " + bv.shape_str());
  struct BiasAddNode : Node {
    void backward(Tape& t) override {
      Tensor& gm = t.grad_buf(inputs[0]);
      if (gm.numel()) gm.add_inplace(grad);
      Tensor& gb = t.grad_buf(inputs[1]);
      if (gb.numel()) {
        int r = grad.rows(), c = grad.cols();
        for (int i = 0; i < r; ++i) {
          const double* g = grad.row_ptr(i);
          for (int j = 0; j < c; ++j) gb[static_cast<size_t>(j)] += g[j];
        }
      }
    }
  };
  auto n = std::make_unique<BiasAddNode>();
  n->value = mv;
  for (int i = 0; i < mv.rows(); ++i) {
    double* row = n->value.row_ptr(i);
    for (int j = 0; j < mv.cols(); ++j) row[j] += bv[static_cast<size_t>(j)];
  }
  n->inputs = {m.id, bias.id};
  n->needs_grad = node(m).needs_grad || node(bias).needs_grad;
  return {push(std::move(n))};
}

Value Tape::scale(Value v, double c) {
  struct ScaleNode : Node {
    double c = 0;
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (g.numel())
        for (size_t i = 0; i < grad.numel(); ++i) g[i] += c * grad[i];
    }
  };
  auto n = std::make_unique<ScaleNode>();
  n->c = c;
  n->value = node(v).value;
  n->value.scale_inplace(c);
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

Value Tape::add_scalar(Value v, double c) {
  struct AddScalarNode : Node {
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (g.numel()) g.add_inplace(grad);
    }
  };
  auto n = std::make_unique<AddScalarNode>();
  n->value = node(v).value;
  for (size_t i = 0; i < n->value.numel(); ++i) n->value[i] += c;
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

Value Tape::rsub_scalar(double c, Value v) {
  struct RsubNode : Node {
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (g.numel())
        for (size_t i = 0; i < grad.numel(); ++i) g[i] -= grad[i];
    }
  };
  auto n = std::make_unique<RsubNode>();
  n->value = node(v).value;
  for (size_t i = 0; i < n->value.numel(); ++i) n->value[i] = c - n->value[i];
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

Value Tape::relu(Value v) {
  struct ReluNode : Node {
    Tensor x;
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (g.numel())
        for (size_t i = 0; i < grad.numel(); ++i)
          if (x[i] > 0.0) g[i] += grad[i];
    }
  };
  auto n = std::make_unique<ReluNode>();
  n->x = node(v).value;
  n->value = n->x;
  for (size_t i = 0; i < n->value.numel(); ++i)
    n->value[i] = std::max(0.0, n->value[i]);
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

Value Tape::gelu(Value v) {
  struct GeluNode : Node {
    Tensor x;
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (g.numel())
        for (size_t i = 0; i < grad.numel(); ++i)
          g[i] += grad[i] * gelu_bwd(x[i]);
    }
  };
  auto n = std::make_unique<GeluNode>();
  n->x = node(v).value;
  n->value = n->x;
  for (size_t i = 0; i < n->value.numel(); ++i)
    n->value[i] = gelu_fwd(n->value[i]);
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

Value Tape::sigmoid(Value v) {
  struct SigmoidNode : Node {
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (g.numel())
        for (size_t i = 0; i < grad.numel(); ++i)
          g[i] += grad[i] * value[i] * (1.0 - value[i]);
    }
  };
  auto n = std::make_unique<SigmoidNode>();
  n->value = node(v).value;
  for (size_t i = 0; i < n->value.numel(); ++i) {
    double x = n->value[i];
    n->value[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                         : std::exp(x) / (1.0 + std::exp(x));
  }
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

Value Tape::activation(Value v, Activation act) {
  return act == Activation::kRelu ? relu(v) : gelu(v);
}

Value Tape::log(Value v) {
  struct LogNode : Node {
    Tensor x;
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (g.numel())
        for (size_t i = 0; i < grad.numel(); ++i) g[i] += grad[i] / x[i];
    }
  };
  auto n = std::make_unique<LogNode>();
  n->x = node(v).value;
  n->value = n->x;
  for (size_t i = 0; i < n->value.numel(); ++i)
    n->value[i] = std::log(n->value[i]);
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

Value Tape::clamp(Value v, double lo, double hi) {
  struct ClampNode : Node {
    Tensor x;
    double lo = 0, hi = 0;
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (g.numel())
        for (size_t i = 0; i < grad.numel(); ++i)
          if (x[i] >= lo && x[i] <= hi) g[i] += grad[i];
    }
  };
  auto n = std::make_unique<ClampNode>();
  n->lo = lo;
  n->hi = hi;
  n->x = node(v).value;
  n->value = n->x;
  for (size_t i = 0; i < n->value.numel(); ++i)
    n->value[i] = std::clamp(n->value[i], lo, hi);
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

// --- matmul -------------------------------------------------------------------

Value Tape::matmul(Value a, Value b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (bv.rank() != 2 || av.cols() != bv.rows())
    shape_error("matmul", av.shape_str() + " * " + bv.shape_str());
  struct MatmulNode : Node {
    int m = 0, k = 0, n = 0;
    void backward(Tape& t) override {
      const Tensor& A = t.nodes_[static_cast<size_t>(inputs[0])]->value;
      const Tensor& B = t.nodes_[static_cast<size_t>(inputs[1])]->value;
      Tensor& ga = t.grad_buf(inputs[0]);
      if (ga.numel()) gemm_nt(grad.data(), B.data(), ga.data(), m, n, k);
      Tensor& gb = t.grad_buf(inputs[1]);
      if (gb.numel()) gemm_tn(A.data(), grad.data(), gb.data(), m, k, n);
    }
  };
  auto n = std::make_unique<MatmulNode>();
  n->m = av.rows();
  n->k = av.cols();
  n->n = bv.cols();
  n->value = av.rank() == 1 ? Tensor({n->n}) : Tensor({n->m, n->n});
  gemm_nn(av.data(), bv.data(), n->value.data(), n->m, n->k, n->n);
  n->inputs = {a.id, b.id};
  n->needs_grad = node(a).needs_grad || node(b).needs_grad;
  return {push(std::move(n))};
}

Value Tape::matmul_nt(Value a, Value b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (bv.rank() != 2 || av.cols() != bv.cols())
    shape_error("matmul_nt", av.shape_str() + " * " + bv.shape_str() + "^T");
  struct MatmulNTNode : Node {
    int m = 0, k = 0, n = 0;
    void backward(Tape& t) override {
      const Tensor& A = t.nodes_[static_cast<size_t>(inputs[0])]->value;
      const Tensor& B = t.nodes_[static_cast<size_t>(inputs[1])]->value;
      Tensor& ga = t.grad_buf(inputs[0]);
      if (ga.numel()) gemm_nn(grad.data(), B.data(), ga.data(), m, n, k);
      Tensor& gb = t.grad_buf(inputs[1]);
      if (gb.numel()) gemm_tn(grad.data(), A.data(), gb.data(), m, n, k);
    }
  };
  auto n = std::make_unique<MatmulNTNode>();
  n->m = av.rows();
  n->k = av.cols();
  n->n = bv.rows();
  n->value = av.rank() == 1 ? Tensor({n->n}) : Tensor({n->m, n->n});
  gemm_nt(av.data(), bv.data(), n->value.data(), n->m, n->k, n->n);
  n->inputs = {a.id, b.id};
  n->needs_grad = node(a).needs_grad || node(b).needs_grad;
  return {push(std::move(n))};
}

// --- normalization / softmax ----------------------------------------------------

Value Tape::layer_norm(Value x, Value gain, Value bias) {
  const Tensor& xv = node(x).value;
  const Tensor& gv = node(gain).value;
  const Tensor& bv = node(bias).value;
  int d = xv.cols();
  if (gv.numel() != static_cast<size_t>(d) ||
      bv.numel() != static_cast<size_t>(d))
    shape_error("layer_norm", "gain/bias must have width " + std::to_string(d));
  constexpr double kEps = 1e-5;
  struct LayerNormNode : Node {
    Tensor xhat;
    std::vector<double> inv_std;
    void backward(Tape& t) override {
      const Tensor& gv = t.nodes_[static_cast<size_t>(inputs[1])]->value;
      Tensor& gx = t.grad_buf(inputs[0]);
      Tensor& gg = t.grad_buf(inputs[1]);
      Tensor& gb = t.grad_buf(inputs[2]);
      int r = xhat.rows(), d = xhat.cols();
      for (int i = 0; i < r; ++i) {
        const double* go = grad.row_ptr(i);
        const double* xh = xhat.row_ptr(i);
        if (gg.numel())
          for (int j = 0; j < d; ++j)
            gg[static_cast<size_t>(j)] += go[j] * xh[j];
        if (gb.numel())
          for (int j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += go[j];
        if (gx.numel()) {
          double mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (int j = 0; j < d; ++j) {
            double dxh = go[j] * gv[static_cast<size_t>(j)];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[j];
          }
          mean_dxhat /= d;
          mean_dxhat_xhat /= d;
          double* gxr = gx.row_ptr(i);
          for (int j = 0; j < d; ++j) {
            double dxh = go[j] * gv[static_cast<size_t>(j)];
            gxr[j] += inv_std[static_cast<size_t>(i)] *
                      (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
          }
        }
      }
    }
  };
  auto n = std::make_unique<LayerNormNode>();
  int r = xv.rows();
  n->value = xv;
  n->xhat = Tensor(xv.rank() == 1 ? std::vector<int>{1, d} : xv.shape());
  n->inv_std.resize(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* xr = xv.row_ptr(i);
    double mean = 0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= d;
    double inv = 1.0 / std::sqrt(var + kEps);
    n->inv_std[static_cast<size_t>(i)] = inv;
    double* xh = n->xhat.row_ptr(i);
    double* out = n->value.row_ptr(i);
    for (int j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mean) * inv;
      out[j] = xh[j] * gv[static_cast<size_t>(j)] + bv[static_cast<size_t>(j)];
    }
  }
  n->inputs = {x.id, gain.id, bias.id};
  n->needs_grad =
      node(x).needs_grad || node(gain).needs_grad || node(bias).needs_grad;
  return {push(std::move(n))};
}

Value Tape::softmax(Value v) {
  struct SoftmaxNode : Node {
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (!g.numel()) return;
      int r = value.rows(), d = value.cols();
      for (int i = 0; i < r; ++i) {
        const double* y = value.row_ptr(i);
        const double* go = grad.row_ptr(i);
        double dot = 0;
        for (int j = 0; j < d; ++j) dot += go[j] * y[j];
        double* gr = g.row_ptr(i);
        for (int j = 0; j < d; ++j) gr[j] += y[j] * (go[j] - dot);
      }
    }
  };
  const Tensor& xv = node(v).value;
  auto n = std::make_unique<SoftmaxNode>();
  n->value = Tensor(xv.shape());
  for (int i = 0; i < xv.rows(); ++i)
    softmax_row(xv.row_ptr(i), n->value.row_ptr(i), xv.cols());
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

// --- gather / slice / concat ------------------------------------------------------

Value Tape::embedding(Value table, std::span<const int> ids) {
  const Tensor& tv = node(table).value;
  if (tv.rank() != 2) shape_error("embedding", "table must be 2-D");
  struct EmbeddingNode : Node {
    std::vector<int> ids;
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (!g.numel()) return;
      int d = g.cols();
      for (size_t i = 0; i < ids.size(); ++i) {
        const double* go = grad.row_ptr(static_cast<int>(i));
        double* gr = g.row_ptr(ids[i]);
        for (int j = 0; j < d; ++j) gr[j] += go[j];
      }
    }
  };
  auto n = std::make_unique<EmbeddingNode>();
  n->ids.assign(ids.begin(), ids.end());
  int d = tv.cols();
  n->value = Tensor({static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows())
      shape_error("embedding",
                  "id " + std::to_string(ids[i]) + " out of range");
    const double* src = tv.row_ptr(ids[i]);
    double* dst = n->value.row_ptr(static_cast<int>(i));
    for (int j = 0; j < d; ++j) dst[j] = src[j];
  }
  n->inputs = {table.id};
  n->needs_grad = node(table).needs_grad;
  return {push(std::move(n))};
}

Value Tape::rows(Value m, std::span<const int> indices) {
  return embedding(m, indices);
}

Value Tape::row(Value m, int r) {
  const Tensor& mv = node(m).value;
  if (r < 0 || r >= mv.rows()) shape_error("row", "row index out of range");
  struct RowNode : Node {
    int r = 0;
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (!g.numel()) return;
      double* gr = g.row_ptr(r);
      for (size_t j = 0; j < grad.numel(); ++j) gr[j] += grad[j];
    }
  };
  auto n = std::make_unique<RowNode>();
  n->r = r;
  n->value = Tensor({mv.cols()});
  const double* src = mv.row_ptr(r);
  for (int j = 0; j < mv.cols(); ++j) n->value[static_cast<size_t>(j)] = src[j];
  n->inputs = {m.id};
  n->needs_grad = node(m).needs_grad;
  return {push(std::move(n))};
}

Value Tape::concat(std::span<const Value> parts) {
  if (parts.empty()) shape_error("concat", "no inputs");
  bool all_1d = true;
  int rows = node(parts[0]).value.rows();
  int total = 0;
  for (Value p : parts) {
    const Tensor& t = node(p).value;
    if (t.rank() != 1) all_1d = false;
    if (t.rows() != rows) shape_error("concat", "row count mismatch");
    total += t.cols();
  }
  struct ConcatNode : Node {
    std::vector<int> widths;
    void backward(Tape& t) override {
      int r = grad.rows();
      int offset = 0;
      for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor& g = t.grad_buf(inputs[k]);
        int w = widths[k];
        if (g.numel()) {
          for (int i = 0; i < r; ++i) {
            const double* go = grad.row_ptr(i) + offset;
            double* gr = g.row_ptr(i);
            for (int j = 0; j < w; ++j) gr[j] += go[j];
          }
        }
        offset += w;
      }
    }
  };
  auto n = std::make_unique<ConcatNode>();
  n->value = all_1d ? Tensor({total}) : Tensor({rows, total});
  int offset = 0;
  bool needs = false;
  for (Value p : parts) {
    const Tensor& t = node(p).value;
    for (int i = 0; i < rows; ++i) {
      const double* src = t.row_ptr(i);
      double* dst = n->value.row_ptr(i) + offset;
      for (int j = 0; j < t.cols(); ++j) dst[j] = src[j];
    }
    offset += t.cols();
    n->widths.push_back(t.cols());
    n->inputs.push_back(p.id);
    needs = needs || node(p).needs_grad;
  }
  n->needs_grad = needs;
  return {push(std::move(n))};
}

Value Tape::concat(std::initializer_list<Value> parts) {
  return concat(std::span<const Value>(parts.begin(), parts.size()));
}

Value Tape::vstack(std::span<const Value> parts) {
  if (parts.empty()) shape_error("vstack", "no inputs");
  int width = node(parts[0]).value.cols();
  int total_rows = 0;
  for (Value p : parts) {
    const Tensor& t = node(p).value;
    if (t.cols() != width) shape_error("vstack", "column count mismatch");
    total_rows += t.rows();
  }
  struct VstackNode : Node {
    std::vector<int> row_counts;
    void backward(Tape& t) override {
      int w = grad.cols();
      int offset = 0;
      for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor& g = t.grad_buf(inputs[k]);
        int r = row_counts[k];
        if (g.numel()) {
          for (int i = 0; i < r; ++i) {
            const double* go = grad.row_ptr(offset + i);
            double* gr = g.row_ptr(i);
            for (int j = 0; j < w; ++j) gr[j] += go[j];
          }
        }
        offset += r;
      }
    }
  };
  auto n = std::make_unique<VstackNode>();
  n->value = Tensor({total_rows, width});
  int offset = 0;
  bool needs = false;
  for (Value p : parts) {
    const Tensor& t = node(p).value;
    for (int i = 0; i < t.rows(); ++i) {
      const double* src = t.row_ptr(i);
      double* dst = n->value.row_ptr(offset + i);
      for (int j = 0; j < width; ++j) dst[j] = src[j];
    }
    offset += t.rows();
    n->row_counts.push_back(t.rows());
    n->inputs.push_back(p.id);
    needs = needs || node(p).needs_grad;
  }
  n->needs_grad = needs;
  return {push(std::move(n))};
}

Value Tape::vstack(std::initializer_list<Value> parts) {
  return vstack(std::span<const Value>(parts.begin(), parts.size()));
}

Value Tape::mean_rows(Value m) {
  const Tensor& mv = node(m).value;
  if (mv.rank() != 2 || mv.rows() == 0)
    shape_error("mean_rows", "need non-empty 2-D input, got " + mv.shape_str());
  struct MeanRowsNode : Node {
    int r = 0;
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (!g.numel()) return;
      double inv = 1.0 / r;
      for (int i = 0; i < r; ++i) {
        double* gr = g.row_ptr(i);
        for (size_t j = 0; j < grad.numel(); ++j) gr[j] += grad[j] * inv;
      }
    }
  };
  auto n = std::make_unique<MeanRowsNode>();
  n->r = mv.rows();
  n->value = Tensor({mv.cols()});
  for (int i = 0; i < mv.rows(); ++i) {
    const double* src = mv.row_ptr(i);
    for (int j = 0; j < mv.cols(); ++j)
      n->value[static_cast<size_t>(j)] += src[j];
  }
  n->value.scale_inplace(1.0 / mv.rows());
  n->inputs = {m.id};
  n->needs_grad = node(m).needs_grad;
  return {push(std::move(n))};
}

Value Tape::sum(Value v) {
  struct SumNode : Node {
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (!g.numel()) return;
      double go = grad[0];
      for (size_t i = 0; i < g.numel(); ++i) g[i] += go;
    }
  };
  auto n = std::make_unique<SumNode>();
  double s = 0;
  const Tensor& xv = node(v).value;
  for (size_t i = 0; i < xv.numel(); ++i) s += xv[i];
  n->value = Tensor::scalar(s);
  n->inputs = {v.id};
  n->needs_grad = node(v).needs_grad;
  return {push(std::move(n))};
}

// --- attention ---------------------------------------------------------------

Value Tape::attention(Value q, Value k, Value v, int num_heads, bool causal) {
  const Tensor& qv = node(q).value;
  const Tensor& kv = node(k).value;
  const Tensor& vv = node(v).value;
  if (qv.rank() != 2 || !qv.same_shape(kv) || !qv.same_shape(vv))
    shape_error("attention", "q/k/v must share [n x d_model] shape");
  int n_pos = qv.rows(), d_model = qv.cols();
  if (num_heads <= 0 || d_model % num_heads != 0)
    shape_error("attention", "d_model not divisible by num_heads");
  int dh = d_model / num_heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  struct AttentionNode : Node {
    int heads = 0, n = 0, dh = 0;
    double scale = 0;
    std::vector<Tensor> probs;  // per head, [n x n]

    static void slice_head(const Tensor& src, double* dst, int n, int dh,
                           int off) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < dh; ++j)
          dst[static_cast<size_t>(i) * dh + j] = src.at(i, off + j);
    }

    void backward(Tape& t) override {
      const Tensor& Q = t.nodes_[static_cast<size_t>(inputs[0])]->value;
      const Tensor& K = t.nodes_[static_cast<size_t>(inputs[1])]->value;
      const Tensor& V = t.nodes_[static_cast<size_t>(inputs[2])]->value;
      Tensor& gq = t.grad_buf(inputs[0]);
      Tensor& gk = t.grad_buf(inputs[1]);
      Tensor& gv = t.grad_buf(inputs[2]);
      size_t nd = static_cast<size_t>(n) * dh;
      std::vector<double> qh(nd), kh(nd), vh(nd), doh(nd), dqh(nd), dkh(nd),
          dvh(nd);
      Tensor dp({n, n}), ds({n, n});
      for (int h = 0; h < heads; ++h) {
        int off = h * dh;
        slice_head(Q, qh.data(), n, dh, off);
        slice_head(K, kh.data(), n, dh, off);
        slice_head(V, vh.data(), n, dh, off);
        slice_head(grad, doh.data(), n, dh, off);
        const Tensor& p = probs[static_cast<size_t>(h)];
        // dV_h = P^T dO_h
        std::fill(dvh.begin(), dvh.end(), 0.0);
        gemm_tn(p.data(), doh.data(), dvh.data(), n, n, dh);
        // dP = dO_h V_h^T
        dp.fill(0.0);
        gemm_nt(doh.data(), vh.data(), dp.data(), n, dh, n);
        // dS = P .* (dP - rowsum(dP .* P)); masked entries have P == 0
        for (int i = 0; i < n; ++i) {
          const double* pi = p.row_ptr(i);
          const double* dpi = dp.row_ptr(i);
          double acc = 0;
          for (int j = 0; j < n; ++j) acc += dpi[j] * pi[j];
          double* dsi = ds.row_ptr(i);
          for (int j = 0; j < n; ++j) dsi[j] = pi[j] * (dpi[j] - acc);
        }
        // dQ_h = scale * dS K_h ; dK_h = scale * dS^T Q_h
        std::fill(dqh.begin(), dqh.end(), 0.0);
        gemm_nn(ds.data(), kh.data(), dqh.data(), n, n, dh);
        std::fill(dkh.begin(), dkh.end(), 0.0);
        gemm_tn(ds.data(), qh.data(), dkh.data(), n, n, dh);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < dh; ++j) {
            size_t idx = static_cast<size_t>(i) * dh + j;
            if (gq.numel()) gq.at(i, off + j) += scale * dqh[idx];
            if (gk.numel()) gk.at(i, off + j) += scale * dkh[idx];
            if (gv.numel()) gv.at(i, off + j) += dvh[idx];
          }
      }
    }
  };

  auto node_ptr = std::make_unique<AttentionNode>();
  AttentionNode& an = *node_ptr;
  an.heads = num_heads;
  an.n = n_pos;
  an.dh = dh;
  an.scale = scale;
  an.value = Tensor({n_pos, d_model});
  an.probs.reserve(static_cast<size_t>(num_heads));

  size_t nd = static_cast<size_t>(n_pos) * dh;
  std::vector<double> qh(nd), kh(nd), vh(nd), oh(nd);
  for (int h = 0; h < num_heads; ++h) {
    int off = h * dh;
    AttentionNode::slice_head(qv, qh.data(), n_pos, dh, off);
    AttentionNode::slice_head(kv, kh.data(), n_pos, dh, off);
    AttentionNode::slice_head(vv, vh.data(), n_pos, dh, off);
    Tensor scores({n_pos, n_pos});
    gemm_nt(qh.data(), kh.data(), scores.data(), n_pos, dh, n_pos);
    scores.scale_inplace(scale);
    Tensor p({n_pos, n_pos});
    for (int i = 0; i < n_pos; ++i) {
      double* srow = scores.row_ptr(i);
      if (causal)
        for (int j = i + 1; j < n_pos; ++j) srow[j] = -1e30;
      softmax_row(srow, p.row_ptr(i), n_pos);
    }
    std::fill(oh.begin(), oh.end(), 0.0);
    gemm_nn(p.data(), vh.data(), oh.data(), n_pos, n_pos, dh);
    for (int i = 0; i < n_pos; ++i)
      for (int j = 0; j < dh; ++j)
        an.value.at(i, off + j) = oh[static_cast<size_t>(i) * dh + j];
    an.probs.push_back(std::move(p));
  }
  an.inputs = {q.id, k.id, v.id};
  an.needs_grad =
      node(q).needs_grad || node(k).needs_grad || node(v).needs_grad;
  return {push(std::move(node_ptr))};
}

// --- cross entropy -------------------------------------------------------------

Value Tape::cross_entropy_with_logits(Value logits, int target) {
  const Tensor& lv = node(logits).value;
  if (lv.rank() != 1)
    shape_error("cross_entropy_with_logits", "logits must be 1-D");
  int k = static_cast<int>(lv.numel());
  if (target < 0 || target >= k)
    shape_error("cross_entropy_with_logits", "target out of range");
  struct CeNode : Node {
    Tensor p;
    int target = 0;
    void backward(Tape& t) override {
      Tensor& g = t.grad_buf(inputs[0]);
      if (!g.numel()) return;
      double go = grad[0];
      for (size_t i = 0; i < p.numel(); ++i) g[i] += go * p[i];
      g[static_cast<size_t>(target)] -= go;
    }
  };
  auto n = std::make_unique<CeNode>();
  n->target = target;
  n->p = Tensor({k});
  softmax_row(lv.data(), n->p.data(), k);
  double loss = -std::log(std::max(n->p[static_cast<size_t>(target)], 1e-300));
  n->value = Tensor::scalar(loss);
  n->inputs = {logits.id};
  n->needs_grad = node(logits).needs_grad;
  return {push(std::move(n))};
}

// --- backward -----------------------------------------------------------------

void Tape::backward(Value loss) {
  Node& ln = node(loss);
  if (ln.value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  for (auto& n : nodes_) {
    if (n->needs_grad) {
      n->grad = Tensor(n->value.shape());
    } else {
      n->grad = Tensor();
    }
  }
  ran_backward_ = true;
  if (!ln.needs_grad) return;  // loss independent of all parameters
  ln.grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = *nodes_[static_cast<size_t>(i)];
    if (n.needs_grad && n.grad.numel()) n.backward(*this);
  }
}

void Tape::backward_into(Value loss, ParameterStore& store) {
  backward(loss);
  for_each_param_grad([&store](const std::string& name, const Tensor& g) {
    store.accumulate_grad(name, g);
  });
}

void Tape::for_each_param_grad(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  if (!ran_backward_)
    throw std::logic_error("gradients requested before backward");
  for (const auto& n : nodes_) {
    if (!n->param_name.empty() && n->grad.numel()) fn(n->param_name, n->grad);
  }
}

// --- gradient check ---------------------------------------------------------

double grad_check(
    const std::function<Value(Tape&, ParameterStore&)>& build_loss,
    ParameterStore& store, double h, int max_coords_per_param, uint64_t seed) {
  if (h <= 0) throw std::invalid_argument("grad_check: h must be positive");
  std::unordered_map<std::string, Tensor> analytic;
  {
    Tape tape;
    Value loss = build_loss(tape, store);
    tape.backward(loss);
    tape.for_each_param_grad([&](const std::string& name, const Tensor& g) {
      auto it = analytic.find(name);
      if (it == analytic.end())
        analytic.emplace(name, g);
      else
        it->second.add_inplace(g);
    });
  }
  auto eval = [&]() {
    Tape tape;
    Value loss = build_loss(tape, store);
    return tape.val(loss)[0];
  };
  Rng rng(seed);
  double max_err = 0.0;
  for (const auto& name : store.names()) {
    auto it = analytic.find(name);
    if (it == analytic.end()) continue;  // parameter unused by this loss
    Tensor& value = store.value(name);
    const Tensor& g = it->second;
    size_t n = value.numel();
    std::vector<size_t> coords;
    if (max_coords_per_param <= 0 ||
        n <= static_cast<size_t>(max_coords_per_param)) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (int i = 0; i < max_coords_per_param; ++i)
        coords.push_back(rng.uniform_index(n));
    }
    for (size_t c : coords) {
      double orig = value[c];
      value[c] = orig + h;
      double up = eval();
      value[c] = orig - h;
      double down = eval();
      value[c] = orig;
      double fd = (up - down) / (2.0 * h);
      double err = std::abs(g[c] - fd) / std::max(1.0, std::abs(g[c]));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace rankstack::nn
