#include "tapd/numkit/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "tapd/error.hpp"

namespace tapd::numkit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap cmap(std::span<const double> d, std::size_t rows, std::size_t cols) {
  return CMap(d.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MMap mmap(std::span<double> d, std::size_t rows, std::size_t cols) {
  return MMap(d.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

constexpr std::array<std::string_view, 21> kNames = {
    "matmul", "add",     "sub",  "mul",     "scale",  "concat",      "slice",
    "reshape", "relu",   "tanh", "abs",     "softmax", "mean",       "sum",
    "max",    "cumsum",  "gather_rows", "attention", "layer_norm", "smooth_l1",
    "cross_entropy"};

[[noreturn]] void shape_fail(Primitive op, const std::string& what) {
  throw ShapeError(std::string(primitive_name(op)) + ": " + what);
}

std::size_t norm_axis(Primitive op, int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) shape_fail(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// outer x len x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out.push_back(s[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// b broadcasts onto a when it matches a's shape, is a single element, or
// equals a's trailing dimensions.
void check_broadcast(Primitive op, const Shape& a, const Shape& b) {
  if (a == b) return;
  if (shape_size(b) == 1) return;
  if (b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<long>(b.size()))) return;
  shape_fail(op, "cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

}  // namespace

std::string_view primitive_name(Primitive op) { return kNames[static_cast<std::size_t>(op)]; }

Primitive primitive_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<Primitive>(i);
  }
  throw ValueError("unknown primitive '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Param / ParamStore

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

Param& ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ValueError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  auto p = std::make_unique<Param>();
  p->name = std::move(name);
  p->value = std::move(value);
  params_.push_back(std::move(p));
  return *params_.back();
}

Param* ParamStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Param* ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Param*> ParamStore::with_grad() {
  std::vector<Param*> out;
  for (auto& p : params_) {
    if (p->has_grad()) out.push_back(p.get());
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void ParamStore::clear_grad() {
  for (auto& p : params_) p->grad.clear();
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Tape::Tape(bool grad_enabled) : grad_enabled_(grad_enabled) { nodes_.reserve(256); }

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  return n.external ? *n.external : n.value;
}

bool Tape::requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

int Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.leaf = true;
  n.value = std::move(value);
  return {this, push(std::move(n))};
}

Var Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.leaf = true;
  n.requires_grad = requires_grad && grad_enabled_;
  n.value = std::move(value);
  return {this, push(std::move(n))};
}

Var Tape::param(Param& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.leaf = true;
  n.requires_grad = grad_enabled_;
  n.external = &p.value;
  n.param = &p;
  const int id = push(std::move(n));
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Tape::detach(Var v) {
  if (v.tape() != this) throw ValueError("detach: variable belongs to another tape");
  return constant(v.value());
}

std::vector<double>& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Tape::accumulate(int id, std::span<const double> g) {
  if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
  auto& buf = grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (n.grad.empty()) return std::vector<double>(value(v.id()).size(), 0.0);
  return n.grad;
}

Var Tape::apply(Primitive op, std::span<const Var> inputs, const OpAttrs& attrs) {
  for (const Var& v : inputs) {
    if (v.tape() != this) shape_fail(op, "operand recorded on a different tape");
  }
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) shape_fail(op, "expects " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
  };
  auto val = [&](std::size_t i) -> const Tensor& { return value(inputs[i].id()); };

  Node node;
  node.op = op;
  node.attrs = attrs;
  for (const Var& v : inputs) {
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || requires_grad(v.id());
  }

  Shape out_shape;
  std::vector<double> out;

  switch (op) {
    case Primitive::kMatmul: {
      need(2);
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      if (a.rank() != 2 || b.rank() != 2) shape_fail(op, "operands must be 2-D, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
      if (a.dim(1) != b.dim(0)) shape_fail(op, "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
      out_shape = {a.dim(0), b.dim(1)};
      out.assign(a.dim(0) * b.dim(1), 0.0);
      mmap(out, a.dim(0), b.dim(1)).noalias() = cmap(a.data(), a.dim(0), a.dim(1)) * cmap(b.data(), b.dim(0), b.dim(1));
      break;
    }
    case Primitive::kAdd:
    case Primitive::kSub:
    case Primitive::kMul: {
      need(2);
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      check_broadcast(op, a.shape(), b.shape());
      out_shape = a.shape();
      out.resize(a.size());
      const std::size_t bn = b.size();
      const auto ad = a.data();
      const auto bd = b.data();
      if (op == Primitive::kAdd) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i % bn];
      } else if (op == Primitive::kSub) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i % bn];
      } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % bn];
      }
      break;
    }
    case Primitive::kScale: {
      need(1);
      out_shape = val(0).shape();
      out.resize(val(0).size());
      const auto ad = val(0).data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * attrs.scalar;
      break;
    }
    case Primitive::kConcat: {
      if (inputs.empty()) shape_fail(op, "no inputs");
      const Shape& s0 = val(0).shape();
      const std::size_t axis = norm_axis(op, attrs.axis, s0.size());
      std::size_t total = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Shape& si = val(i).shape();
        if (si.size() != s0.size()) shape_fail(op, "rank mismatch " + shape_str(s0) + " vs " + shape_str(si));
        for (std::size_t d = 0; d < s0.size(); ++d) {
          if (d != axis && si[d] != s0[d]) {
            shape_fail(op, "dimension " + std::to_string(d) + " differs: " + shape_str(s0) + " vs " + shape_str(si));
          }
        }
        total += si[axis];
      }
      out_shape = s0;
      out_shape[axis] = total;
      const AxisSplit so = split(out_shape, axis);
      out.resize(shape_size(out_shape));
      std::size_t offset = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const AxisSplit si = split(val(i).shape(), axis);
        const auto d = val(i).data();
        const std::size_t chunk = si.len * si.inner;
        for (std::size_t o = 0; o < so.outer; ++o) {
          std::copy_n(d.data() + o * chunk, chunk, out.data() + o * so.len * so.inner + offset * so.inner);
        }
        offset += si.len;
      }
      node.attrs.axis = static_cast<int>(axis);
      break;
    }
    case Primitive::kSlice: {
      need(1);
      const Tensor& a = val(0);
      const std::size_t axis = norm_axis(op, attrs.axis, a.rank());
      if (attrs.begin >= attrs.end || attrs.end > a.dim(axis)) {
        shape_fail(op, "range [" + std::to_string(attrs.begin) + "," + std::to_string(attrs.end) + ") invalid for dimension " +
                           std::to_string(a.dim(axis)));
      }
      out_shape = a.shape();
      out_shape[axis] = attrs.end - attrs.begin;
      const AxisSplit sa = split(a.shape(), axis);
      const std::size_t chunk = (attrs.end - attrs.begin) * sa.inner;
      out.resize(sa.outer * chunk);
      for (std::size_t o = 0; o < sa.outer; ++o) {
        std::copy_n(a.data().data() + o * sa.len * sa.inner + attrs.begin * sa.inner, chunk, out.data() + o * chunk);
      }
      node.attrs.axis = static_cast<int>(axis);
      break;
    }
    case Primitive::kReshape: {
      need(1);
      for (std::size_t d : attrs.shape) {
        if (d == 0) shape_fail(op, "zero dimension in target " + shape_str(attrs.shape));
      }
      if (attrs.shape.empty() || shape_size(attrs.shape) != val(0).size()) {
        shape_fail(op, "cannot reshape " + shape_str(val(0).shape()) + " to " + shape_str(attrs.shape));
      }
      out_shape = attrs.shape;
      out = val(0).vec();
      break;
    }
    case Primitive::kRelu:
    case Primitive::kTanh:
    case Primitive::kAbs: {
      need(1);
      out_shape = val(0).shape();
      const auto ad = val(0).data();
      out.resize(ad.size());
      if (op == Primitive::kRelu) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
      } else if (op == Primitive::kTanh) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(ad[i]);
      } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(ad[i]);
      }
      break;
    }
    case Primitive::kSoftmax: {
      need(1);
      const Tensor& a = val(0);
      const std::size_t axis = norm_axis(op, attrs.axis, a.rank());
      const AxisSplit s = split(a.shape(), axis);
      out_shape = a.shape();
      out.resize(a.size());
      const auto ad = a.data();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
          const std::size_t base = o * s.len * s.inner + j;
          double m = ad[base];
          for (std::size_t i = 1; i < s.len; ++i) m = std::max(m, ad[base + i * s.inner]);
          double z = 0.0;
          for (std::size_t i = 0; i < s.len; ++i) {
            const double e = std::exp(ad[base + i * s.inner] - m);
            out[base + i * s.inner] = e;
            z += e;
          }
          for (std::size_t i = 0; i < s.len; ++i) out[base + i * s.inner] /= z;
        }
      }
      node.attrs.axis = static_cast<int>(axis);
      break;
    }
    case Primitive::kMean:
    case Primitive::kSum:
    case Primitive::kMax: {
      need(1);
      const Tensor& a = val(0);
      const auto ad = a.data();
      if (op != Primitive::kMax && attrs.reduce_all) {
        double acc = 0.0;
        for (double x : ad) acc += x;
        if (op == Primitive::kMean) acc /= static_cast<double>(ad.size());
        out_shape = {1};
        out = {acc};
        break;
      }
      const std::size_t axis = norm_axis(op, attrs.axis, a.rank());
      const AxisSplit s = split(a.shape(), axis);
      out_shape = drop_axis(a.shape(), axis);
      out.assign(s.outer * s.inner, 0.0);
      if (op == Primitive::kMax) node.iaux.assign(out.size(), 0);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
          const std::size_t base = o * s.len * s.inner + j;
          const std::size_t oi = o * s.inner + j;
          if (op == Primitive::kMax) {
            double m = ad[base];
            std::size_t arg = 0;
            for (std::size_t i = 1; i < s.len; ++i) {
              if (ad[base + i * s.inner] > m) {
                m = ad[base + i * s.inner];
                arg = i;
              }
            }
            out[oi] = m;
            node.iaux[oi] = arg;
          } else {
            double acc = 0.0;
            for (std::size_t i = 0; i < s.len; ++i) acc += ad[base + i * s.inner];
            out[oi] = op == Primitive::kMean ? acc / static_cast<double>(s.len) : acc;
          }
        }
      }
      node.attrs.axis = static_cast<int>(axis);
      node.attrs.reduce_all = false;
      break;
    }
    case Primitive::kCumsum: {
      need(1);
      const Tensor& a = val(0);
      const std::size_t axis = norm_axis(op, attrs.axis, a.rank());
      const AxisSplit s = split(a.shape(), axis);
      out_shape = a.shape();
      out = a.vec();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t k = 1; k < s.len; ++k) {
          const std::size_t i = attrs.reverse ? s.len - 1 - k : k;
          const std::size_t prev_i = attrs.reverse ? i + 1 : i - 1;
          double* cur = out.data() + o * s.len * s.inner + i * s.inner;
          const double* prev = out.data() + o * s.len * s.inner + prev_i * s.inner;
          for (std::size_t j = 0; j < s.inner; ++j) cur[j] += prev[j];
        }
      }
      node.attrs.axis = static_cast<int>(axis);
      break;
    }
    case Primitive::kGatherRows: {
      need(1);
      const Tensor& a = val(0);
      if (attrs.indices.empty()) shape_fail(op, "empty row list");
      const std::size_t rows = a.dim(0);
      const std::size_t width = a.size() / rows;
      for (std::size_t r : attrs.indices) {
        if (r >= rows) throw ValueError("gather_rows: row " + std::to_string(r) + " out of range for " + std::to_string(rows) + " rows");
      }
      out_shape = a.shape();
      out_shape[0] = attrs.indices.size();
      out.resize(attrs.indices.size() * width);
      for (std::size_t i = 0; i < attrs.indices.size(); ++i) {
        std::copy_n(a.data().data() + attrs.indices[i] * width, width, out.data() + i * width);
      }
      break;
    }
    case Primitive::kAttention: {
      need(3);
      const Tensor& q = val(0);
      const Tensor& k = val(1);
      const Tensor& v = val(2);
      if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) shape_fail(op, "q, k, v must be 2-D");
      if (q.dim(1) != k.dim(1)) shape_fail(op, "query width " + std::to_string(q.dim(1)) + " != key width " + std::to_string(k.dim(1)));
      if (k.dim(0) != v.dim(0)) shape_fail(op, "key rows " + std::to_string(k.dim(0)) + " != value rows " + std::to_string(v.dim(0)));
      const std::size_t n = q.dim(0), m = k.dim(0), dv = v.dim(1);
      const double sc = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
      node.aux.assign(n * m, 0.0);
      auto P = mmap(node.aux, n, m);
      P.noalias() = sc * cmap(q.data(), n, q.dim(1)) * cmap(k.data(), m, k.dim(1)).transpose();
      for (Eigen::Index r = 0; r < P.rows(); ++r) {
        const double mx = P.row(r).maxCoeff();
        P.row(r) = (P.row(r).array() - mx).exp();
        P.row(r) /= P.row(r).sum();
      }
      out_shape = {n, dv};
      out.assign(n * dv, 0.0);
      mmap(out, n, dv).noalias() = P * cmap(v.data(), m, dv);
      node.attrs.scalar = sc;
      break;
    }
    case Primitive::kLayerNorm: {
      need(3);
      const Tensor& x = val(0);
      const Tensor& g = val(1);
      const Tensor& b = val(2);
      const double eps = attrs.scalar;
      if (!(eps > 0.0)) throw ValueError("layer_norm: eps must be positive");
      const std::size_t c = x.shape().back();
      if (g.size() != c || b.size() != c) {
        shape_fail(op, "gamma/beta length " + std::to_string(g.size()) + "/" + std::to_string(b.size()) + " != last dimension " +
                           std::to_string(c));
      }
      const std::size_t rows = x.size() / c;
      out_shape = x.shape();
      out.resize(x.size());
      node.aux.resize(x.size() + rows);
      const auto xd = x.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        node.aux[x.size() + r] = inv;
        for (std::size_t j = 0; j < c; ++j) {
          const double xh = (xr[j] - mu) * inv;
          node.aux[r * c + j] = xh;
          out[r * c + j] = xh * g[j] + b[j];
        }
      }
      break;
    }
    case Primitive::kSmoothL1: {
      need(2);
      const Tensor& p = val(0);
      const Tensor& t = val(1);
      if (p.shape() != t.shape()) shape_fail(op, "pred " + shape_str(p.shape()) + " vs target " + shape_str(t.shape()));
      double acc = 0.0;
      node.aux.resize(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        node.aux[i] = d;
        const double ad = std::fabs(d);
        acc += ad < 1.0 ? 0.5 * d * d : ad - 0.5;
      }
      out_shape = {1};
      out = {acc / static_cast<double>(p.size())};
      break;
    }
    case Primitive::kCrossEntropy: {
      need(1);
      const Tensor& x = val(0);
      if (x.rank() > 2) shape_fail(op, "logits must be (K) or (R,K), got " + shape_str(x.shape()));
      const std::size_t k = x.shape().back();
      const std::size_t rows = x.size() / k;
      if (attrs.indices.size() != rows) {
        shape_fail(op, std::to_string(attrs.indices.size()) + " targets for " + std::to_string(rows) + " rows");
      }
      node.aux.resize(x.size());
      double acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t t = attrs.indices[r];
        if (t >= k) throw ValueError("cross_entropy: target " + std::to_string(t) + " out of range for " + std::to_string(k) + " classes");
        const double* xr = x.data().data() + r * k;
        double m = xr[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, xr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(xr[j] - m);
        const double lse = m + std::log(z);
        for (std::size_t j = 0; j < k; ++j) node.aux[r * k + j] = std::exp(xr[j] - lse);
        acc += lse - xr[t];
      }
      out_shape = {1};
      out = {acc / static_cast<double>(rows)};
      break;
    }
  }

  node.value = Tensor::raw(std::move(out_shape), std::move(out));
#ifndef NDEBUG
  if (!node.value.all_finite()) throw ValueError(std::string(primitive_name(op)) + ": produced non-finite output");
#endif
  return {this, push(std::move(node))};
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ValueError("backward: loss recorded on another tape");
  if (consumed_) throw ValueError("backward: tape already consumed");
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  consumed_ = true;

  if (requires_grad(loss.id())) grad_buffer(loss.id())[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.leaf) continue;
    backward_node(n);
    // Interior grads are not needed after propagation.
    if (id != loss.id()) std::vector<double>().swap(n.grad);
  }
  for (Node& n : nodes_) {
    if (!n.leaf || !n.requires_grad) continue;
    if (n.grad.empty()) n.grad.assign(value(static_cast<int>(&n - nodes_.data())).size(), 0.0);
    if (n.param) {
      auto& pg = n.param->grad;
      if (pg.empty()) pg.assign(n.grad.size(), 0.0);
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

void Tape::backward_node(Node& node) {
  // No nodes are pushed during the reverse pass, so references stay valid.
  const std::vector<double>& g = node.grad;
  const std::vector<int>& in = node.inputs;
  const OpAttrs& at = node.attrs;
  auto needs = [&](std::size_t i) { return nodes_[static_cast<std::size_t>(in[i])].requires_grad; };
  auto ival = [&](std::size_t i) -> const Tensor& { return value(in[i]); };

  switch (node.op) {
    case Primitive::kMatmul: {
      const Tensor& a = ival(0);
      const Tensor& b = ival(1);
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      const auto G = cmap(g, m, n);
      if (needs(0)) {
        auto& ga = grad_buffer(in[0]);
        mmap(ga, m, k).noalias() += G * cmap(b.data(), k, n).transpose();
      }
      if (needs(1)) {
        auto& gb = grad_buffer(in[1]);
        mmap(gb, k, n).noalias() += cmap(a.data(), m, k).transpose() * G;
      }
      break;
    }
    case Primitive::kAdd:
    case Primitive::kSub:
    case Primitive::kMul: {
      const Tensor& a = ival(0);
      const Tensor& b = ival(1);
      const std::size_t bn = b.size();
      if (needs(0)) {
        auto& ga = grad_buffer(in[0]);
        if (node.op == Primitive::kMul) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i % bn];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (needs(1)) {
        auto& gb = grad_buffer(in[1]);
        if (node.op == Primitive::kMul) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % bn] += g[i] * a[i];
        } else {
          const double sgn = node.op == Primitive::kSub ? -1.0 : 1.0;
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % bn] += sgn * g[i];
        }
      }
      break;
    }
    case Primitive::kScale: {
      if (!needs(0)) break;
      auto& ga = grad_buffer(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * at.scalar;
      break;
    }
    case Primitive::kConcat: {
      const std::size_t axis = static_cast<std::size_t>(at.axis);
      const AxisSplit so = split(node.value.shape(), axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        const AxisSplit si = split(ival(i).shape(), axis);
        if (needs(i)) {
          auto& gi = grad_buffer(in[i]);
          const std::size_t chunk = si.len * si.inner;
          for (std::size_t o = 0; o < so.outer; ++o) {
            const double* src = g.data() + o * so.len * so.inner + offset * so.inner;
            double* dst = gi.data() + o * chunk;
            for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
          }
        }
        offset += si.len;
      }
      break;
    }
    case Primitive::kSlice: {
      if (!needs(0)) break;
      const AxisSplit sa = split(ival(0).shape(), static_cast<std::size_t>(at.axis));
      const std::size_t chunk = (at.end - at.begin) * sa.inner;
      auto& ga = grad_buffer(in[0]);
      for (std::size_t o = 0; o < sa.outer; ++o) {
        double* dst = ga.data() + o * sa.len * sa.inner + at.begin * sa.inner;
        const double* src = g.data() + o * chunk;
        for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
      }
      break;
    }
    case Primitive::kReshape: {
      if (needs(0)) accumulate(in[0], g);
      break;
    }
    case Primitive::kRelu:
    case Primitive::kTanh:
    case Primitive::kAbs: {
      if (!needs(0)) break;
      const auto x = ival(0).data();
      auto& ga = grad_buffer(in[0]);
      if (node.op == Primitive::kRelu) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
      } else if (node.op == Primitive::kTanh) {
        const auto y = node.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
      }
      break;
    }
    case Primitive::kSoftmax: {
      if (!needs(0)) break;
      const AxisSplit s = split(node.value.shape(), static_cast<std::size_t>(at.axis));
      const auto y = node.value.data();
      auto& ga = grad_buffer(in[0]);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
          const std::size_t base = o * s.len * s.inner + j;
          double dot = 0.0;
          for (std::size_t i = 0; i < s.len; ++i) dot += g[base + i * s.inner] * y[base + i * s.inner];
          for (std::size_t i = 0; i < s.len; ++i) {
            const std::size_t idx = base + i * s.inner;
            ga[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
      break;
    }
    case Primitive::kMean:
    case Primitive::kSum:
    case Primitive::kMax: {
      if (!needs(0)) break;
      auto& ga = grad_buffer(in[0]);
      if (node.op != Primitive::kMax && at.reduce_all) {
        const double v = node.op == Primitive::kMean ? g[0] / static_cast<double>(ga.size()) : g[0];
        for (double& x : ga) x += v;
        break;
      }
      const AxisSplit s = split(ival(0).shape(), static_cast<std::size_t>(at.axis));
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
          const std::size_t base = o * s.len * s.inner + j;
          const std::size_t oi = o * s.inner + j;
          if (node.op == Primitive::kMax) {
            ga[base + node.iaux[oi] * s.inner] += g[oi];
          } else {
            const double v = node.op == Primitive::kMean ? g[oi] / static_cast<double>(s.len) : g[oi];
            for (std::size_t i = 0; i < s.len; ++i) ga[base + i * s.inner] += v;
          }
        }
      }
      break;
    }
    case Primitive::kCumsum: {
      if (!needs(0)) break;
      const AxisSplit s = split(node.value.shape(), static_cast<std::size_t>(at.axis));
      auto& ga = grad_buffer(in[0]);
      std::vector<double> run(s.inner);
      for (std::size_t o = 0; o < s.outer; ++o) {
        std::fill(run.begin(), run.end(), 0.0);
        for (std::size_t k = s.len; k-- > 0;) {
          const std::size_t i = at.reverse ? s.len - 1 - k : k;
          const std::size_t base = o * s.len * s.inner + i * s.inner;
          for (std::size_t j = 0; j < s.inner; ++j) {
            run[j] += g[base + j];
            ga[base + j] += run[j];
          }
        }
      }
      break;
    }
    case Primitive::kGatherRows: {
      if (!needs(0)) break;
      const Tensor& a = ival(0);
      const std::size_t width = a.size() / a.dim(0);
      auto& ga = grad_buffer(in[0]);
      for (std::size_t i = 0; i < at.indices.size(); ++i) {
        double* dst = ga.data() + at.indices[i] * width;
        const double* src = g.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
      break;
    }
    case Primitive::kAttention: {
      const Tensor& q = ival(0);
      const Tensor& k = ival(1);
      const Tensor& v = ival(2);
      const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1), dv = v.dim(1);
      const auto P = cmap(node.aux, n, m);
      const auto G = cmap(g, n, dv);
      if (needs(2)) {
        auto& gv = grad_buffer(in[2]);
        mmap(gv, m, dv).noalias() += P.transpose() * G;
      }
      if (!needs(0) && !needs(1)) break;
      RowMat dP = G * cmap(v.data(), m, dv).transpose();
      RowMat dS(n, m);
      for (Eigen::Index r = 0; r < dS.rows(); ++r) {
        const double dot = dP.row(r).dot(P.row(r));
        dS.row(r) = P.row(r).array() * (dP.row(r).array() - dot);
      }
      dS *= at.scalar;
      if (needs(0)) {
        auto& gq = grad_buffer(in[0]);
        mmap(gq, n, d).noalias() += dS * cmap(k.data(), m, d);
      }
      if (needs(1)) {
        auto& gk = grad_buffer(in[1]);
        mmap(gk, m, d).noalias() += dS.transpose() * cmap(q.data(), n, d);
      }
      break;
    }
    case Primitive::kLayerNorm: {
      const Tensor& x = ival(0);
      const Tensor& gam = ival(1);
      const std::size_t c = x.shape().back();
      const std::size_t rows = x.size() / c;
      const double* xh = node.aux.data();
      const double* inv = node.aux.data() + x.size();
      if (needs(1)) {
        auto& gg = grad_buffer(in[1]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xh[r * c + j];
      }
      if (needs(2)) {
        auto& gb = grad_buffer(in[2]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
      }
      if (needs(0)) {
        auto& gx = grad_buffer(in[0]);
        std::vector<double> dxh(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            dxh[j] = g[r * c + j] * gam[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[r * c + j];
          }
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += inv[r] * (dxh[j] - m1 - xh[r * c + j] * m2);
        }
      }
      break;
    }
    case Primitive::kSmoothL1: {
      const double s = g[0] / static_cast<double>(node.aux.size());
      std::vector<double> d(node.aux.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = s * std::clamp(node.aux[i], -1.0, 1.0);
      if (needs(0)) accumulate(in[0], d);
      if (needs(1)) {
        for (double& x : d) x = -x;
        accumulate(in[1], d);
      }
      break;
    }
    case Primitive::kCrossEntropy: {
      if (!needs(0)) break;
      const std::size_t k = ival(0).shape().back();
      const std::size_t rows = ival(0).size() / k;
      const double s = g[0] / static_cast<double>(rows);
      auto& gx = grad_buffer(in[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
          const double onehot = j == at.indices[r] ? 1.0 : 0.0;
          gx[r * k + j] += s * (node.aux[r * k + j] - onehot);
        }
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Wrappers

namespace {

Var apply1(Primitive op, Var a, const OpAttrs& at = {}) {
  const std::array<Var, 1> in{a};
  return a.tape()->apply(op, in, at);
}

Var apply2(Primitive op, Var a, Var b, const OpAttrs& at = {}) {
  const std::array<Var, 2> in{a, b};
  return a.tape()->apply(op, in, at);
}

}  // namespace

Var matmul(Var a, Var b) { return apply2(Primitive::kMatmul, a, b); }
Var add(Var a, Var b) { return apply2(Primitive::kAdd, a, b); }
Var sub(Var a, Var b) { return apply2(Primitive::kSub, a, b); }
Var mul(Var a, Var b) { return apply2(Primitive::kMul, a, b); }

Var scale(Var a, double factor) {
  OpAttrs at;
  at.scalar = factor;
  return apply1(Primitive::kScale, a, at);
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  OpAttrs at;
  at.axis = axis;
  return parts.front().tape()->apply(Primitive::kConcat, parts, at);
}

Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
  OpAttrs at;
  at.axis = axis;
  at.begin = begin;
  at.end = end;
  return apply1(Primitive::kSlice, a, at);
}

Var reshape(Var a, Shape shape) {
  OpAttrs at;
  at.shape = std::move(shape);
  return apply1(Primitive::kReshape, a, at);
}

Var relu(Var a) { return apply1(Primitive::kRelu, a); }
Var tanh(Var a) { return apply1(Primitive::kTanh, a); }
Var abs(Var a) { return apply1(Primitive::kAbs, a); }

Var softmax(Var a, int axis) {
  OpAttrs at;
  at.axis = axis;
  return apply1(Primitive::kSoftmax, a, at);
}

Var mean(Var a) { return apply1(Primitive::kMean, a); }
Var sum(Var a) { return apply1(Primitive::kSum, a); }

Var mean(Var a, int axis) {
  OpAttrs at;
  at.axis = axis;
  at.reduce_all = false;
  return apply1(Primitive::kMean, a, at);
}

Var sum(Var a, int axis) {
  OpAttrs at;
  at.axis = axis;
  at.reduce_all = false;
  return apply1(Primitive::kSum, a, at);
}

Var max(Var a, int axis) {
  OpAttrs at;
  at.axis = axis;
  at.reduce_all = false;
  return apply1(Primitive::kMax, a, at);
}

Var cumsum(Var a, int axis, bool reverse) {
  OpAttrs at;
  at.axis = axis;
  at.reverse = reverse;
  return apply1(Primitive::kCumsum, a, at);
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  OpAttrs at;
  at.indices = std::move(rows);
  return apply1(Primitive::kGatherRows, a, at);
}

Var attention(Var q, Var k, Var v) {
  const std::array<Var, 3> in{q, k, v};
  return q.tape()->apply(Primitive::kAttention, in);
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  OpAttrs at;
  at.scalar = eps;
  const std::array<Var, 3> in{x, gamma, beta};
  return x.tape()->apply(Primitive::kLayerNorm, in, at);
}

Var smooth_l1_loss(Var pred, Var target) { return apply2(Primitive::kSmoothL1, pred, target); }

Var cross_entropy_loss(Var logits, std::vector<std::size_t> targets) {
  OpAttrs at;
  at.indices = std::move(targets);
  return apply1(Primitive::kCrossEntropy, logits, at);
}

Var cross_entropy_loss(Var logits, std::size_t target) {
  return cross_entropy_loss(logits, std::vector<std::size_t>{target});
}

Var l1_mean(Var a, Var b) {
  if (a.shape() != b.shape()) throw ShapeError("l1_mean: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(abs(sub(a, b)));
}

}  // namespace tapd::numkit
