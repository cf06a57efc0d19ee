#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tapd/numkit/tensor.hpp"

namespace tapd::numkit {

enum class Primitive {
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kConcat,
  kSlice,
  kReshape,
  kRelu,
  kTanh,
  kAbs,
  kSoftmax,
  kMean,
  kSum,
  kMax,
  kCumsum,
  kGatherRows,
  kAttention,
  kLayerNorm,
  kSmoothL1,
  kCrossEntropy,
};

std::string_view primitive_name(Primitive op);
// Throws ValueError for names that are not a known primitive.
Primitive primitive_from_name(std::string_view name);

// Per-op attributes. Only the fields an op documents are read.
struct OpAttrs {
  int axis = -1;               // concat, slice, softmax, mean/sum/max, cumsum
  std::size_t begin = 0;       // slice
  std::size_t end = 0;         // slice (exclusive)
  double scalar = 0.0;         // scale factor, layer-norm eps
  Shape shape;                 // reshape target
  std::vector<std::size_t> indices;  // gather rows, cross-entropy targets
  bool reduce_all = true;      // mean/sum over every element
  bool reverse = false;        // cumsum from the end of the axis
};

/// Persistent trainable array owned by a ParamStore.
struct Param {
  std::string name;
  Tensor value;
  std::vector<double> grad;  // empty until a backward pass reaches it

  bool has_grad() const { return !grad.empty(); }
  void zero_grad();
};

/// Ordered owner of parameters. Addresses stay stable for the store's
/// lifetime, including across moves.
class ParamStore {
 public:
  Param& add(std::string name, Tensor value);
  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;

  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const;
  Param& at(std::size_t i) { return *params_[i]; }
  const Param& at(std::size_t i) const { return *params_[i]; }

  std::vector<Param*> all();
  std::vector<Param*> with_grad();
  void zero_grad();
  void clear_grad();

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records primitive applications in execution order and replays them in
/// reverse to accumulate gradients.
///
/// A node requires grad when any of its inputs does. Detached nodes are
/// constants that copy their source's value, so gradient flow stops there.
/// A tape built with `grad_enabled = false` never marks anything as
/// requiring grad and is meant for inference.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad);
  // Leaf bound to `p`; repeated calls return the same node.
  Var param(Param& p);
  Var detach(Var v);

  Var apply(Primitive op, std::span<const Var> inputs, const OpAttrs& attrs = {});

  // Reverse pass from a scalar. Param leaves accumulate into Param::grad;
  // every requires-grad leaf on the tape ends with a (possibly zero) grad.
  void backward(Var loss);

  // Gradient of a node after backward; zeros when none reached it.
  std::vector<double> grad(Var v) const;

  const Tensor& value(int id) const;
  bool requires_grad(int id) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Primitive op = Primitive::kAdd;
    bool leaf = false;
    bool requires_grad = false;
    std::vector<int> inputs;
    OpAttrs attrs;
    Tensor value;
    const Tensor* external = nullptr;  // param leaves view the param value
    Param* param = nullptr;
    std::vector<double> aux;
    std::vector<std::size_t> iaux;
    std::vector<double> grad;
  };

  int push(Node node);
  void accumulate(int id, std::span<const double> g);
  std::vector<double>& grad_buffer(int id);
  void backward_node(Node& node);

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int> param_nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

// Thin wrappers over Tape::apply; all operands must live on the same tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var concat(std::span<const Var> parts, int axis);
Var slice(Var a, int axis, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);
Var relu(Var a);
Var tanh(Var a);
Var abs(Var a);
Var softmax(Var a, int axis);
Var mean(Var a);
Var mean(Var a, int axis);
Var sum(Var a);
Var sum(Var a, int axis);
Var max(Var a, int axis);
Var cumsum(Var a, int axis, bool reverse = false);  // reverse: suffix sums
Var gather_rows(Var a, std::vector<std::size_t> rows);
Var attention(Var q, Var k, Var v);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Mean Huber loss with transition at |d| = 1.
Var smooth_l1_loss(Var pred, Var target);
// logits (K) or (R, K); one target per row; mean over rows.
Var cross_entropy_loss(Var logits, std::vector<std::size_t> targets);
Var cross_entropy_loss(Var logits, std::size_t target);
// Mean elementwise |a - b|.
Var l1_mean(Var a, Var b);

}  // namespace tapd::numkit
