#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pegnn::ad {

/// Row-major so that one row is one graph element (node, edge, sample).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexList = std::vector<int>;

struct ParamSlot {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Flat parameter vector with a registry of named row-major tensors. Slots are
/// appended in order, so offsets never overlap and cover the vector exactly.
class ParamVector {
 public:
  std::size_t add(std::string name, int rows, int cols);

  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  const std::vector<ParamSlot>& slots() const { return slots_; }
  std::optional<std::size_t> find(std::string_view name) const;
  const ParamSlot& slot(std::string_view name) const;
  std::size_t slot_index(std::string_view name) const;

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  Eigen::Map<Matrix> view(std::size_t slot);
  Eigen::Map<const Matrix> view(std::size_t slot) const;
  Eigen::Map<Matrix> view(std::string_view name) { return view(slot_index(name)); }
  Eigen::Map<const Matrix> view(std::string_view name) const { return view(slot_index(name)); }

  /// Same registry, all values zero.
  ParamVector zeros_like() const;
  bool same_layout(const ParamVector& other) const;

 private:
  std::vector<ParamSlot> slots_;
  Eigen::VectorXd values_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode gradients: a ParamVector-shaped vector plus cotangents of
/// every tracked input leaf.
struct Gradients {
  ParamVector params;
  std::vector<std::pair<int, Matrix>> inputs;

  const Matrix& input(Var v) const;
};

/// Records primitive operations in execution order (hence topological order)
/// with the forward values required for the backward sweep. A Tape is
/// single-thread confined; independent evaluations use independent tapes.
class Tape {
 public:
  Tape() = default;
  explicit Tape(const ParamVector& params) : params_(&params) {}

  Var constant(Matrix value);
  Var input(Matrix value);
  Var param(std::size_t slot);
  Var param(std::string_view name);

  Var matmul(Var a, Var b);     // a * b
  Var matmul_bt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // element-wise
  Var scale(Var a, double c);
  Var add_row(Var a, Var row);  // adds a 1 x m row to every row of a
  Var mul_col(Var a, Var col);  // scales row i of a by col(i, 0)
  Var silu(Var a);
  /// Subgradient at exactly 0 is 0.
  Var abs(Var a);
  /// Gradient at exactly 0 is taken as 0.
  Var sqrt(Var a);
  Var square(Var a);
  Var gather_rows(Var a, std::shared_ptr<const IndexList> index);
  /// out.row(index[r]) += a.row(r), accumulated in ascending r.
  Var scatter_add_rows(Var a, std::shared_ptr<const IndexList> index, int n_rows);
  Var concat_cols(std::initializer_list<Var> parts);
  Var slice_rows(Var a, int start, int count);
  Var row_sum(Var a);  // n x m -> n x 1
  Var sum(Var a);      // -> 1 x 1

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  const ParamVector* params() const { return params_; }

  Gradients backward(Var output, const Matrix& cotangent) const;
  Gradients backward(std::span<const Var> outputs, std::span<const Matrix> cotangents) const;

 private:
  enum class Op {
    kConstant, kInput, kParam, kMatmul, kMatmulBt, kAdd, kSub, kMul, kScale, kAddRow, kMulCol,
    kSilu, kAbs, kSqrt, kSquare, kGather, kScatter, kConcat, kSliceRows, kRowSum, kSum,
  };

  struct Node {
    Node(Op o, Matrix v) : op(o), value(std::move(v)) {}
    Op op;
    Matrix value;
    int a = -1;
    int b = -1;
    double c = 0.0;
    int aux = 0;
    bool needs_grad = false;
    std::shared_ptr<const IndexList> index;
    std::vector<int> parts;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void check(bool ok, const char* primitive, const std::string& detail) const;

  const ParamVector* params_ = nullptr;
  std::vector<Node> nodes_;
};

enum class ProbeKind { kCoordinate, kDirection };

struct FdReport {
  double max_relative_error = 0.0;
  std::vector<double> relative_errors;
};

/// Loss value and reverse-mode gradient at the given parameters.
using LossAndGrad = std::function<std::pair<double, ParamVector>(const ParamVector&)>;

/// Central differences along `n_probes` random probes (random coordinate axes
/// or random unit directions), compared with the reverse-mode directional
/// derivative. Probes are restricted to `slots` when non-empty. A probe whose
/// two derivatives are both below `abs_floor` has error 0.
FdReport finite_difference_check(const LossAndGrad& loss, const ParamVector& params, double eps,
                                 int n_probes, std::uint64_t seed,
                                 ProbeKind kind = ProbeKind::kCoordinate,
                                 const std::vector<std::size_t>& slots = {},
                                 double abs_floor = 1e-13);

}  // namespace pegnn::ad
