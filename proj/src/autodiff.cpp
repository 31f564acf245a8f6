#include "pegnn/autodiff.hpp"

#include <cmath>
#include <sstream>

#include "pegnn/errors.hpp"
#include "pegnn/rng.hpp"

namespace pegnn::ad {

// ParamVector ----------------------------------------------------------------

std::size_t ParamVector::add(std::string name, int rows, int cols) {
  if (rows < 0 || cols < 0) throw ShapeError("ParamVector::add: negative shape for " + name);
  if (find(name)) throw ShapeError("ParamVector::add: duplicate parameter " + name);
  ParamSlot s{std::move(name), rows, cols, size()};
  const auto old = values_.size();
  Eigen::VectorXd grown = Eigen::VectorXd::Zero(old + static_cast<Eigen::Index>(s.size()));
  grown.head(old) = values_;
  values_ = std::move(grown);
  slots_.push_back(std::move(s));
  return slots_.size() - 1;
}

std::optional<std::size_t> ParamVector::find(std::string_view name) const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamVector::slot_index(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ShapeError("unknown parameter '" + std::string(name) + "'");
  return *i;
}

const ParamSlot& ParamVector::slot(std::string_view name) const { return slots_[slot_index(name)]; }

Eigen::Map<Matrix> ParamVector::view(std::size_t slot) {
  const auto& s = slots_.at(slot);
  return {values_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Matrix> ParamVector::view(std::size_t slot) const {
  const auto& s = slots_.at(slot);
  return {values_.data() + s.offset, s.rows, s.cols};
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out;
  out.slots_ = slots_;
  out.values_ = Eigen::VectorXd::Zero(values_.size());
  return out;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (slots_.size() != other.slots_.size()) return false;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const auto& a = slots_[i];
    const auto& b = other.slots_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset) return false;
  }
  return true;
}

const Matrix& Gradients::input(Var v) const {
  for (const auto& [id, g] : inputs) {
    if (id == v.id) return g;
  }
  throw ShapeError("Gradients::input: variable is not a tracked input");
}

// Tape: forward ----------------------------------------------------------------

void Tape::check(bool ok, const char* primitive, const std::string& detail) const {
  if (!ok) throw ShapeError(std::string("shape mismatch in ") + primitive + ": " + detail);
}

namespace {

// Forward products use a fixed per-row accumulation order so that a row of the
// result never depends on how many other rows share the call. This keeps
// batched and single-graph forwards bit-identical.
void rowwise_matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  const Eigen::Index n = a.rows(), k = a.cols(), m = b.cols();
  out.setZero(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    double* __restrict o = out.data() + i * m;
    const double* ar = a.data() + i * k;
    for (Eigen::Index p = 0; p < k; ++p) {
      const double s = ar[p];
      const double* __restrict br = b.data() + p * m;
      for (Eigen::Index j = 0; j < m; ++j) o[j] += s * br[j];
    }
  }
}

void rowwise_matmul_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  const Eigen::Index n = a.rows(), k = a.cols(), m = b.rows();
  out.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* ar = a.data() + i * k;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double* br = b.data() + j * k;
      double acc = 0.0;
      for (Eigen::Index p = 0; p < k; ++p) acc += ar[p] * br[p];
      out(i, j) = acc;
    }
  }
}

std::string shape(const Matrix& m) {
  std::ostringstream s;
  s << m.rows() << "x" << m.cols();
  return s.str();
}

std::string shapes(const Matrix& a, const Matrix& b) { return shape(a) + " vs " + shape(b); }

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ShapeError("invalid tape variable");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Node n) {
  if (n.a >= 0) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(n.a)].needs_grad;
  if (n.b >= 0) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(n.b)].needs_grad;
  for (int p : n.parts) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(p)].needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) {
  Node n{Op::kConstant, std::move(value)};
  return push(std::move(n));
}

Var Tape::input(Matrix value) {
  Node n{Op::kInput, std::move(value)};
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::param(std::size_t slot) {
  if (!params_) throw ShapeError("Tape::param: tape has no parameter vector");
  Node n{Op::kParam, params_->view(slot)};
  n.aux = static_cast<int>(slot);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::param(std::string_view name) {
  if (!params_) throw ShapeError("Tape::param: tape has no parameter vector");
  return param(params_->slot_index(name));
}

Var Tape::matmul(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  check(A.cols() == B.rows(), "matmul", shapes(A, B));
  Node n{Op::kMatmul, Matrix(A.rows(), B.cols())};
  rowwise_matmul(A, B, n.value);
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Tape::matmul_bt(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  check(A.cols() == B.cols(), "matmul_bt", shapes(A, B));
  Node n{Op::kMatmulBt, Matrix(A.rows(), B.rows())};
  rowwise_matmul_bt(A, B, n.value);
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  check(A.rows() == B.rows() && A.cols() == B.cols(), "add", shapes(A, B));
  Node n{Op::kAdd, A + B};
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  check(A.rows() == B.rows() && A.cols() == B.cols(), "sub", shapes(A, B));
  Node n{Op::kSub, A - B};
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  check(A.rows() == B.rows() && A.cols() == B.cols(), "mul", shapes(A, B));
  Node n{Op::kMul, A.cwiseProduct(B)};
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  Node n{Op::kScale, c * node(a).value};
  n.a = a.id;
  n.c = c;
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
  const auto& A = node(a).value;
  const auto& R = node(row).value;
  check(R.rows() == 1 && R.cols() == A.cols(), "add_row", shapes(A, R));
  Node n{Op::kAddRow, A};
  n.value.rowwise() += R.row(0);
  n.a = a.id;
  n.b = row.id;
  return push(std::move(n));
}

Var Tape::mul_col(Var a, Var col) {
  const auto& A = node(a).value;
  const auto& C = node(col).value;
  check(C.cols() == 1 && C.rows() == A.rows(), "mul_col", shapes(A, C));
  Node n{Op::kMulCol, A};
  for (Eigen::Index r = 0; r < A.rows(); ++r) n.value.row(r) *= C(r, 0);
  n.a = a.id;
  n.b = col.id;
  return push(std::move(n));
}

Var Tape::silu(Var a) {
  const auto& A = node(a).value;
  Node n{Op::kSilu, A.unaryExpr([](double x) { return x / (1.0 + std::exp(-x)); })};
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::abs(Var a) {
  Node n{Op::kAbs, node(a).value.cwiseAbs()};
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::sqrt(Var a) {
  const auto& A = node(a).value;
  check((A.array() >= 0.0).all(), "sqrt", "negative argument");
  Node n{Op::kSqrt, A.unaryExpr([](double x) { return std::sqrt(x); })};
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::square(Var a) {
  Node n{Op::kSquare, node(a).value.cwiseAbs2()};
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::shared_ptr<const IndexList> index) {
  const auto& A = node(a).value;
  const auto& idx = *index;
  Node n{Op::kGather, Matrix(static_cast<Eigen::Index>(idx.size()), A.cols())};
  for (std::size_t r = 0; r < idx.size(); ++r) {
    check(idx[r] >= 0 && idx[r] < A.rows(), "gather_rows", "index out of range");
    n.value.row(static_cast<Eigen::Index>(r)) = A.row(idx[r]);
  }
  n.a = a.id;
  n.index = std::move(index);
  return push(std::move(n));
}

Var Tape::scatter_add_rows(Var a, std::shared_ptr<const IndexList> index, int n_rows) {
  const auto& A = node(a).value;
  const auto& idx = *index;
  check(static_cast<Eigen::Index>(idx.size()) == A.rows(), "scatter_add_rows",
        "index length " + std::to_string(idx.size()) + " vs " + shape(A));
  Node n{Op::kScatter, Matrix::Zero(n_rows, A.cols())};
  for (std::size_t r = 0; r < idx.size(); ++r) {
    check(idx[r] >= 0 && idx[r] < n_rows, "scatter_add_rows", "index out of range");
    n.value.row(idx[r]) += A.row(static_cast<Eigen::Index>(r));
  }
  n.a = a.id;
  n.aux = n_rows;
  n.index = std::move(index);
  return push(std::move(n));
}

Var Tape::concat_cols(std::initializer_list<Var> parts) {
  check(parts.size() > 0, "concat_cols", "no inputs");
  const Eigen::Index rows = node(*parts.begin()).value.rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    check(node(p).value.rows() == rows, "concat_cols", "row counts differ");
    cols += node(p).value.cols();
  }
  Node n{Op::kConcat, Matrix(rows, cols)};
  Eigen::Index c = 0;
  for (Var p : parts) {
    const auto& P = node(p).value;
    n.value.middleCols(c, P.cols()) = P;
    c += P.cols();
    n.parts.push_back(p.id);
  }
  return push(std::move(n));
}

Var Tape::slice_rows(Var a, int start, int count) {
  const auto& A = node(a).value;
  check(start >= 0 && count >= 0 && start + count <= A.rows(), "slice_rows",
        "rows [" + std::to_string(start) + ", " + std::to_string(start + count) + ") of " + shape(A));
  Node n{Op::kSliceRows, A.middleRows(start, count)};
  n.a = a.id;
  n.aux = start;
  return push(std::move(n));
}

Var Tape::row_sum(Var a) {
  Node n{Op::kRowSum, node(a).value.rowwise().sum()};
  n.a = a.id;
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n{Op::kSum, Matrix::Constant(1, 1, node(a).value.sum())};
  n.a = a.id;
  return push(std::move(n));
}

double Tape::scalar(Var v) const {
  const auto& m = node(v).value;
  check(m.rows() == 1 && m.cols() == 1, "scalar", shape(m));
  return m(0, 0);
}

// Tape: backward ---------------------------------------------------------------

Gradients Tape::backward(Var output, const Matrix& cotangent) const {
  return backward(std::span<const Var>(&output, 1), std::span<const Matrix>(&cotangent, 1));
}

Gradients Tape::backward(std::span<const Var> outputs, std::span<const Matrix> cotangents) const {
  check(outputs.size() == cotangents.size(), "backward", "outputs and cotangents differ in count");
  std::vector<Matrix> adj(nodes_.size());
  auto accumulate = [&](int id, const auto& expr) {
    auto& slot = adj[static_cast<std::size_t>(id)];
    if (!nodes_[static_cast<std::size_t>(id)].needs_grad) return;
    if (slot.size() == 0) {
      slot = expr;
    } else {
      slot += expr;
    }
  };

  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const auto& v = node(outputs[k]).value;
    check(v.rows() == cotangents[k].rows() && v.cols() == cotangents[k].cols(), "backward",
          "cotangent " + shape(cotangents[k]) + " for output " + shape(v));
    accumulate(outputs[k].id, cotangents[k]);
  }

  Gradients grads;
  grads.params = params_ ? params_->zeros_like() : ParamVector{};

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    Matrix& g = adj[static_cast<std::size_t>(id)];
    if (!n.needs_grad || g.size() == 0) continue;
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kInput:
        grads.inputs.emplace_back(id, g);
        break;
      case Op::kParam: {
        auto view = grads.params.view(static_cast<std::size_t>(n.aux));
        view += g;
        break;
      }
      case Op::kMatmul: {
        const auto& A = nodes_[static_cast<std::size_t>(n.a)].value;
        const auto& B = nodes_[static_cast<std::size_t>(n.b)].value;
        if (nodes_[static_cast<std::size_t>(n.a)].needs_grad) {
          Matrix da(A.rows(), A.cols());
          da.noalias() = g * B.transpose();
          accumulate(n.a, da);
        }
        if (nodes_[static_cast<std::size_t>(n.b)].needs_grad) {
          Matrix db(B.rows(), B.cols());
          db.noalias() = A.transpose() * g;
          accumulate(n.b, db);
        }
        break;
      }
      case Op::kMatmulBt: {
        const auto& A = nodes_[static_cast<std::size_t>(n.a)].value;
        const auto& B = nodes_[static_cast<std::size_t>(n.b)].value;
        if (nodes_[static_cast<std::size_t>(n.a)].needs_grad) {
          Matrix da(A.rows(), A.cols());
          da.noalias() = g * B;
          accumulate(n.a, da);
        }
        if (nodes_[static_cast<std::size_t>(n.b)].needs_grad) {
          Matrix db(B.rows(), B.cols());
          db.noalias() = g.transpose() * A;
          accumulate(n.b, db);
        }
        break;
      }
      case Op::kAdd:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::kSub:
        accumulate(n.a, g);
        accumulate(n.b, -g);
        break;
      case Op::kMul:
        accumulate(n.a, g.cwiseProduct(nodes_[static_cast<std::size_t>(n.b)].value));
        accumulate(n.b, g.cwiseProduct(nodes_[static_cast<std::size_t>(n.a)].value));
        break;
      case Op::kScale:
        accumulate(n.a, n.c * g);
        break;
      case Op::kAddRow:
        accumulate(n.a, g);
        accumulate(n.b, g.colwise().sum());
        break;
      case Op::kMulCol: {
        const auto& A = nodes_[static_cast<std::size_t>(n.a)].value;
        const auto& C = nodes_[static_cast<std::size_t>(n.b)].value;
        if (nodes_[static_cast<std::size_t>(n.a)].needs_grad) {
          Matrix da = g;
          for (Eigen::Index r = 0; r < da.rows(); ++r) da.row(r) *= C(r, 0);
          accumulate(n.a, da);
        }
        accumulate(n.b, g.cwiseProduct(A).rowwise().sum());
        break;
      }
      case Op::kSilu: {
        const auto& X = nodes_[static_cast<std::size_t>(n.a)].value;
        Matrix d = X.unaryExpr([](double x) {
          const double s = 1.0 / (1.0 + std::exp(-x));
          return s * (1.0 + x * (1.0 - s));
        });
        accumulate(n.a, g.cwiseProduct(d));
        break;
      }
      case Op::kAbs: {
        const auto& X = nodes_[static_cast<std::size_t>(n.a)].value;
        Matrix s = X.unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
        accumulate(n.a, g.cwiseProduct(s));
        break;
      }
      case Op::kSqrt: {
        Matrix d = n.value.unaryExpr([](double y) { return y > 0.0 ? 0.5 / y : 0.0; });
        accumulate(n.a, g.cwiseProduct(d));
        break;
      }
      case Op::kSquare:
        accumulate(n.a, 2.0 * g.cwiseProduct(nodes_[static_cast<std::size_t>(n.a)].value));
        break;
      case Op::kGather: {
        const auto& A = nodes_[static_cast<std::size_t>(n.a)].value;
        Matrix da = Matrix::Zero(A.rows(), A.cols());
        const auto& idx = *n.index;
        for (std::size_t r = 0; r < idx.size(); ++r) da.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
        accumulate(n.a, da);
        break;
      }
      case Op::kScatter: {
        const auto& idx = *n.index;
        Matrix da(static_cast<Eigen::Index>(idx.size()), g.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) da.row(static_cast<Eigen::Index>(r)) = g.row(idx[r]);
        accumulate(n.a, da);
        break;
      }
      case Op::kConcat: {
        Eigen::Index c = 0;
        for (int p : n.parts) {
          const auto cols = nodes_[static_cast<std::size_t>(p)].value.cols();
          accumulate(p, g.middleCols(c, cols));
          c += cols;
        }
        break;
      }
      case Op::kSliceRows: {
        const auto& A = nodes_[static_cast<std::size_t>(n.a)].value;
        if (!nodes_[static_cast<std::size_t>(n.a)].needs_grad) break;
        Matrix& slot = adj[static_cast<std::size_t>(n.a)];
        if (slot.size() == 0) slot = Matrix::Zero(A.rows(), A.cols());
        slot.middleRows(n.aux, g.rows()) += g;
        break;
      }
      case Op::kRowSum: {
        const auto& A = nodes_[static_cast<std::size_t>(n.a)].value;
        Matrix da(A.rows(), A.cols());
        for (Eigen::Index r = 0; r < A.rows(); ++r) da.row(r).setConstant(g(r, 0));
        accumulate(n.a, da);
        break;
      }
      case Op::kSum: {
        const auto& A = nodes_[static_cast<std::size_t>(n.a)].value;
        accumulate(n.a, Matrix::Constant(A.rows(), A.cols(), g(0, 0)));
        break;
      }
    }
  }
  return grads;
}

// Finite differences -------------------------------------------------------------

FdReport finite_difference_check(const LossAndGrad& loss, const ParamVector& params, double eps,
                                 int n_probes, std::uint64_t seed, ProbeKind kind,
                                 const std::vector<std::size_t>& slots, double abs_floor) {
  if (!(eps > 0.0)) throw ShapeError("finite_difference_check: eps must be > 0");
  const auto [base_loss, grad] = loss(params);
  (void)base_loss;

  std::vector<std::size_t> coords;
  if (slots.empty()) {
    coords.resize(params.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  } else {
    for (auto s : slots) {
      const auto& sl = params.slots().at(s);
      for (std::size_t i = 0; i < sl.size(); ++i) coords.push_back(sl.offset + i);
    }
  }

  FdReport report;
  if (coords.empty()) return report;
  Rng rng = make_rng(derive_seed(seed, Stream::kProbe));
  for (int p = 0; p < n_probes; ++p) {
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
    if (kind == ProbeKind::kCoordinate) {
      dir[static_cast<Eigen::Index>(coords[rng() % coords.size()])] = 1.0;
    } else {
      for (auto c : coords) dir[static_cast<Eigen::Index>(c)] = standard_normal(rng);
      dir /= dir.norm();
    }
    ParamVector plus = params;
    ParamVector minus = params;
    plus.values() += eps * dir;
    minus.values() -= eps * dir;
    const double fd = (loss(plus).first - loss(minus).first) / (2.0 * eps);
    const double ad = grad.values().dot(dir);
    const double scale = std::max(std::abs(fd), std::abs(ad));
    const double err = scale < abs_floor ? 0.0 : std::abs(fd - ad) / scale;
    report.relative_errors.push_back(err);
    report.max_relative_error = std::max(report.max_relative_error, err);
  }
  return report;
}

}  // namespace pegnn::ad
