#ifndef WIDTHRED_CORE_HPP
#define WIDTHRED_CORE_HPP

#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace widthred {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

enum class ErrorKind {
  DimensionMismatch,
  RankDeficient,
  InvalidParameter,
  MissingConstant,
  UnsupportedOrder,
  EmptyVector,
  Infeasible,
  TheoryViolation,
  OracleFailure,
  OutOfDomain,
  InfeasibleAugmented,
  ParseError,
  DimensionError,
  NonConverged,
  Usage,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::InvalidParameter: return "InvalidParameter";
    case ErrorKind::MissingConstant: return "MissingConstant";
    case ErrorKind::UnsupportedOrder: return "UnsupportedOrder";
    case ErrorKind::EmptyVector: return "EmptyVector";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::TheoryViolation: return "TheoryViolation";
    case ErrorKind::OracleFailure: return "OracleFailure";
    case ErrorKind::OutOfDomain: return "OutOfDomain";
    case ErrorKind::InfeasibleAugmented: return "InfeasibleAugmented";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DimensionError: return "DimensionError";
    case ErrorKind::NonConverged: return "NonConverged";
    case ErrorKind::Usage: return "Usage";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// min over A x = b of sum_i f((P x)_i). The loss travels separately so the
/// solvers can be instantiated per loss type.
struct ProblemInstance {
  Matrix A;  // d x n
  Vector b;  // d
  Matrix P;  // m x n

  Index n() const { return P.cols(); }
  Index m() const { return P.rows(); }
  Index d() const { return A.rows(); }
};

inline void require_consistent(const ProblemInstance& inst) {
  if (inst.A.cols() != inst.P.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "cols(A) = " + std::to_string(inst.A.cols()) +
                                                  " but cols(P) = " + std::to_string(inst.P.cols()));
  }
  if (inst.A.rows() != inst.b.size()) {
    throw Error(ErrorKind::DimensionMismatch, "rows(A) must equal len(b)");
  }
  if (inst.P.rows() == 0) throw Error(ErrorKind::DimensionMismatch, "P has no rows");
}

/// [P; -P], used to express sum_i e^{|Px|_i / nu}-style objectives with a
/// one-sided loss.
inline Matrix stack_symmetric(const Matrix& P) {
  Matrix Q(2 * P.rows(), P.cols());
  Q.topRows(P.rows()) = P;
  Q.bottomRows(P.rows()) = -P;
  return Q;
}

}  // namespace widthred

#endif  // WIDTHRED_CORE_HPP
