#pragma once

#include <cstddef>
#include <functional>

#include "pvpl/tensor.hpp"

namespace pvpl {

struct GradCheckResult {
  bool passed = false;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
};

/// Compare the reverse-mode gradient of `fn` at `point` with central
/// differences of the given step. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8); the check passes iff the maximum is <= tol.
///
/// Instantiated for float and double. Central differences at step 1e-3 carry
/// roughly 1e-4 relative rounding noise in float, so tight checks should run
/// in double.
template <class T>
GradCheckResult grad_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& fn,
                           const BasicTensor<T>& point, double step = 1e-3, double tol = 1e-4);

/// While alive, every backward pass on this thread scales its seed gradient.
/// Used to confirm that grad_check rejects a corrupted backward.
class BackwardFaultScope {
 public:
  explicit BackwardFaultScope(double scale);
  ~BackwardFaultScope();
  BackwardFaultScope(const BackwardFaultScope&) = delete;
  BackwardFaultScope& operator=(const BackwardFaultScope&) = delete;

 private:
  double saved_;
};

}  // namespace pvpl
