#include "pvpl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pvpl {

template <class T>
GradCheckResult grad_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& fn,
                           const BasicTensor<T>& point, double step, double tol) {
  BasicTensor<T> x(point.shape(), std::vector<T>(point.data().begin(), point.data().end()), true);
  BasicTensor<T> y = fn(x);
  if (y.size() != 1) throw DimensionError("grad_check: function must return a scalar");
  backward(y);
  std::vector<T> analytic(x.size(), T(0));
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  GradCheckResult res;
  std::vector<T> probe(point.data().begin(), point.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + static_cast<T>(step);
    const double fp = static_cast<double>(fn(BasicTensor<T>(point.shape(), probe)).item());
    probe[i] = orig - static_cast<T>(step);
    const double fm = static_cast<double>(fn(BasicTensor<T>(point.shape(), probe)).item());
    probe[i] = orig;
    const double num = (fp - fm) / (2.0 * step);
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8});
    if (err > res.max_rel_err) {
      res.max_rel_err = err;
      res.worst_index = i;
    }
  }
  res.passed = res.max_rel_err <= tol;
  return res;
}

template GradCheckResult grad_check<float>(
    const std::function<BasicTensor<float>(const BasicTensor<float>&)>&, const BasicTensor<float>&,
    double, double);
template GradCheckResult grad_check<double>(
    const std::function<BasicTensor<double>(const BasicTensor<double>&)>&,
    const BasicTensor<double>&, double, double);

BackwardFaultScope::BackwardFaultScope(double scale) : saved_(detail::backward_seed_scale()) {
  detail::backward_seed_scale() = scale;
}

BackwardFaultScope::~BackwardFaultScope() { detail::backward_seed_scale() = saved_; }

}  // namespace pvpl
