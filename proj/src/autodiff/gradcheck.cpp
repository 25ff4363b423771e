#include "densedet/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "densedet/error.hpp"

namespace densedet::ad {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

namespace {

double eval_scalar(const Tensor& t, const char* what) {
  if (t.numel() != 1) fail(ErrorCode::kShapeMismatch, std::string(what) + ": f must be scalar");
  const double v = t.item();
  if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, std::string(what) + ": f is not finite");
  return v;
}

std::vector<std::size_t> coords(std::size_t n, std::size_t max) {
  std::vector<std::size_t> out;
  if (max == 0 || max >= n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  const double stride = static_cast<double>(n) / static_cast<double>(max);
  for (std::size_t i = 0; i < max; ++i) out.push_back(static_cast<std::size_t>(i * stride));
  return out;
}

void record(GradCheckResult& r, const std::string& var, std::size_t idx, double a, double n) {
  ++r.coords_checked;
  const double e = relative_error(a, n);
  if (r.coords_checked == 1 || e > r.max_rel_error) {
    r.max_rel_error = e;
    r.worst_variable = var;
    r.worst_index = idx;
    r.analytic_at_worst = a;
    r.numeric_at_worst = n;
  }
}

}  // namespace

GradCheckResult grad_check(const InputFn& f, const Shape& shape, const std::vector<double>& x0,
                           const GradCheckOptions& opt) {
  std::vector<double> analytic;
  {
    Tape tape;
    const auto x = tape.leaf(shape, x0);
    const auto y = f(tape, x);
    eval_scalar(y, "grad_check");
    tape.backward(y);
    analytic.assign(x.grad().begin(), x.grad().end());
    if (analytic.empty()) analytic.assign(x0.size(), 0.0);
  }
  const auto probe = [&](const std::vector<double>& xs) {
    Tape tape;
    tape.set_grad_enabled(false);
    return eval_scalar(f(tape, Tensor::constant(shape, xs)), "grad_check");
  };
  GradCheckResult result;
  auto xs = x0;
  for (auto i : coords(x0.size(), opt.max_coords_per_var)) {
    xs[i] = x0[i] + opt.step;
    const double fp = probe(xs);
    xs[i] = x0[i] - opt.step;
    const double fm = probe(xs);
    xs[i] = x0[i];
    record(result, "input", i, analytic[i], (fp - fm) / (2.0 * opt.step));
  }
  return result;
}

GradCheckResult grad_check_params(const ParamFn& f, ParamStore& store,
                                  const GradCheckOptions& opt) {
  // Snapshot every array (buffers included) so that side effects of the
  // forward pass, e.g. running statistics, do not leak between probes.
  std::vector<std::vector<double>> snapshot;
  for (auto* p : store.all()) snapshot.push_back(p->value);
  const auto restore = [&] {
    for (std::size_t i = 0; i < store.all().size(); ++i) store.all()[i]->value = snapshot[i];
  };

  store.zero_grad();
  {
    Tape tape;
    const auto y = f(tape);
    eval_scalar(y, "grad_check");
    tape.backward(y);
  }
  restore();
  std::vector<std::vector<double>> analytic;
  for (auto* p : store.all()) analytic.push_back(p->grad);

  const auto probe = [&] {
    Tape tape;
    tape.set_grad_enabled(false);
    const double v = eval_scalar(f(tape), "grad_check");
    return v;
  };
  GradCheckResult result;
  for (std::size_t pi = 0; pi < store.all().size(); ++pi) {
    auto* p = store.all()[pi];
    if (!p->trainable) continue;
    for (auto i : coords(p->value.size(), opt.max_coords_per_var)) {
      const double orig = snapshot[pi][i];
      restore();
      p->value[i] = orig + opt.step;
      const double fp = probe();
      restore();
      p->value[i] = orig - opt.step;
      const double fm = probe();
      restore();
      record(result, p->name, i, analytic[pi][i], (fp - fm) / (2.0 * opt.step));
    }
  }
  return result;
}

}  // namespace densedet::ad
