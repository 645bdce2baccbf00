#include "slitflow/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "slitflow/cinn.hpp"
#include "slitflow/cvae.hpp"
#include "slitflow/forward_net.hpp"
#include "slitflow/optics.hpp"
#include "slitflow/rng.hpp"
#include "slitflow/standardize.hpp"

namespace slitflow {

GradCheckResult check_gradients(const std::string& name, ParamStore& store,
                                const std::function<Var(Tape&)>& taped,
                                const std::function<double()>& plain, double eps, double tol) {
  store.zero_grads();
  {
    Tape tape(&store);
    tape.backward(taped(tape));
  }
  // Snapshot the analytic gradients before finite differences mutate values.
  std::vector<Matrix> analytic;
  analytic.reserve(static_cast<std::size_t>(store.size()));
  for (Index p = 0; p < store.size(); ++p) analytic.push_back(store.grad(p));

  GradCheckResult result;
  result.name = name;
  for (Index p = 0; p < store.size(); ++p) {
    Matrix& value = store.value(p);
    for (Index r = 0; r < value.rows(); ++r) {
      for (Index c = 0; c < value.cols(); ++c) {
        const double original = value(r, c);
        value(r, c) = original + eps;
        const double up = plain();
        value(r, c) = original - eps;
        const double down = plain();
        value(r, c) = original;
        const double fd = (up - down) / (2.0 * eps);
        const double an = analytic[static_cast<std::size_t>(p)](r, c);
        const double rel =
            std::abs(fd - an) / std::max(std::max(std::abs(fd), std::abs(an)), 1e-6);
        result.scalars_checked += 1;
        if (rel > result.max_rel_err) {
          result.max_rel_err = rel;
          result.worst_param = store.name(p) + "(" + std::to_string(r) + "," +
                               std::to_string(c) + ")";
        }
      }
    }
  }
  store.zero_grads();
  result.pass = result.max_rel_err < tol;
  return result;
}

namespace {

OpticsConfig tiny_optics() {
  OpticsConfig cfg;
  cfg.grid_points = 8;
  return cfg;
}

Matrix random_matrix(Index rows, Index cols, Rng& rng, double lo, double hi) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  }
  return m;
}

Matrix normal_matrix(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  }
  return m;
}

Standardizer identityish_standardizer(Index dims, Rng& rng) {
  // a small random fit so normalization statistics are nontrivial
  return Standardizer::fit(random_matrix(16, dims, rng, -1.0, 1.0));
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed) {
  std::vector<GradCheckResult> results;
  const OpticsConfig optics = tiny_optics();
  const Index m = optics.grid_points;
  const Index batch = 5;

  {
    Rng rng(Rng::fold(seed, 1));
    ForwardConfig fc;
    fc.hidden_width = 16;
    fc.hidden_layers = 3;
    ForwardNet net = ForwardNet::create(fc, optics, identityish_standardizer(4, rng),
                                        Rng::fold(seed, 11));
    const Matrix x = normal_matrix(batch, 4, rng);
    const Matrix y = random_matrix(batch, m, rng, 0.0, 1.0);
    results.push_back(check_gradients(
        "forward-mse", net.params, [&](Tape& tape) { return net.loss(tape, x, y); },
        [&] { return net.loss_plain(x, y); }));
  }

  {
    Rng rng(Rng::fold(seed, 2));
    CvaeConfig cc;
    cc.spectrum_size = m;
    cc.hidden_width = 12;
    cc.hidden_layers = 2;
    CvaeModel model =
        CvaeModel::create(cc, optics, identityish_standardizer(4, rng),
                          identityish_standardizer(m, rng), Rng::fold(seed, 12));
    const Matrix x = normal_matrix(batch, 4, rng);
    const Matrix y = normal_matrix(batch, m, rng);
    const Matrix eps = normal_matrix(batch, 4, rng);
    results.push_back(check_gradients(
        "cvae-elbo", model.params,
        [&](Tape& tape) { return model.loss(tape, x, y, eps); },
        [&] { return model.loss_plain(x, y, eps); }));
  }

  {
    Rng rng(Rng::fold(seed, 3));
    FlowConfig fc;
    fc.spectrum_size = m;
    fc.cond_dim = 6;
    fc.num_blocks = 3;
    fc.subnet_hidden = 10;
    fc.cond_hidden = {10};
    fc.identity_init = false;  // random output layers make the check nontrivial
    FlowModel model =
        FlowModel::create(fc, optics, identityish_standardizer(4, rng),
                          identityish_standardizer(m, rng), Rng::fold(seed, 13));
    const Matrix x = normal_matrix(batch, 4, rng);
    const Matrix y = normal_matrix(batch, m, rng);
    results.push_back(check_gradients(
        "cinn-nll", model.params, [&](Tape& tape) { return model.loss(tape, x, y); },
        [&] { return model.loss_plain(x, y); }));
  }

  return results;
}

}  // namespace slitflow
