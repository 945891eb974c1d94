#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <vector>

#include "elastic_dml/dml.hpp"
#include "elastic_dml/econ.hpp"
#include "elastic_dml/eval.hpp"
#include "elastic_dml/panel_io.hpp"
#include "elastic_dml/parallel.hpp"
#include "elastic_dml/sim.hpp"

using namespace elastic_dml;

namespace {

Panel panel_with(int threads) {
  set_workers(threads);
  SimConfig c;
  c.n_articles = 40;
  c.n_weeks = 60;
  return simulate_policy(c, Exec::parallel);
}

}  // namespace

TEST_CASE("worker count resolution") {
  unsetenv("ELASTIC_DML_WORKERS");
  set_workers(3);
  CHECK(workers() == 3);
  setenv("ELASTIC_DML_WORKERS", "2", 1);
  CHECK(workers() == 2);
  setenv("ELASTIC_DML_WORKERS", "zero", 1);
  CHECK(workers() == 3);
  unsetenv("ELASTIC_DML_WORKERS");
  set_workers(0);
  CHECK(workers() >= 1);
}

TEST_CASE("kernels give identical bits at any thread count") {
  unsetenv("ELASTIC_DML_WORKERS");
  const Panel serial = [] {
    SimConfig c;
    c.n_articles = 40;
    c.n_weeks = 60;
    return simulate_policy(c, Exec::serial);
  }();
  for (int threads : {1, 2, 4}) CHECK(panel_csv(panel_with(threads)) == panel_csv(serial));

  const auto fit_serial = econ::twfe_poisson_fit(serial, 10, 50, {}, Exec::serial);
  for (int threads : {2, 4}) {
    set_workers(threads);
    const auto fit = econ::twfe_poisson_fit(serial, 10, 50, {}, Exec::parallel);
    CHECK(fit.fit.epsilon == fit_serial.fit.epsilon);
    CHECK(fit.fit.unit_effects == fit_serial.fit.unit_effects);
  }

  dml::DmlConfig c;
  c.features = FeatureSpec::for_panel(serial, 8, 3);
  c.hidden_dims = {8};
  c.effect_hidden_dims = {8};
  c.outcome_train.epochs = 2;
  c.treatment_train.epochs = 2;
  c.effect_train.epochs = 2;
  set_workers(1);
  const dml::DmlModel m = dml::fit(serial, {10, 40}, c, dml::Variant::dml);
  dml::ForecastRequest r;
  r.origin = 45;
  r.horizon = 3;
  const auto ref = dml::predict(m, serial, r, Exec::serial);
  for (int threads : {2, 4}) {
    set_workers(threads);
    CHECK((dml::predict(m, serial, r, Exec::parallel).q_hat.array() == ref.q_hat.array()).all());
  }

  eval::ProtocolConfig pc;
  pc.train_windows = {{10, 30}, {20, 40}};
  pc.n_seeds = 2;
  pc.models = {eval::ModelKind::sdml, eval::ModelKind::twfe};
  pc.model = c;
  set_workers(1);
  const auto report = eval::run_protocol(serial, pc, Exec::serial);
  for (const auto& row : report.rows) CHECK(row.status != eval::Status::failed);
  const std::string one = eval::metrics_csv(report.rows);
  set_workers(3);
  CHECK(eval::metrics_csv(eval::run_protocol(serial, pc, Exec::parallel).rows) == one);
  set_workers(0);
}
