#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <stdexcept>

#include "ddlp/energy.hpp"
#include "ddlp/simulator.hpp"

using namespace ddlp;

namespace {

SimConfig toy(Policy policy) {
  SimConfig cfg;
  cfg.spec.n_samples = 1000;
  cfg.spec.batch_size = 1;
  cfg.spec.height = cfg.spec.width = 8;
  cfg.profile = DeviceProfile{250000, 1000000, 125000};
  cfg.policy = policy;
  return cfg;
}

}  // namespace

TEST_CASE("per-batch energy is power times busy time over batches") {
  PowerModel one_proc;  // 5 W x 1 process
  CHECK(energy_per_batch(3.527, 0.0, one_proc, 1) == doctest::Approx(17.635));
  CHECK(energy_per_batch(0.0, 10.014, one_proc, 1) == doctest::Approx(2.5035));

  PowerModel parallel = one_proc;
  parallel.n_processes = 17;  // 85 W total
  CHECK(energy_per_batch(1.779, 0.0, parallel, 1) == doctest::Approx(151.215));

  CHECK(energy_per_batch(0.0, 0.0, one_proc, 5) == 0.0);
  CHECK_THROWS_AS(energy_per_batch(1.0, 1.0, one_proc, 0), std::domain_error);
  CHECK_THROWS_AS(energy_per_batch(-1.0, 0.0, one_proc, 1), std::invalid_argument);

  PowerModel bad;
  bad.p_csd = -0.1;
  CHECK_THROWS_AS(energy_per_batch(1.0, 1.0, bad, 1), std::invalid_argument);
  PowerModel zero_procs;
  zero_procs.n_processes = 0;
  CHECK_THROWS_AS(zero_procs.validate(), std::invalid_argument);
}

TEST_CASE("electricity cost follows the kwh tariff") {
  // 1,281,167 images at batch 256 -> 5005 batches/epoch, 100 epochs
  CHECK(electricity_cost(17.635, 5005, 100, 0.095) == doctest::Approx(0.2329).epsilon(0.005));
  // batch 512 -> 2503 batches/epoch
  CHECK(electricity_cost(42.68, 2503, 100, 0.095) == doctest::Approx(0.2819).epsilon(0.005));
  CHECK(electricity_cost(42.68, 2503, 0, 0.095) == 0.0);
  CHECK(electricity_cost(1.0, 3600000, 1, 1.0) == doctest::Approx(1.0));  // 1 J x 3.6e6 = 1 kWh
}

TEST_CASE("energy and cost scale linearly") {
  PowerModel pm;
  pm.n_processes = 3;
  const double base = energy_per_batch(7.0, 11.0, pm, 10);
  CHECK(energy_per_batch(14.0, 22.0, pm, 10) == doctest::Approx(2.0 * base));
  CHECK(electricity_cost(base, 100, 10, 0.19) ==
        doctest::Approx(2.0 * electricity_cost(base, 100, 10, 0.095)));
}

TEST_CASE("host usage counts only cpu-path intervals") {
  SimResult cpu = simulate(toy(Policy::CpuOnly));
  CHECK(host_usage_per_batch(cpu.trace) == doctest::Approx(0.25));

  SimResult csd = simulate(toy(Policy::CsdOnly));
  CHECK(host_usage_per_batch(csd.trace) == 0.0);

  SimResult mte = simulate(toy(Policy::Mte));
  CHECK(host_usage_per_batch(mte.trace) == doctest::Approx(0.2));  // 800 x 0.25 / 1000

  SimResult wrr = simulate(toy(Policy::Wrr));
  CHECK(host_usage_per_batch(wrr.trace) == doctest::Approx(778 * 0.25 / 1000.0));

  CHECK(host_usage_per_batch(Trace{}) == 0.0);
}

TEST_CASE("offloading at least one batch strictly lowers host usage") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<Micros> ms(1, 30);
  std::uniform_int_distribution<std::uint64_t> n_dist(2, 150);
  for (int i = 0; i < 40; ++i) {
    SimConfig cfg = toy(Policy::Mte);
    cfg.spec.n_samples = n_dist(rng);
    cfg.profile = DeviceProfile{ms(rng) * 1000, ms(rng) * 1000, ms(rng) * 1000};
    SimResult mte = simulate(cfg);
    cfg.policy = Policy::CpuOnly;
    SimResult cpu = simulate(cfg);
    CAPTURE(i);
    if (mte.report.n_csd_trained >= 1)
      CHECK(host_usage_per_batch(mte.trace) < host_usage_per_batch(cpu.trace));
    else
      CHECK(host_usage_per_batch(mte.trace) == doctest::Approx(host_usage_per_batch(cpu.trace)));
  }
}

TEST_CASE("report energy reconstructs from the raw trace") {
  PowerModel pm;
  for (Policy p : {Policy::CpuOnly, Policy::CsdOnly, Policy::Mte, Policy::Wrr}) {
    CAPTURE(to_string(p));
    SimResult r = simulate(toy(p));
    const double from_report = energy_per_batch(r.report, pm);
    const double from_trace = energy_per_batch(r.trace, pm);
    CHECK(from_trace == doctest::Approx(from_report).epsilon(1e-9));
  }
}

TEST_CASE("finalize_energy fills every derived field") {
  PowerModel pm;
  SimResult r = simulate(toy(Policy::CpuOnly));
  finalize_energy(r.report, r.trace, pm);
  // 1000 batches x 0.25 s at 5 W -> 1250 J total, 1.25 J per batch
  CHECK(r.report.energy_joules == doctest::Approx(1250.0));
  CHECK(r.report.energy_joules_per_batch == doctest::Approx(1.25));
  CHECK(r.report.cost_dollars == doctest::Approx(1.25 * 1000 / 3.6e6 * 0.095));
  CHECK(r.report.host_usage_seconds_per_batch == doctest::Approx(0.25));

  SimResult w = simulate(toy(Policy::Wrr));
  finalize_energy(w.report, w.trace, pm);
  // 778 cpu batches at 0.25 s / 5 W plus 222.25 s of csd spin at 0.25 W
  CHECK(w.report.energy_joules ==
        doctest::Approx(5.0 * 778 * 0.25 + 0.25 * w.report.csd_busy_time));
  CHECK(w.report.csd_busy_time == doctest::Approx(222.25));  // 222 full + 0.25 truncated
  CHECK(w.report.energy_joules_per_batch == doctest::Approx(w.report.energy_joules / 1000.0));
}
