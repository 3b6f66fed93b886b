import numpy as np
import pytest

from carlevel.diagnostics import gelman_rubin
from carlevel.errors import ConfigurationError, NumericalError
from carlevel.mcmc import (DEFAULT_BURN_IN, ChainOutput, McmcConfig,
                           pooled_deviance_at_posterior_mean, read_chain_csv,
                           run_chain, run_chains, write_chain_csv, write_chain_meta)
from carlevel.models import GibbsModel, ModelSpec
from carlevel.sampling import RngStream
from carlevel.simulate import (Scenario, get_scenario, lattice_geography,
                               simulate_cross_sectional)


@pytest.fixture(scope="module")
def small_problem():
    graph = lattice_geography(3, 3)
    scenario = Scenario(kind="cross_sectional", number=0, label="unit test",
                        tau_sq=0.5, rho=0.4)
    data = simulate_cross_sectional(graph, scenario, n_per_area=3, rng=RngStream(42))
    return ModelSpec(family="car"), data, graph


class TestConfig:
    def test_stored_row_arithmetic(self):
        cfg = McmcConfig(iterations=200, burn_in=100, thin=10, seed=0)
        assert cfg.num_stored == 10

    def test_invalid_configs(self):
        with pytest.raises(ConfigurationError):
            McmcConfig(iterations=100, burn_in=100, seed=0)
        with pytest.raises(ConfigurationError):
            McmcConfig(iterations=10, burn_in=0, thin=0, seed=0)
        with pytest.raises(ConfigurationError):
            McmcConfig(iterations=0, burn_in=0, seed=0)
        with pytest.raises(ConfigurationError):
            McmcConfig(iterations=10, burn_in=0, num_chains=0, seed=0)

    def test_storage_budget_gate(self):
        cfg = McmcConfig(iterations=200, burn_in=100, thin=10, seed=0)
        with pytest.raises(ConfigurationError, match="stored draws"):
            cfg.check_storage_budget()
        McmcConfig(iterations=2000, burn_in=1000, thin=10, seed=0).check_storage_budget()

    def test_family_defaults_documented(self):
        assert DEFAULT_BURN_IN["cl3"] == 8000
        assert DEFAULT_BURN_IN["conv"] == 8000
        assert DEFAULT_BURN_IN["car"] == 15000
        assert DEFAULT_BURN_IN["rcar"] == 15000
        assert DEFAULT_BURN_IN["car_anova"] == 25000


class TestRunChain:
    def test_exact_row_count(self, small_problem):
        spec, data, graph = small_problem
        cfg = McmcConfig(iterations=200, burn_in=100, thin=10, seed=1)
        out = run_chain(spec, data, graph, cfg, stream_id=0)
        assert out.num_stored == 10
        assert out.deviance.shape == (10,)

    def test_uneven_row_count(self, small_problem):
        spec, data, graph = small_problem
        cfg = McmcConfig(iterations=207, burn_in=100, thin=10, seed=1)
        out = run_chain(spec, data, graph, cfg, stream_id=0)
        assert out.num_stored == 10

    def test_same_seed_bit_identical(self, small_problem):
        spec, data, graph = small_problem
        cfg = McmcConfig(iterations=150, burn_in=50, thin=5, seed=7)
        a = run_chain(spec, data, graph, cfg, stream_id=0)
        b = run_chain(spec, data, graph, cfg, stream_id=0)
        assert np.array_equal(a.draws, b.draws)
        assert np.array_equal(a.deviance, b.deviance)
        assert np.array_equal(a.log_likelihood, b.log_likelihood)

    def test_area_effects_stored_by_default(self, small_problem):
        spec, data, graph = small_problem
        cfg = McmcConfig(iterations=60, burn_in=20, thin=2, seed=1)
        out = run_chain(spec, data, graph, cfg, stream_id=0)
        assert "psi_1" in out.parameter_names
        assert "psi_9" in out.parameter_names
        off = McmcConfig(iterations=60, burn_in=20, thin=2, seed=1,
                         store_area_effects=False)
        out2 = run_chain(spec, data, graph, off, stream_id=0)
        assert "psi_1" not in out2.parameter_names

    def test_failure_reports_sweep_index(self, small_problem, monkeypatch):
        spec, data, graph = small_problem
        calls = {"n": 0}
        original = GibbsModel.gibbs_sweep

        def exploding(self, state, rng):
            calls["n"] += 1
            if calls["n"] == 5:
                raise FloatingPointError("boom")
            return original(self, state, rng)

        monkeypatch.setattr(GibbsModel, "gibbs_sweep", exploding)
        cfg = McmcConfig(iterations=60, burn_in=20, thin=2, seed=1)
        with pytest.raises(NumericalError, match="sweep 5"):
            run_chain(spec, data, graph, cfg, stream_id=0)


class TestRunChains:
    def test_chain_zero_independent_of_siblings(self, small_problem):
        spec, data, graph = small_problem
        solo = run_chain(spec, data, graph,
                         McmcConfig(iterations=100, burn_in=40, thin=3, seed=3,
                                    num_chains=1), stream_id=0)
        pair = run_chains(spec, data, graph,
                          McmcConfig(iterations=100, burn_in=40, thin=3, seed=3,
                                     num_chains=2), parallel=False)
        assert np.array_equal(solo.draws, pair[0].draws)

    def test_parallel_equals_serial(self, small_problem):
        spec, data, graph = small_problem
        cfg = McmcConfig(iterations=100, burn_in=40, thin=3, seed=4, num_chains=2)
        serial = run_chains(spec, data, graph, cfg, parallel=False)
        parallel = run_chains(spec, data, graph, cfg, parallel=True)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.draws, b.draws)
            assert a.stream_id == b.stream_id

    def test_overdispersed_inits_differ(self, small_problem):
        spec, data, graph = small_problem
        cfg = McmcConfig(iterations=40, burn_in=0, thin=1, seed=5, num_chains=2,
                         overdispersed_init=True)
        outs = run_chains(spec, data, graph, cfg, parallel=False)
        # different streams jitter beta differently
        assert not np.array_equal(outs[0].draws[0], outs[1].draws[0])

    def test_surviving_chains_returned(self, small_problem, monkeypatch):
        import carlevel.mcmc as mcmc_mod
        spec, data, graph = small_problem
        original = mcmc_mod.run_chain

        def flaky(spec, data, graph, config, stream_id):
            if stream_id == 1:
                raise NumericalError("chain 1 exploded")
            return original(spec, data, graph, config, stream_id)

        monkeypatch.setattr(mcmc_mod, "run_chain", flaky)
        cfg = McmcConfig(iterations=60, burn_in=20, thin=2, seed=6, num_chains=3)
        with pytest.warns(UserWarning, match="chain 1 failed"):
            outs = mcmc_mod.run_chains(spec, data, graph, cfg, parallel=False)
        assert [o.stream_id for o in outs] == [0, 2]

    @pytest.mark.skipif((__import__("os").cpu_count() or 1) < 4,
                        reason="timing contract needs >= 4 cores")
    def test_parallel_speedup(self, small_problem):
        import time
        spec, data, graph = small_problem
        cfg1 = McmcConfig(iterations=4000, burn_in=1000, thin=10, seed=8, num_chains=1)
        t0 = time.perf_counter()
        run_chains(spec, data, graph, cfg1, parallel=False)
        single = time.perf_counter() - t0
        cfg4 = McmcConfig(iterations=4000, burn_in=1000, thin=10, seed=8, num_chains=4)
        t0 = time.perf_counter()
        run_chains(spec, data, graph, cfg4, parallel=True)
        quad = time.perf_counter() - t0
        assert quad < 1.5 * single + 2.0  # absolute slack for pool startup


class TestConvergenceAtScale:
    def test_cl2_rhat_below_threshold(self):
        graph = lattice_geography(5, 10)  # 50 areas
        scenario = Scenario(kind="cross_sectional", number=0, label="rhat test",
                            tau_sq=0.5, rho=0.0)
        data = simulate_cross_sectional(graph, scenario, n_per_area=5,
                                        rng=RngStream(1234))
        cfg = McmcConfig(iterations=20_000, burn_in=5000, thin=10, seed=99,
                         num_chains=2, overdispersed_init=True,
                         store_area_effects=False)
        outs = run_chains(ModelSpec(family="cl2"), data, graph, cfg)
        for name in ("beta_intercept", "beta_x_ind", "beta_x_area"):
            chains = [o.column(name) for o in outs]
            assert gelman_rubin(chains) < 1.02


class TestChainFiles:
    def test_csv_round_trip(self, small_problem, tmp_path):
        spec, data, graph = small_problem
        cfg = McmcConfig(iterations=100, burn_in=40, thin=3, seed=4)
        out = run_chain(spec, data, graph, cfg, stream_id=0)
        p = tmp_path / "chain_0.csv"
        write_chain_csv(out, p)
        write_chain_meta(out, cfg, tmp_path / "chain_0.meta")
        back = read_chain_csv(p)
        assert back.parameter_names == out.parameter_names
        assert np.allclose(back.draws, out.draws)
        assert np.allclose(back.deviance, out.deviance)
        assert back.family == "car"
        assert back.seed == 4
        assert np.isclose(back.deviance_at_posterior_mean,
                          out.deviance_at_posterior_mean)

    def test_pooled_deviance_at_mean(self, small_problem):
        spec, data, graph = small_problem
        cfg = McmcConfig(iterations=100, burn_in=40, thin=3, seed=4, num_chains=2)
        outs = run_chains(spec, data, graph, cfg, parallel=False)
        model = GibbsModel(spec, data, graph)
        pooled = pooled_deviance_at_posterior_mean(model, outs)
        assert np.isfinite(pooled)
        # pooled value sits near the per-chain values
        per_chain = [o.deviance_at_posterior_mean for o in outs]
        assert min(per_chain) - 5 < pooled < max(per_chain) + 5
