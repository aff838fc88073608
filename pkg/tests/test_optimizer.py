import numpy as np
import pytest

from craq.energy import EnergyParams
from craq.optimizer import (
    TRACE_COLUMNS,
    AdamConfig,
    NonFiniteError,
    SolverState,
    adam_step,
    crack_map,
    initial_state,
    solve,
    write_trace_csv,
)
from craq.priors import BilinearGenerator, ConstantPrior, IdentityGenerator, LineFilterPrior
from craq.synthetic import synthetic_sample


def _scalar_state(x0=0.3):
    # one scalar in each block so every step size can be checked
    return SolverState.initial(np.array([x0]), np.array([x0]), np.array([x0]))


def _cfg(**kw):
    return AdamConfig(step_z=0.1, step_s=0.1, step_uprime=0.1, **kw)


class TestAdamStep:
    def test_standard_mode(self):
        new = adam_step(_scalar_state(), np.ones(3), _cfg())
        assert abs(new.z[0] - (0.3 - 0.1 / (1 + 1e-8))) <= 1e-9

    def test_verbatim_mode(self):
        new = adam_step(_scalar_state(), np.ones(3), _cfg(paper_verbatim_mode=True))
        assert abs(new.z[0] - (0.3 - 0.1 / (100 + 1e-8))) <= 1e-9
        assert new.w[0] == pytest.approx(0.1, abs=1e-15)

    def test_block_steps(self):
        cfg = AdamConfig(step_z=0.005, step_s=0.1, step_uprime=0.01)
        new = adam_step(_scalar_state(0.0), np.ones(3), cfg)
        np.testing.assert_allclose([new.z[0], new.s[0], new.uprime[0]], [-0.005, -0.1, -0.01], rtol=1e-7)

    @pytest.mark.parametrize("verbatim", [False, True])
    def test_zero_gradient_fixed_point(self, verbatim, rng):
        state = SolverState.initial(rng.normal(size=(2, 2, 3)), rng.normal(size=(4, 4)), rng.normal(size=(4, 4, 3)))
        cur = state
        for _ in range(5):
            cur = adam_step(cur, np.zeros(state.m.size), _cfg(paper_verbatim_mode=verbatim))
        for a, b in zip(cur.blocks(), state.blocks()):
            np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("verbatim", [False, True])
    def test_bias_correction(self, verbatim, rng):
        g = rng.normal(size=3)
        cfg = _cfg(paper_verbatim_mode=verbatim)
        new = adam_step(_scalar_state(), g, cfg)
        np.testing.assert_allclose(new.m / (1 - cfg.beta1), g, rtol=1e-14)
        assert new.k == 1

    @pytest.mark.parametrize("block,pos", [("z", 0), ("s", 1), ("uprime", 2)])
    def test_non_finite_names_block(self, block, pos):
        g = np.ones(3)
        g[pos] = np.nan
        with pytest.raises(NonFiniteError, match=block):
            adam_step(_scalar_state(), g, _cfg())

    def test_accepts_block_triple(self):
        a = adam_step(_scalar_state(), (np.ones(1), np.full(1, 2.0), np.full(1, 3.0)), _cfg())
        b = adam_step(_scalar_state(), np.array([1.0, 2.0, 3.0]), _cfg())
        np.testing.assert_array_equal(a.m, b.m)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(_scalar_state(), np.ones(4), _cfg())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AdamConfig(beta1=1.0)
        with pytest.raises(ValueError):
            AdamConfig(step_s=0.0)


class TestSolve:
    def test_zero_iterations(self, rng):
        U = rng.uniform(size=(8, 8, 3))
        G, P = IdentityGenerator((8, 8)), LineFilterPrior((8, 8))
        state, trace = solve(U, G, P, config=AdamConfig(iterations=0))
        assert len(trace) == 0
        init = initial_state(U, G, P)
        for a, b in zip(state.blocks(), init.blocks()):
            np.testing.assert_array_equal(a, b)
        assert trace.final == trace.initial

    def test_initialization(self, rng):
        U = rng.uniform(size=(8, 8, 3))
        state = initial_state(U, IdentityGenerator((8, 8)), ConstantPrior((8, 8), 1.0))
        np.testing.assert_allclose(state.v, 0.95, rtol=1e-14)
        np.testing.assert_array_equal(state.uprime, U)
        np.testing.assert_array_equal(state.z, U)

    def test_constant_image_is_crack_free(self):
        U = np.full((16, 16, 3), 0.55)
        cfg = AdamConfig(iterations=500, early_stop=False)
        state, trace = solve(U, IdentityGenerator((16, 16)), ConstantPrior((16, 16), 1.0), EnergyParams(), cfg)
        assert len(trace) == 500
        assert state.v.min() >= 0.99
        assert crack_map(state).max() <= 0.01

    def test_energy_descends_on_cracked_patch(self, rng):
        image, _, _, _ = synthetic_sample((32, 32), rng)
        _, trace = solve(image, BilinearGenerator((32, 32), 4), LineFilterPrior((32, 32)),
                         config=AdamConfig(iterations=150))
        assert trace.final.total < trace.initial.total

    def test_deterministic(self, rng, tmp_path):
        image, _, _, _ = synthetic_sample((16, 16), rng)
        runs = []
        for i in range(2):
            state, trace = solve(image, BilinearGenerator((16, 16), 4), LineFilterPrior((16, 16)),
                                 config=AdamConfig(iterations=40))
            write_trace_csv(trace, tmp_path / f"t{i}.csv")
            runs.append(state)
        assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()
        np.testing.assert_array_equal(runs[0].s, runs[1].s)

    def test_trace_csv(self, rng, tmp_path):
        U = rng.uniform(size=(8, 8, 3))
        _, trace = solve(U, IdentityGenerator((8, 8)), LineFilterPrior((8, 8)),
                         config=AdamConfig(iterations=5, early_stop=False))
        write_trace_csv(trace, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == ",".join(TRACE_COLUMNS)
        assert len(lines) == 6 and lines[-1].startswith("5,")

    def test_early_stop(self, rng):
        image, _, _, _ = synthetic_sample((32, 32), rng)
        G, P = BilinearGenerator((32, 32), 4), LineFilterPrior((32, 32))
        _, trace = solve(image, G, P, config=AdamConfig(iterations=3000))
        assert 20 < len(trace) < 3000
        totals = [trace.initial.total] + [r.total for r in trace.records]
        assert abs(totals[-1] - totals[-21]) <= 1e-6 * abs(totals[-21])
