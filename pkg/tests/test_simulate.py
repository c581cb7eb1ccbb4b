import math

import numpy as np
import pytest

from langevin_anneal import streams
from langevin_anneal.diffusion import ConstantField, DriftSpec, field_get
from langevin_anneal.potentials import ParameterError, catalog_get
from langevin_anneal.schedules import AnnealSchedule, ConstantLevel, PlateauSchedule, StepSequence
from langevin_anneal.simulate import (ChainState, DivergedChainError, EnsembleDivergedError, NoiseModel,
                                      Trajectory, em_step, em_step_continuous, em_step_plateau,
                                      fine_reference_solve, interpolate, run_ensemble, run_until)


@pytest.fixture
def quad():
    p = catalog_get("quadratic1d", c=1.0)
    return DriftSpec(p, ConstantField(1.0))


def test_step_at_minimum_without_noise(quad):
    s = ChainState(np.array([[0.0]]))
    out = em_step_continuous(s, quad, AnnealSchedule(1.0), StepSequence("power", 0.1, 0.6), dW=0.0)
    assert out.x[0, 0] == 0.0
    assert out.t == pytest.approx(0.1)


def test_gradient_descent_step(quad):
    s = ChainState(np.array([[1.0]]))
    out = em_step_continuous(s, quad, AnnealSchedule(1.0), StepSequence("constant", 0.1), a_override=0.0)
    assert out.x[0, 0] == pytest.approx(0.8, abs=1e-15)


def test_identical_inputs_identical_outputs(quad):
    seq = StepSequence("power", 0.1, 0.6)
    a = em_step(ChainState(np.array([[0.3], [0.3]]), seed=5), quad, 0.7, seq)
    b = em_step(ChainState(np.array([[0.3], [0.3]]), seed=5), quad, 0.7, seq)
    np.testing.assert_array_equal(a.x, b.x)


def test_step_requires_grid(quad):
    with pytest.raises(ValueError):
        em_step(ChainState(np.array([[0.0]]), t=0.05), quad, 1.0, StepSequence("constant", 0.1))


def test_divergence_raises_with_state(quad):
    s = ChainState(np.array([[1e7]]))
    with pytest.raises(DivergedChainError) as err:
        em_step(s, quad, 1.0, StepSequence("constant", 100.0))
    assert err.value.last_state is s


def test_plateau_equals_frozen_continuous(quad):
    plateau = PlateauSchedule(C_T=1e6, beta=1.0, A=1.0)
    a1 = float(plateau.a_n(1))
    seq = StepSequence("power", 0.05, 0.6)
    s1 = s2 = ChainState(np.linspace(-1, 1, 7)[:, None], seed=3)
    for _ in range(25):
        s1 = em_step_plateau(s1, quad, plateau, seq)
        s2 = em_step_continuous(s2, quad, AnnealSchedule(1.0), seq, a_override=a1)
        np.testing.assert_array_equal(s1.x, s2.x)


def test_plateau_level_drops_at_boundary(quad):
    plateau = PlateauSchedule(C_T=0.5, beta=1.0, A=1.0)
    seq = StepSequence("constant", 0.25)
    s = ChainState(np.array([[0.0]]))
    levels = []
    for _ in range(12):
        s = em_step_plateau(s, quad, plateau, seq)
        levels.append(s.record.a)
    # T_1 = 0.5, T_2 = 2.0: steps starting at 0, 0.25 use a_1; 0.5 .. 1.75 use a_2
    assert levels[:2] == [float(plateau.a_n(1))] * 2
    assert levels[2:8] == [float(plateau.a_n(2))] * 6
    assert levels[8] == float(plateau.a_n(3))


def test_interpolate_endpoints_and_bridge_mean():
    p = catalog_get("quadratic1d")
    spec = DriftSpec(p, field_get("scalar_smooth"))
    seq = StepSequence("constant", 0.1)
    n = 100000
    before = ChainState(np.full((n, 1), 0.5), seed=11)
    after = em_step(before, spec, 0.8, seq)
    np.testing.assert_array_equal(interpolate(before, after, 0.0), before.x)
    near = interpolate(before, after, 0.1 - 1e-12)
    assert np.max(np.abs(near - after.x)) < 1e-5
    rec = after.record
    mid = interpolate(before, after, 0.05)
    # W_mid = (mid - x - s*inc) / (a sigma(x)); conditional mean dW/2
    sig = np.sqrt(1 + 0.25)
    W = (mid - before.x - 0.05 * rec.increment) / (0.8 * sig)
    resid = W - rec.dW / 2
    se = resid.std() / math.sqrt(n)
    assert abs(resid.mean()) < 4 * se
    assert resid.var() == pytest.approx(0.05 * 0.05 / 0.1, rel=0.02)
    with pytest.raises(ValueError):
        interpolate(before, after, 0.1)


def test_run_ensemble_deterministic(quad):
    kw = dict(record_at=[0.13, 0.5], seed=9)
    a = run_ensemble(0.4, 2, 0.5, "continuous", quad, AnnealSchedule(1.0), StepSequence("power", 0.01, 0.6), **kw)
    b = run_ensemble(0.4, 2, 0.5, "continuous", quad, AnnealSchedule(1.0), StepSequence("power", 0.01, 0.6), **kw)
    np.testing.assert_array_equal(a.positions, b.positions)


def test_run_ensemble_independent_of_chunking_and_jobs(quad):
    steps = StepSequence("power", 0.02, 0.6)
    args = (0.4, 50, 1.0, "continuous", quad, AnnealSchedule(1.0), steps)
    ref = run_ensemble(*args, record_at=[0.33, 1.0], seed=2)
    alt = run_ensemble(*args, record_at=[0.33, 1.0], seed=2, chunk_size=7, jobs=3)
    np.testing.assert_array_equal(ref.positions, alt.positions)


def test_stationary_variance(quad):
    a = 0.8
    tr = run_ensemble(0.0, 20000, 5.0, "constant", quad, ConstantLevel(a), StepSequence("constant", 0.005), seed=1)
    x = tr.final()[:, 0]
    var, n = x.var(), len(x)
    se = var * math.sqrt(2 / (n - 1))
    # EM bias at this step is ~ gamma / 4 relative; allow it on top of 3 se
    assert abs(var - a * a / 4) < 3 * se + 0.01 * a * a / 4


def test_record_off_grid_matches_interpolate(quad):
    steps = StepSequence("constant", 0.1)
    tr = run_ensemble(0.3, 4, 0.25, "constant", quad, ConstantLevel(0.6), steps, record_at=[0.2, 0.25], seed=4)
    s0 = ChainState(np.full((4, 1), 0.3), seed=4)
    s1 = em_step(s0, quad, 0.6, steps)
    s2 = em_step(s1, quad, 0.6, steps)
    s3 = em_step(s2, quad, 0.6, steps)
    np.testing.assert_allclose(tr.at(0), s2.x, rtol=0, atol=1e-15)
    np.testing.assert_allclose(tr.at(1), interpolate(s2, s3, 0.25), rtol=0, atol=1e-15)


def test_survival_rule():
    p = catalog_get("quadratic1d")
    spec = DriftSpec(p, ConstantField(1.0))
    with pytest.raises(EnsembleDivergedError) as err:
        run_ensemble(1.0, 10, 50.0, "constant", spec, ConstantLevel(1.0), StepSequence("constant", 5.0))
    assert err.value.n_diverged == 10


def test_partial_divergence_tolerated():
    p = catalog_get("quadratic1d")
    spec = DriftSpec(p, ConstantField(1.0))
    init = np.zeros((20, 1))
    init[0] = 1e7  # one chain starts where a unit step overshoots
    tr = run_ensemble(init, 20, 30.0, "constant", spec, ConstantLevel(0.1), StepSequence("constant", 1.05))
    assert tr.diverged.sum() == 1 and tr.diverged[0]
    assert np.all(np.isnan(tr.positions[:, 0]))
    assert tr.final().shape == (19, 1)


def test_fine_reference_noise_free_is_euler():
    p = catalog_get("quadratic1d")
    spec = DriftSpec(p, ConstantField(1.0))
    tr = fine_reference_solve(np.array([[1.0]]), 0.1, spec, 0.0, h=1e-3)
    assert tr.final()[0, 0] == pytest.approx((1 - 2e-3) ** 100, rel=1e-12)
    with pytest.raises(ParameterError):
        fine_reference_solve(np.array([[1.0]]), 0.1, spec, 0.0, h=1e-2)


def test_fine_reference_strong_refinement():
    p = catalog_get("quadratic1d")
    spec = DriftSpec(p, field_get("scalar_smooth"))
    init = np.full((4000, 1), 0.5)
    kw = dict(n_chains=4000, seed=3)
    fine = fine_reference_solve(init, 0.64, spec, 1.0, h=1e-4, **kw).final()
    errs = []
    for c in (4, 8, 16):
        coarse = fine_reference_solve(init, 0.64, spec, 1.0, h=1e-4, coarsen=c, **kw).final()
        errs.append(np.mean(np.abs(coarse - fine)))
    # strong order 1/2 or better: halving the step cuts the error by >= sqrt(2) roughly
    assert errs[0] < errs[1] < errs[2]
    assert errs[2] / errs[1] > 1.3 and errs[1] / errs[0] > 1.3


def test_coupled_contraction_bound():
    p = catalog_get("quadratic1d", c=1.0)
    spec = DriftSpec(p, ConstantField(1.0))
    x = fine_reference_solve(np.full((100, 1), 2.0), 1.0, spec, 1.0, h=1e-3, n_chains=100, seed=7,
                             record_at=[0.5, 1.0])
    y = fine_reference_solve(np.full((100, 1), -1.0), 1.0, spec, 1.0, h=1e-3, n_chains=100, seed=7,
                             record_at=[0.5, 1.0])
    for i, t in enumerate(x.times):
        d = np.mean(np.abs(x.at(i) - y.at(i)))
        assert d <= 3.0 * math.exp(-2.0 * t) * (1 + 1e-3)


def test_noise_mean_zero():
    p = catalog_get("quadratic1d")
    X = np.full((10000, 1), 1.5)
    z = NoiseModel("gaussian_v", c=0.3).draw(p, X, seed=1, step=1, first_chain=0)
    assert abs(z.mean()) < 4 * z.std() / 100
    assert np.mean(z**2) / p.value(1.5) == pytest.approx(0.09, rel=0.05)
    r = catalog_get("sigmoid_regression", M=16, dim=2)
    T = np.full((10000, 2), 0.7)
    zb = NoiseModel("minibatch", m=4).draw(r, T, seed=1, step=1, first_chain=0)
    se = zb.std(axis=0) / 100
    assert np.all(np.abs(zb.mean(axis=0)) < 4 * se)


def test_noise_model_validation():
    with pytest.raises(ParameterError):
        NoiseModel("minibatch", m=4).check_potential(catalog_get("quadratic1d"))
    with pytest.raises(ParameterError):
        NoiseModel.parse("other")
    assert NoiseModel.parse("gaussian_v", {"c": 0.2}).c == 0.2


def test_trajectory_csv_roundtrip(tmp_path, quad):
    tr = run_ensemble(0.1, 3, 0.3, "continuous", quad, AnnealSchedule(1.0), StepSequence("constant", 0.1),
                      record_at=[0.1, 0.3], seed=2)
    path = tmp_path / "traj.csv"
    tr.to_csv(path, config={"seed": 2})
    assert path.read_text().splitlines()[0] == "chain_id,t,x_1"
    back = Trajectory.from_csv(path)
    np.testing.assert_array_equal(back.positions, tr.positions)
    assert back.meta["config"] == {"seed": 2}
    with pytest.raises(ValueError):
        Trajectory([0.2, 0.1], np.zeros((2, 1, 1)), np.arange(1), np.zeros(1, bool))


def test_moment_boundedness():
    p = catalog_get("double_well_1d")
    spec = DriftSpec(p, ConstantField(1.0))
    rec = list(np.linspace(0.1, 5, 50))
    tr = run_ensemble(1.5, 500, 5.0, "continuous", spec, AnnealSchedule(1.0), StepSequence("power", 0.05, 0.51),
                      record_at=rec, seed=3)
    means = np.array([np.mean(p.value(tr.at(i))) for i in range(len(rec))])
    assert np.all(means <= 10 * means[:5].mean())


def test_run_until_hits_threshold(quad):
    k, trace = run_until(np.array([1.0]), 10, "continuous", quad, AnnealSchedule(0.01),
                         StepSequence("constant", 0.05), lambda X: np.mean(X**2) < 1e-2, 1000,
                         trace_at=[0, 5])
    assert k is not None and 5 < k < 100
    np.testing.assert_array_equal(trace[0], np.ones((10, 1)))


def test_streams_counter_addressing():
    a = streams.normals(1, streams.BROWNIAN, 3, 0, 10, 2)
    b = streams.normals(1, streams.BROWNIAN, 3, 4, 3, 2)
    np.testing.assert_array_equal(a[4:7], b)
    assert not np.array_equal(a, streams.normals(1, streams.BROWNIAN, 4, 0, 10, 2))
    assert not np.array_equal(a, streams.normals(1, streams.BRIDGE, 3, 0, 10, 2))
    u = streams.uniforms(2, streams.SAMPLE, 0, 0, 1000)
    assert np.all((u > 0) & (u < 1))
