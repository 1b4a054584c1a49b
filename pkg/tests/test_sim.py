import math

import numpy as np
import pytest

from desloc import baselines, kernels
from desloc.optim import OptimizerSpec, SingleWorkerOptimizer
from desloc.sim import (
    NOISE_BLOCK,
    WSD,
    ConstantLR,
    DivergenceError,
    MembershipEvent,
    NoiseBank,
    Objective,
    SimConfig,
    apply_membership,
    eta_at,
    rosenbrock,
    run,
    worker_sigma,
    worker_stream,
)
from desloc.sync import ReplicaSet, SyncDecision, SyncPolicy, apply_sync


def rosen_grad(x):
    x1, x2 = x
    return np.array([-2 * (1 - x1) - 400 * x1 * (x2 - x1 * x1), 200 * (x2 - x1 * x1)])


def config(**kw):
    base = dict(
        M=4, T=300,
        optimizer=OptimizerSpec(kind="adam"),
        schedule=ConstantLR(0.01),
        policies=baselines.des_loc(8, 16, 32),
        objective=Objective(kind="rosenbrock", sigma=1.5),
        seed=2,
    )
    base.update(kw)
    return SimConfig(**base)


def test_rosenbrock_function():
    assert rosenbrock([1.0, 1.0]) == 0.0
    assert rosenbrock([-1.2, 1.0]) == pytest.approx(24.2)
    assert Objective().start.tolist() == [-1.2, 1.0]


@pytest.mark.parametrize("kind", ["adam", "adopt", "sgdm"])
def test_single_worker_matches_plain_optimizer(kind):
    spec = OptimizerSpec(kind=kind, beta1=0.9, beta2=0.99, epsilon=1e-3)
    cfg = config(M=1, T=200, optimizer=spec)
    xs = []
    run(cfg, trace=lambda t, r, g, d: xs.append(r.x[0].copy()))
    noise = NoiseBank(cfg.objective, cfg.seed, [0])
    opt = SingleWorkerOptimizer(spec, 2)
    x = cfg.objective.start
    for t in range(cfg.T):
        g = rosen_grad(x) + noise.next()[0]
        x = opt.step(x, g, 0.01)
        np.testing.assert_allclose(xs[t], x, rtol=1e-12, atol=1e-14)


def test_noise_free_workers_stay_identical():
    cfg = config(M=5, objective=Objective(kind="rosenbrock", sigma=0.0))

    def check(t, r, g, d):
        assert np.all(r.x == r.x[0])
        for a in r.states.values():
            assert np.all(a == a[0])

    run(cfg, trace=check)


def test_determinism():
    a = run(config(policies={"x": SyncPolicy.probabilistic(0.1), "u": SyncPolicy.periodic(4),
                              "v": SyncPolicy.probabilistic(0.05)}))
    b = run(config(policies={"x": SyncPolicy.probabilistic(0.1), "u": SyncPolicy.periodic(4),
                              "v": SyncPolicy.probabilistic(0.05)}))
    assert [r.as_tuple() for r in a.rows] == [r.as_tuple() for r in b.rows]
    np.testing.assert_array_equal(a.replicas.x, b.replicas.x)


def test_worker_streams_are_independent_of_membership():
    assert worker_stream(5, 3).random() == worker_stream(5, 3).random()
    assert worker_stream(5, 3).random() != worker_stream(5, 4).random()
    assert worker_stream(5, 3).random() != worker_stream(6, 3).random()
    small = NoiseBank(Objective(sigma=1.0), 0, [0, 1])
    big = NoiseBank(Objective(sigma=1.0), 0, [0, 1, 2, 3])
    for _ in range(NOISE_BLOCK + 5):
        np.testing.assert_array_equal(small.next(), big.next()[:2])


def test_noise_is_unbiased():
    bank = NoiseBank(Objective(sigma=2.0), 11, range(4))
    n = 100_000 // 4
    total = np.zeros((4, 2))
    for _ in range(n):
        total += bank.next()
    mean = total.sum(axis=0) / (4 * n)
    assert np.all(np.abs(mean) <= 4 * 2.0 / math.sqrt(4 * n))


def test_per_worker_sigma_is_nonnegative_and_seeded():
    obj = Objective(noise="per_worker_gaussian", sigma=3.0)
    s = [worker_sigma(obj, 0, m) for m in range(200)]
    assert min(s) >= 0
    assert s == [worker_sigma(obj, 0, m) for m in range(200)]
    # |N(0, 3)| has mean 3 * sqrt(2 / pi)
    assert np.mean(s) == pytest.approx(3 * math.sqrt(2 / math.pi), rel=0.15)


class TestSchedule:
    def test_constant(self):
        assert eta_at(17, ConstantLR(0.3), 100) == 0.3

    def test_wsd_points(self):
        s = WSD(eta_peak=1e-3, warmup_steps=100, decay_fraction=0.2)
        T = 1000
        Ts = 800
        assert eta_at(0, s, T) == 0.0
        assert eta_at(50, s, T) == pytest.approx(5e-4)
        assert eta_at(Ts, s, T) == 1e-3
        expected = 1e-3 * (1 - math.sqrt((T - 1 - Ts) / (T - Ts)))
        assert eta_at(T - 1, s, T) == pytest.approx(expected, rel=1e-14)
        assert eta_at(T - 1, s, T) == pytest.approx(2.5031328e-06, rel=1e-6)

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            config(schedule=WSD(1e-3, warmup_steps=250, decay_fraction=0.2))
        with pytest.raises(ValueError):
            eta_at(100, ConstantLR(0.1), 100)


class TestMembership:
    def test_mean_broadcast_preserves_mean(self):
        rng = np.random.default_rng(0)
        r = ReplicaSet(x=rng.normal(size=(4, 3)), states={"u": rng.normal(size=(4, 3))})
        before = kernels.mean_rows(r.x)
        r2 = apply_membership(r, MembershipEvent(step=1536, add_workers=4))
        assert r2.M == 8
        np.testing.assert_array_equal(kernels.mean_rows(r2.x), before)
        np.testing.assert_array_equal(r2.x[4:], np.tile(before, (4, 1)))

    def test_join_then_full_sync_matches_broadcast(self):
        rng = np.random.default_rng(1)
        r = ReplicaSet(x=rng.normal(size=(4, 3)), states={"u": rng.normal(size=(4, 3))})
        a = apply_membership(r, MembershipEvent(10, 4, "mean_broadcast"))
        b = apply_membership(r, MembershipEvent(10, 4, "replicate_worker_zero"))
        apply_sync(a, SyncDecision(10, {"x": True, "u": True}))
        np.testing.assert_array_equal(a.x[4:], a.x[:4])
        # averaging the old workers first, then joining, gives the same state either way
        r.x[...] = kernels.mean_rows(r.x)
        r.states["u"][...] = kernels.mean_rows(r.states["u"])
        c = apply_membership(r, MembershipEvent(10, 4, "replicate_worker_zero"))
        np.testing.assert_array_equal(c.x, a.x)
        np.testing.assert_array_equal(c.states["u"], a.states["u"])
        assert b.M == 8

    def test_run_with_event(self):
        s = run(config(T=200, events=[MembershipEvent(step=100, add_workers=4)]))
        counts = s.column("worker_count")
        assert counts[99] == 4 and counts[100] == 8
        assert len(s.workers) == 8
        assert [w.id for w in s.workers] == list(range(8))

    def test_event_step_must_be_inside_run(self):
        with pytest.raises(ValueError):
            config(T=100, events=[MembershipEvent(step=100, add_workers=1)])


def test_divergence_is_reported():
    cfg = config(optimizer=OptimizerSpec(kind="sgdm", clip="none"), schedule=ConstantLR(5.0),
                 objective=Objective(sigma=0.0))
    with pytest.raises(DivergenceError) as err:
        run(cfg)
    assert err.value.quantity == "x"
    assert err.value.step > 0
    assert err.value.stream is not None


def test_heterogeneous_quadratic_optimum():
    obj = Objective(kind="heterogeneous_quadratic", dim=2, centers=((0.0, 0.0), (2.0, 4.0)))
    np.testing.assert_array_equal(obj.optimum(range(4)), [1.0, 2.0])
    cfg = config(M=4, T=3000, objective=obj, optimizer=OptimizerSpec(kind="sgdm", beta1=0.9, clip="none"),
                 schedule=ConstantLR(0.05), policies=baselines.des_loc(4, 4, 4))
    assert run(cfg).final_dist < 1e-6


def test_objective_validation():
    with pytest.raises(ValueError):
        Objective(kind="rosenbrock", dim=3)
    with pytest.raises(ValueError):
        Objective(kind="heterogeneous_quadratic", dim=2)
    with pytest.raises(ValueError):
        Objective(kind="quadratic", dim=2, curvature=(1.0, 0.0))
    with pytest.raises(ValueError):
        Objective(sigma=-1.0)
