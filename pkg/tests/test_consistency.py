import math

import numpy as np
import pytest
from helpers import ConsistentHead, ConstNet, OracleNet
from hypothesis import given, settings
from hypothesis import strategies as st

from cdpolicy import numkit as nk
from cdpolicy.consistency import (
    ConsistencySchedule,
    DistillConfig,
    NetworkTriplet,
    consistency_fn,
    distill,
    ema_update,
    mcd_loss,
    ode_solver_estimate,
    params_digest,
    sample_n,
    self_consistency,
)
from cdpolicy.consistency.distill import Probe
from cdpolicy.diffusion import NoiseSchedule, convert_prediction, forward_noise
from cdpolicy.manipenv import generate_dataset
from cdpolicy.policy import Architecture, Checkpoint, DenoiseNetwork

SCHED = NoiseSchedule(100)
CS = ConsistencySchedule(SCHED)
TINY = dict(n_points=8, embed_dim=8, point_hidden=8, time_dim=8, width=16, n_blocks=1)


class ConstHead:
    """Sample head whose raw output is the trainable constant ``v``."""

    prediction_type = ConstNet(0).prediction_type

    def __init__(self, v, shape=(1, 1, 1)):
        self.arch = ("const-head", shape)
        self.params = {"v": np.full(shape, float(v))}

    def leaves(self):
        return nk.leaves(self.params)

    def encode(self, points, poses, p=None):
        return nk.Tensor(np.zeros((len(points), 1)))

    def denoise(self, a_t, t, cond, p=None):
        return p["v"] if p is not None else nk.Tensor(self.params["v"])


def tiny_net(seed, kind="sample"):
    return DenoiseNetwork.initialize(Architecture(**TINY, prediction_type=kind), np.random.default_rng(seed))


def tiny_batch(B, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.uniform(-1, 1, (B, 2, 8, 3)), rng.uniform(-1, 1, (B, 2, 3)), rng.uniform(-1, 1, (B, 4, 2)))


# ---------------------------------------------------------------- parameterization


def test_boundary_coefficients_are_exact():
    for cs in (CS, ConsistencySchedule(NoiseSchedule(1000)), ConsistencySchedule(SCHED, 0.3, 2.0)):
        assert cs.c_skip(0) == 1.0 and cs.c_out(0) == 0.0


def test_coefficients_at_worked_point():
    # scale 0.5 at t = 1 gives the same product b * t = 0.5 as the continuous-time example
    cs = ConsistencySchedule(SCHED, sigma_d=0.5, boundary_scale=0.5)
    assert cs.c_skip(1) == pytest.approx(0.5, abs=1e-15)
    assert cs.c_out(1) == pytest.approx(1 / math.sqrt(2), abs=1e-15)


def test_coefficients_approach_pure_network_output():
    cs = ConsistencySchedule(NoiseSchedule(10**6), boundary_scale=1.0)
    assert cs.c_skip(10**6) < 1e-12 and cs.c_out(10**6) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(scale=st.floats(1e-3, 10), sigma=st.floats(0.05, 5), t=st.integers(0, 1000))
def test_coefficient_identities(scale, sigma, t):
    cs = ConsistencySchedule(NoiseSchedule(1000), sigma, scale)
    assert cs.c_skip(t) + cs.c_out(t) ** 2 == pytest.approx(1.0, abs=1e-12)
    assert 0 <= cs.c_out(t) <= 1 and 0 < cs.c_skip(t) <= 1
    if t:
        assert cs.c_skip(t) < cs.c_skip(t - 1) and cs.c_out(t) > cs.c_out(t - 1)


@pytest.mark.parametrize("T", [100, 1000])
def test_closed_form_identities_on_dense_grid(T):
    for scale in (1 / T, 10 / T, 100 / T):
        cs = ConsistencySchedule(NoiseSchedule(T), 0.5, scale)
        t = np.arange(T + 1, dtype=np.float64)
        denom = scale**2 * t**2 + 0.25
        np.testing.assert_allclose(cs.c_skip(t) * denom, 0.25, rtol=0, atol=1e-12)
        np.testing.assert_allclose(cs.c_out(t) ** 2 * denom, scale**2 * t**2, rtol=1e-12, atol=1e-12)


def test_larger_scale_leaves_the_boundary_faster():
    scales = [0.01, 0.1, 1.0, 10.0]
    c = [ConsistencySchedule(SCHED, boundary_scale=b).c_skip(5) for b in scales]
    assert all(x > y for x, y in zip(c, c[1:]))


def test_schedule_rejects_bad_constants():
    for kw in ({"sigma_d": 0.0}, {"boundary_scale": -1.0}):
        with pytest.raises(ValueError):
            ConsistencySchedule(SCHED, **kw)


@pytest.mark.parametrize("kind", ["sample", "epsilon"])
def test_consistency_fn_is_identity_at_boundary(kind):
    net = tiny_net(0, kind)
    pts, poses, a = tiny_batch(3)
    a = a * 0.5
    cond = net.encode_np(pts, poses)
    np.testing.assert_array_equal(consistency_fn(net, a, 0, cond, CS), a)
    mixed = consistency_fn(net, a, np.array([0, 7, 0]), cond, CS)
    np.testing.assert_array_equal(mixed[[0, 2]], a[[0, 2]])


def test_epsilon_head_converts_through_sample_estimate():
    net = tiny_net(1, "epsilon")
    pts, poses, a = tiny_batch(2)
    cond = net.encode_np(pts, poses)
    t = np.array([30, 90])
    eps = net.predict(a, t, cond)
    ab = SCHED.alpha_bars[t][:, None, None]
    a0 = (a - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
    expected = CS.c_skip(t)[:, None, None] * a + CS.c_out(t)[:, None, None] * a0
    np.testing.assert_allclose(consistency_fn(net, a, t, cond, CS, clip=False), expected, atol=1e-12)


def test_consistency_fn_clips_and_rejects_bad_times():
    head = ConsistentHead(4.0, CS, 2)
    a = np.zeros((2, 4, 2))
    np.testing.assert_array_equal(consistency_fn(head, a, 50, None, CS), np.ones_like(a))
    assert consistency_fn(head, a, 50, None, CS, clip=False).max() == pytest.approx(4.0)
    for bad in (-1, 101):
        with pytest.raises(ValueError):
            consistency_fn(head, a, bad, None, CS)


# ---------------------------------------------------------------- solver estimate


def test_solver_estimate_with_oracle_teacher_lands_on_the_path():
    rng = np.random.default_rng(2)
    a0, z = rng.uniform(-0.9, 0.9, (3, 4, 2)), rng.normal(size=(3, 4, 2))
    teacher = OracleNet(a0, SCHED)
    a_nk = forward_noise(a0, 40, z, SCHED)
    np.testing.assert_allclose(ode_solver_estimate(teacher, a_nk, 40, 30, None, SCHED),
                               forward_noise(a0, 30, z, SCHED), atol=1e-10)
    np.testing.assert_allclose(ode_solver_estimate(teacher, a_nk, 40, 0, None, SCHED), a0, atol=1e-10)
    assert teacher.n_evals == 2


def test_solver_estimate_rejects_bad_targets():
    a = np.zeros((1, 4, 2))
    for t_n in (-1, 40, 41):
        with pytest.raises(ValueError):
            ode_solver_estimate(ConstNet(0.0), a, 40, t_n, None, SCHED)


# ---------------------------------------------------------------- loss


def test_loss_hand_trace():
    sched = NoiseSchedule(10)
    cs = ConsistencySchedule(sched)  # boundary scale 10 / T = 1
    triplet = NetworkTriplet(ConstNet(0.3, (1, 1)), ConstHead(0.4), ConstHead(-0.1))
    out = mcd_loss(triplet, np.full((1, 1, 1), 0.2), np.zeros(1), None, None, cs, DistillConfig(k=2),
                   n=np.array([3]), noise=np.full((1, 1, 1), 0.5))
    assert out.loss == pytest.approx(0.2394825999167141, rel=1e-12)
    assert out.grads["v"].item() == pytest.approx(0.9738818923587266, rel=1e-12)
    assert out.target_out.item() == pytest.approx(-0.08644114046075899, rel=1e-12)


def test_loss_vanishes_for_a_self_consistent_student():
    B = 5
    triplet = NetworkTriplet(ConstNet(0.4), ConsistentHead(0.4, CS, B), ConsistentHead(0.4, CS, B))
    a0 = np.random.default_rng(3).uniform(-1, 1, (B, 4, 2))
    for n in (np.zeros(B, int), np.array([0, 10, 45, 80, 90])):
        out = mcd_loss(triplet, a0, np.zeros(B), None, np.random.default_rng(0), CS, DistillConfig(k=10), n=n)
        assert out.loss == pytest.approx(0.0, abs=1e-24)
        np.testing.assert_allclose(out.grads["shift"], 0.0, atol=1e-12)


def test_loss_at_boundary_targets_the_teacher_estimate():
    rng = np.random.default_rng(4)
    pts, poses, a0 = tiny_batch(4, 4)
    teacher, online = tiny_net(10), tiny_net(11)
    triplet = NetworkTriplet(teacher, online, online.copy())
    z = rng.normal(size=a0.shape)
    out = mcd_loss(triplet, a0, pts, poses, None, CS, DistillConfig(k=10), n=np.zeros(4, int), noise=z)
    a_k = forward_noise(a0, 10, z, SCHED)
    teacher_a0 = np.clip(teacher.predict(a_k, 10, teacher.encode_np(pts, poses)), -1, 1)
    np.testing.assert_allclose(out.target_out, teacher_a0, atol=1e-12)
    online_f = consistency_fn(online, a_k, 10, online.encode_np(pts, poses), CS, clip=False)
    np.testing.assert_allclose(out.online_out, online_f, atol=1e-12)
    assert out.loss == pytest.approx(np.mean((online_f - teacher_a0) ** 2), rel=1e-12)


def test_online_branch_is_unclipped_target_is_clipped():
    B = 3
    triplet = NetworkTriplet(ConstNet(3.0), ConsistentHead(3.0, CS, B), ConsistentHead(3.0, CS, B))
    out = mcd_loss(triplet, np.zeros((B, 4, 2)), np.zeros(B), None, None, CS, DistillConfig(k=10),
                   n=np.array([5, 20, 50]), noise=np.zeros((B, 4, 2)))
    np.testing.assert_allclose(out.online_out, 3.0, atol=1e-12)
    np.testing.assert_array_equal(out.target_out, 1.0)


@pytest.mark.parametrize("kind", ["sample", "epsilon"])
def test_gradient_reaches_only_the_online_network(kind):
    """Finite differences that move only the online weights match the analytic gradient."""
    pts, poses, a0 = tiny_batch(3, 5)
    teacher, online, target = tiny_net(20, kind), tiny_net(21, kind), tiny_net(22, kind)
    n, z = np.array([0, 33, 80]), np.random.default_rng(6).normal(size=a0.shape)
    cfg = DistillConfig(k=10)

    def loss_with(params):
        net = DenoiseNetwork(online.arch, params)
        return mcd_loss(NetworkTriplet(teacher, net, target), a0, pts, poses, None, CS, cfg, n=n, noise=z).loss

    before = (params_digest(teacher.params), params_digest(target.params))
    out = mcd_loss(NetworkTriplet(teacher, online, target), a0, pts, poses, None, CS, cfg, n=n, noise=z)
    assert set(out.grads) == set(online.params)
    pick = np.random.default_rng(7)
    h = 1e-6
    for name in ("trunk.out.w", "trunk.in.w", "point.l1.w", "pose.l1.b"):
        for _ in range(3):
            idx = tuple(pick.integers(0, s) for s in online.params[name].shape)
            plus = {k: v.copy() for k, v in online.params.items()}
            minus = {k: v.copy() for k, v in online.params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fd = (loss_with(plus) - loss_with(minus)) / (2 * h)
            assert out.grads[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)
    assert (params_digest(teacher.params), params_digest(target.params)) == before


def test_target_weights_move_the_loss_but_get_no_gradient():
    pts, poses, a0 = tiny_batch(3, 8)
    teacher, online, target = tiny_net(40), tiny_net(41), tiny_net(42)
    n, z = np.array([5, 50, 70]), np.random.default_rng(9).normal(size=a0.shape)
    cfg = DistillConfig(k=10)

    def run(tgt):
        return mcd_loss(NetworkTriplet(teacher, online, tgt), a0, pts, poses, None, CS, cfg, n=n, noise=z)

    base = run(target)
    bumped = target.copy()
    bumped.params["trunk.out.b"] = bumped.params["trunk.out.b"] + 0.05
    moved = run(bumped)
    assert moved.loss != base.loss
    assert set(moved.grads) == set(online.params)
    np.testing.assert_array_equal(moved.online_out, base.online_out)
    assert np.abs(moved.target_out - base.target_out).max() > 0


def test_loss_draws_n_in_range():
    B = 4000
    triplet = NetworkTriplet(ConstNet(0.0), ConsistentHead(0.0, CS, B), ConsistentHead(0.0, CS, B))
    for grid, expected in (("aligned", set(range(0, 81, 20))), ("uniform", set(range(81)))):
        out = mcd_loss(triplet, np.zeros((B, 4, 2)), np.zeros(B), None, np.random.default_rng(8), CS,
                       DistillConfig(k=20, timestep_grid=grid))
        assert set(out.n.tolist()) == expected


def test_aligned_grid_with_uneven_interval():
    n = sample_n(np.random.default_rng(0), 2000, 100, 30, "aligned")
    assert set(n.tolist()) == {0, 30, 60}


def test_config_validation():
    for bad in (DistillConfig(k=0), DistillConfig(k=100), DistillConfig(mu=1.0), DistillConfig(epochs=-1),
                DistillConfig(timestep_grid="random")):
        with pytest.raises(ValueError):
            bad.validate(100)
    DistillConfig(k=99).validate(100)


# ---------------------------------------------------------------- EMA


def test_ema_examples():
    online, target = tiny_net(0), tiny_net(1)
    for name in online.params:
        online.params[name] = np.zeros_like(online.params[name])
        target.params[name] = np.ones_like(target.params[name])
    triplet = NetworkTriplet(None, online, target)
    ema_update(triplet, 0.9)
    assert all(np.all(v == 0.9) for v in target.params.values())
    ema_update(triplet, 0.0)
    assert all(np.all(v == 0.0) for v in target.params.values())
    with pytest.raises(ValueError):
        ema_update(triplet, 1.0)


def test_ema_converges_to_online_weights():
    online, target = tiny_net(2), tiny_net(3)
    triplet = NetworkTriplet(None, online, target)
    gap0 = max(np.abs(online.params[k] - target.params[k]).max() for k in online.params)
    for _ in range(200):
        ema_update(triplet, 0.95)
    gap = max(np.abs(online.params[k] - target.params[k]).max() for k in online.params)
    assert gap == pytest.approx(gap0 * 0.95**200, rel=1e-6)


def test_triplet_refuses_mismatched_architectures():
    other = DenoiseNetwork.initialize(Architecture(**{**TINY, "width": 8}), np.random.default_rng(0))
    with pytest.raises(ValueError):
        NetworkTriplet(None, tiny_net(0), other)


# ---------------------------------------------------------------- self-consistency metric


def test_self_consistency_is_zero_for_an_exact_student():
    B = 16
    pts = np.zeros(B)
    c = self_consistency(ConsistentHead(0.2, CS, B), ConstNet(0.2), np.zeros((B, 4, 2)), pts, None, CS,
                         np.random.default_rng(0), 2)
    assert c == pytest.approx(0.0, abs=1e-24)


def test_self_consistency_is_positive_and_reproducible():
    pts, poses, a0 = tiny_batch(6, 9)
    net, teacher = tiny_net(30), tiny_net(31)
    c1 = self_consistency(net, teacher, a0, pts, poses, CS, np.random.default_rng(1), 2)
    c2 = self_consistency(net, teacher, a0, pts, poses, CS, np.random.default_rng(1), 2)
    assert c1 == c2 and c1 > 0


@pytest.mark.parametrize("k", [0, 51])
def test_self_consistency_rejects_bad_jump(k):
    pts, poses, a0 = tiny_batch(2, 9)
    with pytest.raises(ValueError):
        self_consistency(tiny_net(30), tiny_net(31), a0, pts, poses, CS, np.random.default_rng(1), k)


# ---------------------------------------------------------------- distillation loop


@pytest.fixture(scope="module")
def tiny_setup():
    ds = generate_dataset("reach-goal", 2, 0, n_points=8)
    net = DenoiseNetwork.initialize(Architecture(**TINY), np.random.default_rng(0))
    teacher = Checkpoint.from_network(net, NoiseSchedule(20), ds.normalizer, ds.task, provenance={"role": "teacher"})
    probe = Probe.from_dataset(ds, ds.normalizer, 8, 0)
    return ds, teacher, probe


def test_zero_epochs_returns_the_teacher_weights(tiny_setup):
    ds, teacher, probe = tiny_setup
    res = distill(teacher, ds, DistillConfig(epochs=0), probe=probe)
    assert res.log == [] and res.checkpoint.is_student
    assert params_digest(res.checkpoint.params) == params_digest(teacher.params)


def test_distill_leaves_teacher_untouched_and_logs(tiny_setup):
    ds, teacher, probe = tiny_setup
    digest = params_digest(teacher.params)
    cfg = DistillConfig(epochs=3, batch_size=32, lr=1e-3, warmup=0, eval_every=2, k=5)
    res = distill(teacher, ds, cfg, probe=probe, evaluate=False)
    assert params_digest(teacher.params) == digest
    assert [r["epoch"] for r in res.log] == [1, 2, 3]
    assert [e["epoch"] for e in res.evals] == [0, 2, 3]
    assert res.log[0]["self_consistency_metric"] is None and res.log[1]["self_consistency_metric"] >= 0
    assert params_digest(res.checkpoint.params) != digest
    assert res.checkpoint.arch == teacher.arch and res.checkpoint.provenance["epochs"] == 3
    again = distill(teacher, ds, cfg, probe=probe, evaluate=False)
    assert params_digest(again.checkpoint.params) == params_digest(res.checkpoint.params)


def test_distill_evaluates_with_the_network_point_count(tiny_setup):
    ds, teacher, probe = tiny_setup
    cfg = DistillConfig(epochs=1, batch_size=32, warmup=0, eval_every=1, eval_episodes=2, k=5)
    res = distill(teacher, ds, cfg, probe=probe)
    assert [e["epoch"] for e in res.evals] == [0, 1]
    assert all(0.0 <= e["success_rate"] <= 1.0 for e in res.evals)


def test_distill_starts_from_the_given_weights(tiny_setup):
    ds, teacher, probe = tiny_setup
    other = Checkpoint.from_network(DenoiseNetwork.initialize(teacher.arch, np.random.default_rng(5)),
                                    teacher.noise, teacher.normalizer, teacher.task)
    res = distill(teacher, ds, DistillConfig(epochs=0), init=other, probe=probe)
    assert params_digest(res.checkpoint.params) == params_digest(other.params)


@pytest.mark.parametrize("kind", ["sample", "epsilon"])
def test_untrained_student_reuses_the_teacher_estimate(kind):
    """Before any step the student's jump at T blends a_T with the teacher's converted prediction."""
    ds = generate_dataset("reach-goal", 1, 0, n_points=8)
    net = DenoiseNetwork.initialize(Architecture(**TINY, prediction_type=kind), np.random.default_rng(1))
    teacher = Checkpoint.from_network(net, SCHED, ds.normalizer, ds.task)
    probe = Probe.from_dataset(ds, ds.normalizer, 4, 0)
    student = distill(teacher, ds, DistillConfig(epochs=0), probe=probe).checkpoint.network()
    tnet = teacher.network()
    a_T = np.random.default_rng(2).normal(size=(4, 4, 2))
    cond = tnet.encode_np(probe.points, probe.poses)
    a0_hat, _ = convert_prediction(tnet.predict(a_T, 100, cond), kind, a_T, 100, SCHED)
    expected = CS.c_skip(100) * a_T + CS.c_out(100) * a0_hat
    np.testing.assert_allclose(consistency_fn(student, a_T, 100, cond, CS, clip=False), expected, atol=1e-9)


def test_distill_rejects_student_teacher(tiny_setup):
    ds, teacher, probe = tiny_setup
    student = distill(teacher, ds, DistillConfig(epochs=0), probe=probe).checkpoint
    with pytest.raises(ValueError):
        distill(student, ds, DistillConfig(epochs=1), probe=probe)
