import numpy as np
import pytest

from imuloc import kernels
from imuloc.backend import NUMBA_ENABLED
from imuloc.config import FitConfig
from imuloc.errors import ConfigurationError, FitDivergedError
from imuloc.fit import (
    Segment,
    build_segments,
    dead_reckon,
    fb_loss,
    fit_segment,
    fit_trajectory,
    integrate_backward,
    integrate_forward,
)
from imuloc.sim import ControlPoint, ImuSeries, place_control_points, simulate_imu, simulate_trajectory
from imuloc.config import ControlPointConfig, ImuNoiseConfig

from conftest import make_scenario


def naive_dead_reckon(accel, x0, v0, dt):
    """Independent loop oracle for the double-integration scheme."""
    n, d = accel.shape
    x = [np.array(x0, dtype=float)]
    v = [np.array(v0, dtype=float)]
    for k in range(n):
        v.append(v[-1] + accel[k] * dt[k])
        x.append(x[-1] + v[-1] * dt[k])
    return np.array(x), np.array(v)


def random_segment(rng, n=20, d=2, dt_scale=0.16):
    dt = rng.uniform(0.5, 1.5, n) * dt_scale
    accel = rng.normal(0, 1, (n, d))
    x0 = rng.normal(0, 1, d)
    v0 = rng.normal(0, 0.5, d)
    xf, vf = naive_dead_reckon(accel, x0, v0, dt)
    xn = xf[-1] + rng.normal(0, 0.3, d)
    vn = vf[-1] + rng.normal(0, 0.1, d)
    return Segment(dt, accel, x0, v0, xn, vn)


# ---------------------------------------------------------------------------
# dead_reckon
# ---------------------------------------------------------------------------

def test_dead_reckon_constant_velocity():
    x, v = dead_reckon(np.zeros((3, 2)), [0, 0], [1, 0], np.ones(3))
    assert np.allclose(x[1:], [[1, 0], [2, 0], [3, 0]])


def test_dead_reckon_hand_unrolled_unit_accel():
    x, v = dead_reckon(np.tile([1.0, 0.0], (3, 1)), [0, 0], [0, 0], np.ones(3))
    assert np.allclose(v[1:, 0], [1, 2, 3])
    assert np.allclose(x[1:, 0], [1, 3, 6])


def test_dead_reckon_matches_loop_oracle(rng):
    for _ in range(10):
        n = int(rng.integers(1, 60))
        accel = rng.normal(0, 2, (n, 2))
        dt = rng.uniform(0.01, 1.0, n)
        x0, v0 = rng.normal(0, 5, 2), rng.normal(0, 1, 2)
        x, v = dead_reckon(accel, x0, v0, dt)
        ox, ov = naive_dead_reckon(accel, x0, v0, dt)
        assert np.max(np.abs(x - ox)) < 1e-12
        assert np.max(np.abs(v - ov)) < 1e-12


# ---------------------------------------------------------------------------
# forward / backward integration
# ---------------------------------------------------------------------------

def test_forward_equals_dead_reckon_with_zero_corrections(rng):
    seg = random_segment(rng)
    x, v = integrate_forward(seg, np.zeros_like(seg.accel_imu))
    ox, ov = dead_reckon(seg.accel_imu, seg.x_start, seg.v_start, seg.dt)
    assert np.array_equal(x, ox) and np.array_equal(v, ov)


def test_backward_inverts_forward(rng):
    for _ in range(5):
        seg = random_segment(rng, n=int(rng.integers(1, 40)))
        cor = rng.normal(0, 0.1, seg.accel_imu.shape)
        xf, vf = integrate_forward(seg, cor)
        seg2 = Segment(seg.dt, seg.accel_imu, seg.x_start, seg.v_start,
                       xf[-1], vf[-1])
        xb, vb = integrate_backward(seg2, cor)
        assert np.max(np.abs(xb - xf)) < 1e-12
        assert np.max(np.abs(vb - vf)) < 1e-12
        assert xf.shape == (seg.n_steps + 1, 2)


def test_kernels_numba_and_numpy_paths_agree(rng):
    seg = random_segment(rng, n=37)
    cor = rng.normal(0, 0.05, seg.accel_imu.shape)
    anchors = rng.normal(0, 1, (38, 2))
    mask = rng.random(38) < 0.5
    args = (cor, seg.accel_imu, seg.dt, seg.x_start, seg.v_start,
            seg.x_end, seg.v_end, 1.0, 1e3, 1e4, anchors, mask)
    a = kernels.fb_loss_grad_np(*args)
    b = kernels.fb_loss_grad_nb(*args)
    for va, vb in zip(a, b):
        assert np.allclose(va, vb, rtol=1e-10, atol=1e-12)
    xa = kernels.integrate_forward_np(seg.accel_imu, seg.dt, seg.x_start, seg.v_start)
    xb = kernels.integrate_forward_nb(seg.accel_imu, seg.dt, seg.x_start, seg.v_start)
    assert np.allclose(xa[0], xb[0], rtol=1e-12)
    q = rng.normal(0, 1, (5, 11))
    t = rng.normal(0, 1, (9, 11))
    assert np.allclose(kernels.l1_distances_np(q, t), kernels.l1_distances_nb(q, t))


# ---------------------------------------------------------------------------
# fb_loss
# ---------------------------------------------------------------------------

def consistent_segment(rng, n=20):
    """Noise-free segment: anchors taken from the true integration."""
    dt = np.full(n, 0.16)
    accel = rng.normal(0, 1, (n, 2))
    x0, v0 = np.zeros(2), np.array([0.2, 0.1])
    x, v = naive_dead_reckon(accel, x0, v0, dt)
    return Segment(dt, accel, x0, v0, x[-1], v[-1]), x, v


def test_fb_loss_zero_for_noise_free_segment(rng):
    seg, _, _ = consistent_segment(rng)
    total, lx, lv, lr, grad = fb_loss(seg, np.zeros_like(seg.accel_imu), FitConfig())
    assert total < 1e-20 and lx < 1e-22 and lv < 1e-22 and lr == 0.0


def test_fb_loss_anchored_zero_when_anchors_match(rng):
    seg, x, _ = consistent_segment(rng)
    total, lx, *_ = fb_loss(seg, np.zeros_like(seg.accel_imu), FitConfig(),
                            model_anchors=x)
    assert total < 1e-20 and lx < 1e-22


def test_fb_loss_reg_quadratic_homogeneity(rng):
    seg = random_segment(rng)
    cfg = FitConfig()
    cor = rng.normal(0, 0.1, seg.accel_imu.shape)
    _, _, _, lr1, _ = fb_loss(seg, cor, cfg)
    _, _, _, lr3, _ = fb_loss(seg, 3.0 * cor, cfg)
    assert np.isclose(lr3, 9.0 * lr1, rtol=1e-12)


def fd_gradient(fn, cor, eps=1e-6):
    g = np.zeros_like(cor)
    for i in range(cor.shape[0]):
        for j in range(cor.shape[1]):
            cp = cor.copy()
            cp[i, j] += eps
            cm = cor.copy()
            cm[i, j] -= eps
            g[i, j] = (fn(cp) - fn(cm)) / (2 * eps)
    return g


@pytest.mark.parametrize("mode", ["plain", "anchored", "masked"])
def test_fb_gradient_matches_finite_differences(rng, mode):
    cfg = FitConfig()
    for _ in range(5):
        seg = random_segment(rng, n=20)
        anchors = mask = None
        if mode != "plain":
            anchors = rng.normal(0, 1, (21, 2))
            if mode == "masked":
                mask = rng.random(21) < 0.5
        cor = rng.normal(0, 0.05, seg.accel_imu.shape)
        total, _, _, _, grad = fb_loss(seg, cor, cfg, anchors, mask)

        def f(c):
            return fb_loss(seg, c, cfg, anchors, mask)[0]

        gfd = fd_gradient(f, cor)
        denom = np.maximum(np.abs(gfd), 1e-8)
        assert np.max(np.abs(grad - gfd) / denom) < 1e-5


# ---------------------------------------------------------------------------
# fit_segment
# ---------------------------------------------------------------------------

def test_fit_segment_noise_free_fixed_point(rng):
    seg, x_true, _ = consistent_segment(rng, n=60)
    res = fit_segment(seg, FitConfig(), seed=0)
    assert np.max(np.abs(res.corrections)) <= 1e-3
    assert np.max(np.abs(res.pseudo_labels - x_true)) <= 1e-3
    assert np.array_equal(res.x_fwd[0], seg.x_start)
    assert np.array_equal(res.x_bwd[-1], seg.x_end)
    assert np.array_equal(res.pseudo_labels, 0.5 * (res.x_fwd + res.x_bwd))


def closed_form_optimum(seg, cfg, anchors=None, mask=None):
    """The objective is exactly quadratic in the corrections: recover the
    minimizer from gradients of basis vectors via a dense solve."""
    n, d = seg.accel_imu.shape
    zero = np.zeros((n, d))
    g0 = fb_loss(seg, zero, cfg, anchors, mask)[4].ravel()
    h = np.empty((n * d, n * d))
    for idx in range(n * d):
        e = np.zeros(n * d)
        e[idx] = 1.0
        g = fb_loss(seg, e.reshape(n, d), cfg, anchors, mask)[4].ravel()
        h[:, idx] = g - g0
    return np.linalg.solve(h, -g0).reshape(n, d)


def test_fit_segment_absorbs_constant_bias():
    # straight line, biased IMU, exact anchors: mean correction ~= -bias
    n, dt = 200, 0.16
    dts = np.full(n, dt)
    t = np.arange(n + 1) * dt
    v_true = np.array([0.2, 0.0])
    x = t[:, None] * v_true
    bias = np.array([0.12, -0.07])
    seg = Segment(dts, np.tile(bias, (n, 1)), x[0], v_true, x[-1], v_true)
    res = fit_segment(seg, FitConfig(), seed=0)
    mean_cor = res.corrections.mean(axis=0)
    assert np.all(np.abs(mean_cor + bias) <= 0.1 * np.abs(bias))
    # and the mean matches the closed-form least-squares optimum
    opt = closed_form_optimum(seg, FitConfig())
    assert np.allclose(mean_cor, opt.mean(axis=0), atol=0.1 * np.abs(bias).min())


@pytest.mark.parametrize("n", [4, 10])
def test_fit_segment_matches_quadratic_oracle(rng, n):
    seg = random_segment(rng, n=n)
    cfg = FitConfig(steps=4000)
    res = fit_segment(seg, cfg, seed=1)
    opt = closed_form_optimum(seg, cfg)
    assert np.max(np.abs(res.corrections - opt)) < 1e-3


def test_fit_segment_divergence_reports_step(rng):
    seg = random_segment(rng, n=30)
    seg.accel_imu[11, 0] = np.nan
    with pytest.raises(FitDivergedError) as exc:
        fit_segment(seg, FitConfig(steps=500), seed=0)
    assert exc.value.step == 0
    assert "step 0" in str(exc.value)


def test_fit_segment_long_segment_stays_stable(rng):
    # step size is auto-capped at the stability bound for long segments
    seg = random_segment(rng, n=2500)
    res = fit_segment(seg, FitConfig(steps=200), seed=0)
    assert np.isfinite(res.loss_total)
    assert res.loss_total <= res.initial_loss


def test_fit_segment_backstop_halves_unstable_step(rng, monkeypatch):
    # force an unstable step size past the cap: the halving backstop must
    # still return an improved iterate
    import imuloc.fit as fit_mod
    monkeypatch.setattr(fit_mod, "_stable_lr", lambda args, shape, lr, rng: 1e-4)
    seg = random_segment(rng, n=2000)
    res = fit_segment(seg, FitConfig(steps=300), seed=0)
    assert np.isfinite(res.loss_total)
    assert res.loss_total < res.initial_loss
    assert res.best_step > 0


def test_fit_segment_best_iterate_non_worsening(rng):
    seg = random_segment(rng, n=40)
    losses = []
    for steps in (20, 100, 400):
        res = fit_segment(seg, FitConfig(steps=steps), seed=3)
        losses.append(res.loss_total)
        assert res.loss_total <= res.initial_loss
    assert losses[2] <= losses[1] <= losses[0]


# ---------------------------------------------------------------------------
# fit_trajectory
# ---------------------------------------------------------------------------

def traj_and_imu(seed=0, n=400, noise=True):
    cfg = make_scenario()
    cfg.walker.n_samples = n
    ts = simulate_trajectory(cfg, seed=seed)
    imu_cfg = ImuNoiseConfig(seed=seed) if noise else ImuNoiseConfig(
        temperature_scale_factor=0, constant_bias=0, temperature_bias=0,
        noise_density=0, seed=seed)
    return ts, simulate_imu(ts, imu_cfg)


def cp_at(ts, indices, radius=0.0):
    out = []
    for i in indices:
        out.append(ControlPoint(i, ts.positions[i].copy(),
                                ts.velocities[i].copy(), radius, 0))
    return out


def test_fit_trajectory_segment_counts():
    ts, imu = traj_and_imu()
    segs, loose = build_segments(imu, cp_at(ts, [0, 399]))
    assert len(segs) == 1 and loose == []
    segs, loose = build_segments(imu, cp_at(ts, [0, 100, 250, 399]))
    assert len(segs) == 3 and loose == []
    segs, loose = build_segments(imu, cp_at(ts, [50, 350]))
    assert len(segs) == 1
    assert [k for k, _ in loose] == ["head", "tail"]


def test_fit_trajectory_zero_control_points_rejected():
    _, imu = traj_and_imu()
    with pytest.raises(ConfigurationError):
        fit_trajectory(imu, [], FitConfig(), seed=0)


def test_fit_trajectory_zero_noise_pseudo_labels_exact():
    ts, imu = traj_and_imu(noise=False)
    cps = cp_at(ts, [0, 100, 200, 300, 399])
    tf = fit_trajectory(imu, cps, FitConfig(), seed=0)
    err = np.linalg.norm(tf.pseudo_labels - ts.positions, axis=1)
    assert np.max(err) <= 1e-3
    assert not tf.one_sided.any()


def test_fit_trajectory_one_sided_fallback_flagged():
    ts, imu = traj_and_imu(noise=False)
    tf = fit_trajectory(imu, cp_at(ts, [100, 300]), FitConfig(), seed=0)
    assert tf.one_sided[:100].all() and tf.one_sided[301:].all()
    assert not tf.one_sided[100:301].any()
    # zero-noise dead reckoning is exact even one-sided
    err = np.linalg.norm(tf.pseudo_labels - ts.positions, axis=1)
    assert np.max(err) <= 1e-3


def test_fit_trajectory_beats_dead_reckoning_with_noise():
    ts, imu = traj_and_imu(seed=2, noise=True)
    cps = cp_at(ts, [0, 100, 200, 300, 399])
    tf = fit_trajectory(imu, cps, FitConfig(), seed=0)
    fb_err = np.linalg.norm(tf.pseudo_labels - ts.positions, axis=1)
    dr_err = np.linalg.norm(tf.dead_reckoning - ts.positions, axis=1)
    assert np.median(fb_err) < np.median(dr_err) / 3


def test_fit_trajectory_anchor_samples_take_cp_positions():
    ts, imu = traj_and_imu(noise=True)
    cps = cp_at(ts, [0, 150, 399])
    tf = fit_trajectory(imu, cps, FitConfig(), seed=0)
    for cp in cps:
        assert np.array_equal(tf.pseudo_labels[cp.sample_index], cp.position)


def test_fit_trajectory_deterministic():
    ts, imu = traj_and_imu(seed=5)
    cps = cp_at(ts, [0, 200, 399])
    a = fit_trajectory(imu, cps, FitConfig(steps=50), seed=9)
    b = fit_trajectory(imu, cps, FitConfig(steps=50), seed=9)
    assert a.pseudo_labels.tobytes() == b.pseudo_labels.tobytes()
