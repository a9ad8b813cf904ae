import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

import ctin.autodiff as ad
from ctin.autodiff import Tensor, grad_check
from ctin.dataio import SyntheticSpec, gen_synthetic
from ctin.losses import LOSS_KINDS, MultiTaskParams, cnl, compute_loss, ivl, mse_loss, multitask_loss
from ctin.model import Ctx, ModelConfig, ctin_apply, init_params
from ctin.pipeline import extract_window

DT = 0.005


def _val(x):
    return float(x.value)


def test_mse_cases(rng):
    gt = rng.standard_normal((20, 2))
    assert _val(mse_loss(gt, gt)) == 0.0
    assert _val(mse_loss(gt + 1, gt)) == 1.0
    pred = rng.standard_normal((20, 2))
    oracle = sum((pred[i, j] - gt[i, j]) ** 2 for i in range(20) for j in range(2)) / 40
    assert abs(_val(mse_loss(pred, gt)) - oracle) < 1e-12


def test_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        mse_loss(np.zeros((3, 2)), np.zeros((4, 2)))


def test_ivl_zero_at_perfect_prediction():
    seq = gen_synthetic(SyntheticSpec("random-heading-walk", duration=3.0, surge_amplitude=1.0, rng_seed=2))
    w = extract_window(seq, 50, 200)
    assert abs(_val(ivl(w.gt_vel, w.gt_vel, w.gt_pos, w.gt_pos[0], w.dt))) < 1e-12


def _line(m, dt=DT, v=(1.0, -0.5)):
    vel = np.tile(v, (m, 1))
    pos = np.arange(m)[:, None] * dt * np.asarray(v)
    return vel, pos


@pytest.mark.parametrize("m", [1, 2, 10, 200])
def test_ivl_constant_error_closed_form(m):
    vel, pos = _line(m)
    e = np.array([0.3, 0.4])
    got = _val(ivl(vel + e, vel, pos, dt=DT))
    # displacement error at row t is t dt e, cumulative error is (t + 1) dt e
    t = np.arange(m)
    expected = np.mean(t**2 + (t + 1) ** 2) * DT**2 * (e @ e)
    assert abs(got - expected) <= 1e-12 * max(expected, 1e-300)


def test_ivl_dt_homogeneity(rng):
    vel, _ = _line(50)
    err = rng.standard_normal((50, 2))
    a = _val(ivl(vel + err, vel, _line(50, DT)[1], dt=DT))
    b = _val(ivl(vel + err, vel, _line(50, 2 * DT)[1], dt=2 * DT))
    assert abs(b - 4 * a) < 1e-12 * b


@given(st.integers(0, 2**32 - 1))
def test_ivl_nonnegative(seed):
    r = np.random.default_rng(seed)
    assert _val(ivl(r.standard_normal((2, 9, 2)), r.standard_normal((2, 9, 2)), r.standard_normal((2, 9, 2)))) >= 0


def test_ivl_translation_invariant(rng):
    vel, pos = _line(30)
    pred = vel + rng.standard_normal((30, 2))
    a, b = _val(ivl(pred, vel, pos)), _val(ivl(pred, vel, pos + [100.0, -3.0]))
    assert abs(a - b) < 1e-12 * a


def test_cnl_cases():
    z = np.zeros((5, 2))
    assert _val(cnl(z, np.ones((5, 2)), z)) == 0.0
    assert _val(cnl(z, np.ones((5, 2)), np.ones((5, 2)))) == 1.0


def test_cnl_factorizes_into_gaussian_nll(rng):
    pred, gt = rng.standard_normal((30, 2)), rng.standard_normal((30, 2))
    var = np.exp(rng.standard_normal((30, 2)))
    # per-axis Gaussian NLL without the 0.5 ln(2 pi) constant
    per_axis = -norm.logpdf(gt, loc=pred, scale=np.sqrt(var)) - 0.5 * np.log(2 * np.pi)
    oracle = per_axis.sum(axis=1).mean()
    assert abs(_val(cnl(pred, var, gt)) - oracle) < 1e-12


def test_cnl_stationary_point_scan():
    e = np.array([[0.7, 1.9]])
    grid = np.linspace(0.05, 6.0, 2000)
    for axis in range(2):
        vals = []
        for s in grid:
            var = e**2
            var[0, axis] = s
            vals.append(_val(cnl(np.zeros((1, 2)), var, e)))
        other = 0.5 * (1 + np.log(e[0, 1 - axis] ** 2))
        best = grid[int(np.argmin(vals))]
        assert abs(best - e[0, axis] ** 2) < grid[1] - grid[0]
        at_opt = _val(cnl(np.zeros((1, 2)), e**2, e))
        assert abs(at_opt - other - 0.5 * (1 + np.log(e[0, axis] ** 2))) < 1e-12


def test_cnl_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        cnl(np.zeros((2, 2)), np.array([[1.0, 0.0], [1.0, 1.0]]), np.zeros((2, 2)))


def test_multitask_at_unit_noise_is_half_sum():
    mt = MultiTaskParams()
    assert _val(multitask_loss(Tensor(0.8), Tensor(-0.3), mt)) == (0.8 + -0.3) / 2


def test_multitask_log_variance_gradients():
    lv, lc = 0.7, 2.5
    mt = MultiTaskParams()
    res = grad_check(lambda a, b: multitask_loss(Tensor(lv), Tensor(lc), MultiTaskParams(a, b)), [mt.log_var_v, mt.log_var_c])
    assert res.max_rel_error < 1e-6
    mt = MultiTaskParams()
    ad.backward(multitask_loss(Tensor(lv), Tensor(lc), mt))
    assert abs(mt.log_var_v.grad - 0.5 * (1 - lv)) < 1e-15
    assert abs(mt.log_var_c.grad - 0.5 * (1 - lc)) < 1e-15


def test_multitask_zero_losses_push_variances_down():
    mt = MultiTaskParams()
    out = multitask_loss(Tensor(0.0), Tensor(0.0), mt)
    assert _val(out) == 0.0
    ad.backward(out)
    # positive gradient: a descent step lowers both log-variances
    assert mt.log_var_v.grad == 0.5 and mt.log_var_c.grad == 0.5


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(-5, 10)), min_size=2, max_size=8), st.floats(-3, 3))
def test_multitask_ranks_like_the_plain_sum(pairs, s):
    mt = MultiTaskParams(Tensor(s), Tensor(s))
    weighted = [_val(multitask_loss(Tensor(a), Tensor(b), mt)) for a, b in pairs]
    plain = [a + b for a, b in pairs]
    for i in range(len(pairs)):
        for j in range(len(pairs)):
            if plain[i] < plain[j] - 1e-9:
                assert weighted[i] < weighted[j]


def test_attach_registers_in_store():
    store = init_params(ModelConfig(window_len=4, model_dim=8, heads=2, decoder_layers=1), 0)
    mt = MultiTaskParams.attach(store)
    assert "mt.log_var_v" in store and mt.log_var_c is store["mt.log_var_c"]
    assert MultiTaskParams.attach(store).log_var_v is mt.log_var_v


@pytest.mark.parametrize("kind", ["mse", "ivl", "cnl"])
def test_losses_compose_with_model(kind):
    cfg = ModelConfig(window_len=6, model_dim=8, heads=2, decoder_layers=1, ffn_dim=8)
    store = init_params(cfg, seed=4)
    rng = np.random.default_rng(5)
    for _, p in store.items():
        p.value += 0.3 * rng.standard_normal(p.shape)
    imu, gv = rng.standard_normal((2, 6, 6)), rng.standard_normal((2, 6, 2))
    gp = np.cumsum(gv, axis=1) * 0.1

    def f(*_):
        vel, cov = ctin_apply(store, imu, cfg, Ctx(train=False))
        return compute_loss(kind, vel, cov, gv, gp, 0.1)

    names = [n for n in store.names() if n.startswith(("head.", "decoder.layer0.ffn", "temporal.proj"))]
    res = grad_check(f, [store[n] for n in names], h=1e-5, max_coords=4)
    assert res.max_rel_error < 1e-4, res.worst


def test_compute_loss_dispatch():
    z = np.zeros((1, 3, 2))
    assert set(LOSS_KINDS) == {"mse", "ivl", "cnl", "ivl+cnl"}
    with pytest.raises(ValueError):
        compute_loss("huber", z, z + 1, z, z, DT)
    with pytest.raises(ValueError):
        compute_loss("ivl+cnl", z, z + 1, z, z, DT)
