import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_gradient, rel_err
from serpent import ssm
from serpent.tensor import ShapeError, Tensor, backward, sum_all


def random_discrete(rng, n):
    return ssm.LtiSystem(
        a=-rng.uniform(0.05, 3.0, n),
        b=rng.standard_normal(n),
        c=rng.standard_normal(n),
        delta=float(rng.uniform(0.01, 1.0)),
    ).discretize()


# ---------------------------------------------------------------------------
# discretization

def test_zoh_limit_branch():
    a_bar, b_bar = ssm.discretize_zoh(np.zeros(1), np.ones(1), 0.5)
    assert a_bar[0] == 1.0
    assert b_bar[0] == 0.5


def test_zoh_scalar_closed_form():
    a_bar, b_bar = ssm.discretize_zoh(np.array([-1.0]), np.array([1.0]), 0.1)
    assert abs(a_bar[0] - np.exp(-0.1)) < 1e-12
    assert abs(b_bar[0] - (1.0 - np.exp(-0.1))) < 1e-12


def test_zoh_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        ssm.discretize_zoh(np.array([-1.0]), np.array([1.0]), 0.0)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-50.0, -1e-3), delta=st.floats(1e-4, 10.0))
def test_zoh_stable_systems_contract(a, delta):
    a_bar, _ = ssm.discretize_zoh(np.array([a]), np.array([1.0]), delta)
    assert 0.0 < a_bar[0] < 1.0


def test_lti_system_validation():
    with pytest.raises(ValueError, match="negative"):
        ssm.LtiSystem(a=[0.5], b=[1.0], c=[1.0], delta=0.1)
    with pytest.raises(ValueError, match="delta"):
        ssm.LtiSystem(a=[-0.5], b=[1.0], c=[1.0], delta=-0.1)


# ---------------------------------------------------------------------------
# LTI scans and kernels

def test_kernel_nilpotent_case():
    sys = ssm.DiscreteSystem(a_bar=[0.0], b_bar=[2.0], c=[3.0])
    k = ssm.lti_kernel(sys, 4).taps
    assert np.array_equal(k, [6.0, 0.0, 0.0, 0.0])


def test_kernel_geometric_series():
    sys = ssm.DiscreteSystem(a_bar=[0.5], b_bar=[1.0], c=[1.0])
    assert np.allclose(ssm.lti_kernel(sys, 3).taps, [1.0, 0.5, 0.25])


def test_kernel_monotone_decay_single_mode(rng):
    sys = random_discrete(rng, 1)
    k = np.abs(ssm.lti_kernel(sys, 16).taps)
    assert np.all(k[1:] <= k[:-1] + 1e-15)


def test_impulse_response_equals_kernel(rng):
    sys = random_discrete(rng, 3)
    u = np.zeros(10)
    u[0] = 1.0
    assert np.allclose(ssm.lti_scan_recurrent(sys, u), ssm.lti_kernel(sys, 10).taps)
    assert np.allclose(ssm.lti_scan_convolutional(sys, u), ssm.lti_kernel(sys, 10).taps)


def test_zero_input_zero_output(rng):
    sys = random_discrete(rng, 4)
    assert np.array_equal(ssm.lti_scan_recurrent(sys, np.zeros(8)), np.zeros(8))


def test_lti_scan_linearity(rng):
    sys = random_discrete(rng, 2)
    u = rng.standard_normal(12)
    assert np.allclose(ssm.lti_scan_recurrent(sys, 3.0 * u), 3.0 * ssm.lti_scan_recurrent(sys, u))


def test_empty_sequence_rejected(rng):
    sys = random_discrete(rng, 2)
    with pytest.raises(ValueError, match="empty"):
        ssm.lti_scan_recurrent(sys, [])
    with pytest.raises(ValueError, match="empty"):
        ssm.lti_scan_convolutional(sys, [])


def test_mode_equivalence_grid(rng):
    for n in (1, 2, 4, 8):
        for length in (1, 4, 16, 64):
            for _ in range(4):
                sys = random_discrete(rng, n)
                u = rng.standard_normal(length)
                yr = ssm.lti_scan_recurrent(sys, u)
                yc = ssm.lti_scan_convolutional(sys, u)
                assert rel_err(yr, yc, floor=1e-12) <= 1e-5


def test_scan_mode_dispatch(rng):
    sys = random_discrete(rng, 2)
    u = rng.standard_normal(6)
    assert np.array_equal(ssm.lti_scan(sys, u, ssm.Recurrent()), ssm.lti_scan_recurrent(sys, u))
    assert np.array_equal(ssm.lti_scan(sys, u, ssm.Convolutional()), ssm.lti_scan_convolutional(sys, u))
    with pytest.raises(ValueError):
        ssm.lti_scan(sys, u, ssm.Chunked(4))
    with pytest.raises(ValueError):
        ssm.Chunked(0)


# ---------------------------------------------------------------------------
# selective scans

def test_selective_zero_weights_zero_output(rng):
    e, n = 3, 4
    p = ssm.SelectiveParams(
        a=-np.arange(1.0, n + 1.0) * np.ones((e, n)),
        w_b=np.zeros((e, n)), w_c=np.zeros((e, n)),
        w_delta=np.zeros(e), b_delta=np.full(e, -1.0),
    )
    y = ssm.selective_scan(p, rng.standard_normal((16, e)))
    assert np.array_equal(y, np.zeros((16, e)))


def test_selective_causality_exact(rng):
    p = ssm.SelectiveParams.init(4, 3, rng)
    u = rng.standard_normal((20, 4))
    y0 = ssm.selective_scan(p, u)
    u2 = u.copy()
    u2[11] += rng.standard_normal(4)
    y1 = ssm.selective_scan(p, u2)
    assert np.array_equal(y0[:11], y1[:11])
    assert not np.allclose(y0[11:], y1[11:])


def test_selective_shape_errors(rng):
    p = ssm.SelectiveParams.init(4, 3, rng)
    with pytest.raises(ShapeError):
        ssm.selective_scan(p, rng.standard_normal((5, 3)))
    with pytest.raises(ValueError, match="empty"):
        ssm.selective_scan(p, np.zeros((0, 4)))


def test_chunked_full_chunk_is_identical(rng):
    p = ssm.SelectiveParams.init(5, 4, rng)
    u = rng.standard_normal((33, 5))
    y_seq = ssm.selective_scan(p, u)
    y_full = ssm.selective_scan_chunked(p, u, 33)
    assert rel_err(y_seq, y_full, floor=1e-12) <= 1e-12


@pytest.mark.parametrize("chunk", [1, 4, 16, 256])
def test_chunked_equals_sequential(rng, chunk):
    p = ssm.SelectiveParams.init(8, 4, rng)
    u = rng.standard_normal((256, 8))
    y_seq = ssm.selective_scan(p, u)
    y_ch = ssm.selective_scan_chunked(p, u, chunk)
    assert rel_err(y_seq, y_ch, floor=1e-12) <= 1e-5


def test_chunked_op_count_scales_linearly(rng):
    p = ssm.SelectiveParams.init(6, 3, rng)
    counts = {}
    for length in (128, 256):
        counter = ssm.OpCounter()
        ssm.selective_scan_chunked(p, rng.standard_normal((length, 6)), 16, counter)
        counts[length] = counter.macs
    ratio = counts[256] / counts[128]
    assert 1.9 <= ratio <= 2.1


def test_selective_reduces_to_lti(rng):
    e, n = 4, 3
    b_const = rng.standard_normal(n)
    c_const = rng.standard_normal(n)
    a = -np.tile(np.arange(1.0, n + 1.0), (e, 1))
    p = ssm.SelectiveParams(
        a=a, w_b=np.zeros((e, n)), w_c=np.zeros((e, n)),
        w_delta=np.zeros(e), b_delta=np.full(e, -2.0),
        b_b=b_const, b_c=c_const,
    )
    u = rng.standard_normal((64, e))
    y = ssm.selective_scan(p, u)
    delta = float(np.log1p(np.exp(-2.0)))
    for d in range(e):
        sys = ssm.LtiSystem(a=a[d], b=b_const, c=c_const, delta=delta).discretize()
        y_lti = ssm.lti_scan_recurrent(sys, u[:, d])
        assert rel_err(y[:, d], y_lti, floor=1e-12) <= 1e-6


def test_selective_stability_long_random_walk(rng):
    p = ssm.SelectiveParams.init(2, 4, rng)
    u = np.cumsum(rng.standard_normal((4096, 2)), axis=0) * 0.05
    y = ssm.selective_scan_chunked(p, u, 64)
    assert np.all(np.isfinite(y))


def test_selective_mode_dispatch(rng):
    p = ssm.SelectiveParams.init(3, 2, rng)
    u = rng.standard_normal((12, 3))
    assert np.array_equal(ssm.selective_scan_mode(p, u, ssm.Recurrent()), ssm.selective_scan(p, u))
    assert np.array_equal(
        ssm.selective_scan_mode(p, u, ssm.Chunked(4)), ssm.selective_scan_chunked(p, u, 4)
    )
    with pytest.raises(ValueError):
        ssm.selective_scan_mode(p, u, ssm.Convolutional())


# ---------------------------------------------------------------------------
# fused differentiable scan

def _tensor_params(p: ssm.SelectiveParams):
    return {k: Tensor(getattr(p, k), requires_grad=True)
            for k in ("a", "w_b", "b_b", "w_c", "b_c", "w_delta", "b_delta")}


def _run_fused(u, tp):
    return ssm.selective_scan_tensor(
        u, tp["a"], tp["w_b"], tp["b_b"], tp["w_c"], tp["b_c"], tp["w_delta"], tp["b_delta"]
    )


def test_fused_forward_matches_reference(rng):
    p = ssm.SelectiveParams.init(6, 4, rng)
    u = rng.standard_normal((50, 6))
    tp = _tensor_params(p)
    y = _run_fused(Tensor(u), tp)
    p32 = ssm.SelectiveParams(**{k: tp[k].data.astype(np.float64) for k in tp})
    assert rel_err(y.data, ssm.selective_scan(p32, Tensor(u).data), floor=1e-9) <= 1e-6


def test_fused_gradients_vs_fd(rng):
    p = ssm.SelectiveParams.init(3, 4, rng)
    u = Tensor(rng.standard_normal((8, 3)), requires_grad=True)
    tp = _tensor_params(p)
    backward(sum_all(_run_fused(u, tp)))

    def value():
        p_now = ssm.SelectiveParams(**{k: tp[k].data.astype(np.float64) for k in tp})
        return float(ssm.selective_scan(p_now, u.data.astype(np.float64)).sum())

    for name in ("a", "w_b", "w_c", "w_delta", "b_delta", "b_b", "b_c"):
        num = fd_gradient(value, tp[name], h=1e-4)
        assert rel_err(tp[name].grad, num) <= 2e-3, name
    assert rel_err(u.grad, fd_gradient(value, u, h=1e-4)) <= 2e-3
