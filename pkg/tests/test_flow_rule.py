"""Pointwise flow-rule maps: projection, smoothing and derivatives."""

import numpy as np
import pytest

from plastodyn import (
    FlowRuleParams,
    project_K,
    smooth_max,
    smooth_resolvent,
    smooth_resolvent_deriv,
    yosida_A,
    yosida_gap_bound,
)
from plastodyn.flow_rule import (
    project_K_deriv_matrices,
    smooth_resolvent_deriv_matrices,
)
from plastodyn.tensors import deviator, voigt_dim

rng = np.random.default_rng(7)
GAMMA = 1.0


def sample(dim, n, scale=3.0):
    return rng.uniform(-scale * GAMMA, scale * GAMMA, size=(n, voigt_dim(dim)))


def test_params_validation():
    with pytest.raises(ValueError):
        FlowRuleParams(gamma=-1.0, lam=0.1, s=0.5)
    with pytest.raises(ValueError):
        FlowRuleParams(gamma=1.0, lam=0.0, s=0.5)
    with pytest.raises(ValueError):
        FlowRuleParams(gamma=1.0, lam=0.1, s=1.0)


@pytest.mark.parametrize("dim", [2, 3])
def test_projection_basic(dim):
    t = sample(dim, 500)
    p = project_K(t, GAMMA, dim)
    nd = np.linalg.norm(deviator(p, dim), axis=-1)
    assert np.all(nd <= GAMMA + 1e-12)
    # idempotent, identity inside K
    assert np.allclose(project_K(p, GAMMA, dim), p, atol=1e-12)
    inside = np.linalg.norm(deviator(t, dim), axis=-1) <= GAMMA
    assert np.allclose(p[inside], t[inside], atol=1e-14)
    # trace (volumetric part) untouched
    assert np.allclose(p[:, :dim].sum(axis=1), t[:, :dim].sum(axis=1), atol=1e-12)


def test_yosida_A_definition():
    dim, lam = 2, 0.1
    params = FlowRuleParams(gamma=GAMMA, lam=lam, s=0.5)
    t = sample(dim, 300)
    expected = (t - project_K(t, GAMMA, dim)) / lam
    assert np.allclose(yosida_A(t, params, dim), expected, atol=1e-12)


def test_smooth_max_blend():
    s = 0.3
    r = np.linspace(-2, 2, 2001)
    val, der = smooth_max(r, s)
    outside = np.abs(r) >= s
    assert np.allclose(val[outside], np.maximum(0.0, r[outside]), atol=1e-14)
    # C^1 continuity at the seams
    for seam in (-s, s):
        v1, d1 = smooth_max(seam - 1e-10, s)
        v2, d2 = smooth_max(seam + 1e-10, s)
        assert abs(v1 - v2) < 1e-9
        assert abs(d1 - d2) < 1e-6
    # convexity of the blend: derivative nondecreasing
    assert np.all(np.diff(der) >= -1e-14)
    with pytest.raises(ValueError):
        smooth_max(0.0, 1.5)


@pytest.mark.parametrize("dim", [2, 3])
def test_smooth_resolvent_limits(dim):
    s = 0.2
    t = sample(dim, 2000)
    R = smooth_resolvent(t, GAMMA, s, dim)
    nd = np.linalg.norm(deviator(t, dim), axis=-1)
    # identity region: argument below the blend band
    ident = nd * (1 + s) <= GAMMA
    assert np.allclose(R[ident], t[ident], atol=1e-14)
    # far outside the band the smoothing is inactive
    far = (1 - GAMMA / np.maximum(nd, 1e-30)) >= s
    assert np.allclose(R[far], project_K(t[far], GAMMA, dim), atol=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_smooth_resolvent_deriv_fd(dim):
    s = 0.25
    t = sample(dim, 200)
    h = rng.normal(size=t.shape)
    eps = 1e-6
    fd = (smooth_resolvent(t + eps * h, GAMMA, s, dim)
          - smooth_resolvent(t - eps * h, GAMMA, s, dim)) / (2 * eps)
    jvp = smooth_resolvent_deriv(t, h, GAMMA, s, dim)
    err = np.linalg.norm(jvp - fd) / np.linalg.norm(fd)
    assert err < 1e-7
    # matrix form agrees with the matrix-free action
    mats = smooth_resolvent_deriv_matrices(t, GAMMA, s, dim)
    assert np.allclose(np.einsum("nij,nj->ni", mats, h), jvp, atol=1e-12)
    # pointwise self-adjoint
    assert np.allclose(mats, np.swapaxes(mats, -1, -2), atol=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_projection_deriv_matrices(dim):
    t = sample(dim, 500)
    mats = project_K_deriv_matrices(t, GAMMA, dim)
    nd = np.linalg.norm(deviator(t, dim), axis=-1)
    inside = nd <= GAMMA
    m = t.shape[-1]
    assert np.allclose(mats[inside], np.eye(m), atol=1e-14)
    # semismooth derivative matches FD away from the yield surface
    smooth_pts = np.abs(nd - GAMMA) > 1e-3
    h = rng.normal(size=t.shape)
    eps = 1e-7
    fd = (project_K(t + eps * h, GAMMA, dim) - project_K(t - eps * h, GAMMA, dim)) / (2 * eps)
    act = np.einsum("nij,nj->ni", mats, h)
    assert np.allclose(act[smooth_pts], fd[smooth_pts], atol=1e-5)


def test_gap_bound_value_and_validity():
    params = FlowRuleParams(gamma=2.0, lam=0.25, s=0.4)
    bound = yosida_gap_bound(params)
    assert bound == pytest.approx(2.0 * 0.4 / (4 * 0.25 * 0.6), rel=1e-14)
    # sampled gap never exceeds the bound (small sample; the large sweep
    # lives in the acceptance suite)
    dim = 2
    t = sample(dim, 20000)
    p = FlowRuleParams(gamma=GAMMA, lam=0.1, s=0.3)
    A_yos = yosida_A(t, p, dim)
    A_smooth = (t - smooth_resolvent(t, p.gamma, p.s, dim)) / p.lam
    gap = np.linalg.norm(A_yos - A_smooth, axis=-1)
    assert gap.max() <= yosida_gap_bound(p) + 1e-14
