import json

import numpy as np
import pytest

from platoonmpc.core import WeightSchedule
from platoonmpc.decomposition import (decompose_pd, decompose_psd, local_objectives,
                                      stage_blocks)
from platoonmpc.problem import build_qcqp, eval_objective

from conftest import dense_hessian_oracle, random_state, random_weights, small_config


def test_single_stage_blocks_are_scalars(rng):
    tau = 0.7
    w = random_weights(rng, 4, 1)
    sb = stage_blocks(w, tau)
    for i, U in enumerate(sb.blocks):
        expected = tau ** 2 * (tau ** 2 * w.q_gap[0, i] / 4 + w.q_rate[0, i] + w.q_ride[0, i])
        assert U.shape == (1, 1)
        assert U[0, 0] == pytest.approx(expected, rel=1e-12)


def test_ride_only_blocks_are_scaled_identity():
    w = WeightSchedule(np.zeros((3, 4)), np.zeros((3, 4)), np.ones((3, 4)))
    sb = stage_blocks(w, tau=2.0)
    for U in sb.blocks:
        np.testing.assert_allclose(U, 4.0 * np.eye(3), atol=1e-14)


def test_block_assembly_matches_dense_oracle(rng):
    for (n, p) in [(2, 2), (5, 3), (3, 1)]:
        w = random_weights(rng, n, p)
        sb = stage_blocks(w, tau=1.0)
        diag = [sb.blocks[i] + (sb.blocks[i + 1] if i + 1 < n else 0) for i in range(n)]
        W = np.zeros((n * p, n * p))
        for i in range(n):
            W[i * p:(i + 1) * p, i * p:(i + 1) * p] = diag[i]
            if i + 1 < n:
                W[i * p:(i + 1) * p, (i + 1) * p:(i + 2) * p] = -sb.blocks[i + 1]
                W[(i + 1) * p:(i + 2) * p, i * p:(i + 1) * p] = -sb.blocks[i + 1]
        np.testing.assert_allclose(W, dense_hessian_oracle(w, 1.0), atol=1e-11)


def test_three_agent_unit_chain_eigen_values():
    # unit stage blocks: the leading half-block is [[1, -.5], [-.5, .5]]
    w = WeightSchedule(np.zeros((1, 3)), np.zeros((1, 3)), np.ones((1, 3)) / 1.0)
    sb = stage_blocks(w, tau=1.0)
    assert sb.blocks[0][0, 0] == pytest.approx(1.0)
    dec = decompose_pd(sb, delta_fraction=0.5)
    lam_min_lead = (3 - np.sqrt(5)) / 4  # eigen-solve of the 2x2 half block
    assert dec.deltas[0] == pytest.approx(lam_min_lead / 2, rel=1e-12)
    lead = dec.parts[0].matrix
    np.testing.assert_allclose(lead + dec.deltas[0] * np.eye(2),
                               0.5 * np.array([[2.0, -1.0], [-1.0, 1.0]]), atol=1e-14)


@pytest.mark.parametrize("n,p", [(2, 1), (2, 3), (3, 2), (6, 2), (10, 5)])
def test_pd_decomposition_reconstructs_hessian(rng, n, p):
    w = random_weights(rng, n, p)
    sb = stage_blocks(w, tau=1.0)
    dec = decompose_pd(sb)
    W = dense_hessian_oracle(w, 1.0)
    total = sum(dec.embedded(i) for i in range(n))
    assert np.linalg.norm(total - W) <= 1e-10 * np.linalg.norm(W)
    for part in dec.parts:
        assert part.lambda_min > 0


def test_psd_decomposition_reconstructs_hessian(rng):
    n, p = 5, 2
    w = random_weights(rng, n, p)
    sb = stage_blocks(w, tau=1.0)
    dec = decompose_psd(sb)
    W = dense_hessian_oracle(w, 1.0)
    total = sum(dec.embedded(i) for i in range(n))
    np.testing.assert_allclose(total, W, atol=1e-11)
    for part in dec.parts:
        assert part.lambda_min >= -1e-12


def test_topology_respected(rng):
    n, p = 6, 2
    dec = decompose_pd(stage_blocks(random_weights(rng, n, p), tau=1.0))
    for i, part in enumerate(dec.parts):
        allowed = {j for j in (i - 1, i, i + 1) if 0 <= j < n}
        assert set(part.vehicles) <= allowed
        emb = dec.embedded(i)
        for a in range(n):
            for b in range(n):
                if a not in part.vehicles or b not in part.vehicles:
                    assert np.all(emb[a * p:(a + 1) * p, b * p:(b + 1) * p] == 0.0)


def test_scale_equivariance(rng):
    n, p = 4, 2
    w = random_weights(rng, n, p)
    dec1 = decompose_pd(stage_blocks(w, tau=1.0))
    dec2 = decompose_pd(stage_blocks(w.scaled(3.0), tau=1.0))
    for a, b in zip(dec1.parts, dec2.parts):
        np.testing.assert_allclose(3.0 * a.matrix, b.matrix, rtol=1e-12)


def test_local_objectives_sum_to_central(rng):
    n, p = 5, 2
    cfg = small_config(n, p)
    w = random_weights(rng, n, p)
    state = random_state(rng, cfg)
    prob = build_qcqp(state, cfg, w)
    dec = decompose_pd(stage_blocks(w, cfg.tau))
    objs = local_objectives(dec, prob.c)

    u = np.zeros(n * p)
    assert sum(o.value(u, p) for o in objs) == 0.0
    for _ in range(5):
        u = rng.normal(size=n * p)
        total = sum(o.value(u, p) for o in objs)
        assert total == pytest.approx(eval_objective(prob, u), rel=1e-10)

    # gradient assembled from the parts matches the central gradient
    u = rng.normal(size=n * p)
    grad = np.zeros(n * p)
    for o in objs:
        o.grad_contribution(u, p, grad)
    central = prob.hessian_matvec(u) + prob.c
    np.testing.assert_allclose(grad, central, rtol=1e-10, atol=1e-12)

    # finite differences of the summed parts agree too
    fd = np.zeros(n * p)
    eps = 1e-6
    for idx in range(n * p):
        up = u.copy()
        um = u.copy()
        up[idx] += eps
        um[idx] -= eps
        fd[idx] = (sum(o.value(up, p) for o in objs) - sum(o.value(um, p) for o in objs)) / (2 * eps)
    np.testing.assert_allclose(fd, central, rtol=1e-5, atol=1e-5)


def test_delta_fraction_validation(rng):
    sb = stage_blocks(random_weights(rng, 3, 1), tau=1.0)
    with pytest.raises(ValueError):
        decompose_pd(sb, delta_fraction=1.5)


def test_debug_json(rng):
    dec = decompose_pd(stage_blocks(random_weights(rng, 3, 2), tau=1.0))
    payload = json.loads(dec.to_debug_json())
    assert len(payload["agents"]) == 3
    assert len(payload["deltas"]) == 2
