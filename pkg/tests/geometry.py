"""Vectorised geometric property checks over batches of random instances.

Each check returns the worst violation over the batch; ``TOLERANCES`` holds
the bound it must stay under. Shared by the manifold tests and the acceptance
suite.
"""

import numpy as np

from sihg import autodiff as ad
from sihg.manifold import Hyperboloid, PoincareBall

TOLERANCES = {
    "hyperboloid_log_exp": 1e-6,
    "hyperboloid_exp_log": 1e-6,
    "poincare_log_exp": 1e-6,
    "poincare_exp_log": 1e-6,
    "mobius_identity": 1e-9,
    "mobius_inverse": 1e-9,
    "mobius_left_cancel": 1e-8,
    "dist_nonneg": 0.0,
    "dist_self": 1e-12,
    "dist_symmetry": 1e-8,
    "dist_triangle": 1e-8,
    "isometry_round_trip": 1e-9,
    "isometry_distance": 1e-6,
    "ptransp_norm": 1e-6,
    "ptransp_tangent": 1e-9,
    "membership": 1e-8,
}


def _unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def hyperboloid_points(rng, n, d, K, max_dist=3.0):
    """Points at geodesic distance <= max_dist from the origin."""
    u = _unit_rows(rng, n, d) * rng.uniform(0, max_dist, (n, 1))
    return Hyperboloid(K).expmap0(u).data


def hyperboloid_tangents(rng, x, K, max_norm=3.0):
    m = Hyperboloid(K)
    v = m.proj_tan(x, rng.normal(size=x.shape)).data
    n = m.tangent_norm(x, v).data[:, None]
    return v / n * rng.uniform(0, max_norm, (len(x), 1))


def ball_points(rng, n, d, K, max_dist=3.0):
    # the tangent norm of u at the ball origin is 2 |u|
    u = _unit_rows(rng, n, d) * rng.uniform(0, max_dist / 2, (n, 1))
    return PoincareBall(K).expmap0(u).data


def ball_tangents(rng, x, K, max_norm=3.0):
    m = PoincareBall(K)
    v = _unit_rows(rng, *x.shape)
    lam = m.lambda_x(x).data
    return v / lam * rng.uniform(0, max_norm, (len(x), 1))


def _row_err(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def run_checks(n=1000, d=5, seed=0, curvatures=(0.5, 1.0, 2.0)) -> dict[str, float]:
    """Worst violation of every property over ``n`` instances per curvature."""
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in TOLERANCES}

    def bump(key, value):
        worst[key] = max(worst[key], float(value))

    for K in curvatures:
        H, P = Hyperboloid(K), PoincareBall(K)

        x = hyperboloid_points(rng, n, d, K)
        y = hyperboloid_points(rng, n, d, K)
        w = hyperboloid_points(rng, n, d, K)
        v = hyperboloid_tangents(rng, x, K)
        bump("hyperboloid_log_exp", _row_err(H.logmap(x, H.expmap(x, v)).data, v))
        near = H.expmap(x, hyperboloid_tangents(rng, x, K)).data
        bump("hyperboloid_exp_log", _row_err(H.expmap(x, H.logmap(x, near)).data, near))
        bump("dist_symmetry", np.max(np.abs(H.dist(x, y).data - H.dist(y, x).data)))
        dxy, dyw, dxw = H.dist(x, y).data, H.dist(y, w).data, H.dist(x, w).data
        bump("dist_nonneg", np.max(-np.minimum(dxy, 0)))
        bump("dist_triangle", np.max(dxw - dxy - dyw))
        bump("dist_self", np.max(np.abs(H.dist(x, x).data)))

        # parallel transport from the origin
        u = rng.normal(size=(n, d)) * rng.uniform(0, 1, (n, 1))
        pt = H.ptransp0(x, u)
        bump("ptransp_norm", np.max(np.abs(H.tangent_norm(x, pt).data - np.linalg.norm(u, axis=1))))
        bump("ptransp_tangent", np.max(np.abs(ad.minkowski_inner(pt, x).data)))

        # isometry to the ball
        p, q = H.to_poincare(x).data, H.to_poincare(y).data
        bump("isometry_round_trip", _row_err(H.from_poincare(p).data, x) / max(1.0, np.abs(x).max()))
        bump("isometry_distance", np.max(np.abs(P.dist(p, q).data - dxy)))

        # Poincare maps and Moebius laws
        bx, by, bw = ball_points(rng, n, d, K), ball_points(rng, n, d, K), ball_points(rng, n, d, K)
        bv = ball_tangents(rng, bx, K)
        bump("poincare_log_exp", _row_err(P.logmap(bx, P.expmap(bx, bv)).data, bv))
        bnear = P.expmap(bx, ball_tangents(rng, bx, K)).data
        bump("poincare_exp_log", _row_err(P.expmap(bx, P.logmap(bx, bnear)).data, bnear))
        bump("mobius_identity", _row_err(P.mobius_add(bx, np.zeros_like(bx)).data, bx))
        bump("mobius_inverse", np.max(np.abs(P.mobius_add(-bx, bx).data)))
        bump("mobius_left_cancel", _row_err(P.mobius_add(-bx, P.mobius_add(bx, by)).data, by))
        pxy, pyw, pxw = P.dist(bx, by).data, P.dist(by, bw).data, P.dist(bx, bw).data
        bump("dist_nonneg", np.max(-np.minimum(pxy, 0)))
        bump("dist_symmetry", np.max(np.abs(pxy - P.dist(by, bx).data)))
        bump("dist_triangle", np.max(pxw - pxy - pyw))
        bump("dist_self", np.max(np.abs(P.dist(bx, bx).data)))

        # membership after exp maps
        inner = ad.minkowski_inner(H.expmap(x, v), H.expmap(x, v)).data
        bump("membership", np.max(np.abs(inner + K)) / K)
        radius = np.linalg.norm(P.expmap(bx, bv).data, axis=1)
        bump("membership", 0.0 if np.all(radius < np.sqrt(K)) else np.inf)
    return worst
