"""Self-diagnostics: manifold property sweeps and the toy gradient sweep.

These run the same invariants the test suite asserts, packaged so the CLI
can verify an installation. All geometry is exercised through the module
attributes of :mod:`hcgr.manifold`, so a perturbed operation (e.g. in a
fault-injection test) is caught by the relevant property check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import manifold
from .model import HCGRModel, HyperParams
from .training import TrainConfig, GradientCheckReport, gradient_check


@dataclass
class CheckResult:
    name: str
    worst: float
    limit: float

    @property
    def passed(self) -> bool:
        return self.worst < self.limit


def _random_tangents_at_origin(rng, n: int, d: int, max_norm: float = 5.0) -> np.ndarray:
    dirs = rng.normal(size=(n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    norms = rng.uniform(1e-3, max_norm, size=(n, 1))
    return np.concatenate([np.zeros((n, 1)), dirs * norms], axis=1)


def _constraint_violation(X: np.ndarray, k: float) -> float:
    inner = -X[:, 0] ** 2 + (X[:, 1:] ** 2).sum(axis=1)
    return float(np.abs(inner + k).max())


def manifold_check(dims=(2, 8), ks=(0.5, 1.0, 2.0), n: int = 300, seed: int = 0) -> list[CheckResult]:
    """Property sweep over random points/tangents for each (d, k) pair.

    Base points stay within geodesic radius 2 of the origin and steps within
    norm 2.5 (origin roundtrips go out to norm 5). Beyond radius ~7 the
    hyperboloid residual of float64 arithmetic grows like eps*cosh^2(r/sqrt(k))
    and no implementation could meet the 1e-8 bound; the network itself
    operates well inside this region.
    """
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def record(name: str, value: float):
        worst[name] = max(worst.get(name, 0.0), value)

    with ad.no_grad():
        for d in dims:
            for k in ks:
                T = ad.Tensor
                X = manifold.exp_o_rows(T(_random_tangents_at_origin(rng, n, d, 2.0)), k)
                Y = manifold.exp_o_rows(T(_random_tangents_at_origin(rng, n, d, 2.0)), k)
                Z = manifold.exp_o_rows(T(_random_tangents_at_origin(rng, n, d, 2.0)), k)
                record("hyperboloid constraint after exp at origin", _constraint_violation(X.data, k))

                # origin roundtrips at the full norm-5 range
                B5 = T(_random_tangents_at_origin(rng, n, d, 5.0))
                P5 = manifold.exp_o_rows(B5, k)
                record("hyperboloid constraint after exp at origin", _constraint_violation(P5.data, k))
                B5r = manifold.log_o_rows(P5, k)
                rel = np.linalg.norm(B5r.data - B5.data, axis=1) / np.maximum(
                    np.linalg.norm(B5.data, axis=1), 1e-6
                )
                record("exp/log roundtrip", float(rel.max()))

                # tangent vectors at X via isometric transport from the origin
                B = T(_random_tangents_at_origin(rng, n, d, 2.5))
                B2 = T(_random_tangents_at_origin(rng, n, d, 2.5))
                V = manifold.transport_from_origin_rows(X, B, k)
                W = manifold.transport_from_origin_rows(X, B2, k)

                # exp/log roundtrips, relative per row
                Ex = manifold.exp_map_rows(X, V, k)
                record("hyperboloid constraint after exp_map", _constraint_violation(Ex.data, k))
                V2 = manifold.log_map_rows(X, Ex, k)
                rel = np.linalg.norm(V2.data - V.data, axis=1) / np.maximum(
                    np.linalg.norm(V.data, axis=1), 1e-6
                )
                record("exp/log roundtrip", float(rel.max()))
                L = manifold.log_map_rows(X, Y, k)
                Y2 = manifold.exp_map_rows(X, L, k)
                rel = np.linalg.norm(Y2.data - Y.data, axis=1) / np.maximum(
                    np.linalg.norm(Y.data, axis=1), 1e-6
                )
                record("log/exp roundtrip", float(rel.max()))

                # distance axioms
                dxy = manifold.dist_rows(X, Y, k).data[:, 0]
                dyx = manifold.dist_rows(Y, X, k).data[:, 0]
                record("distance symmetry", float(np.abs(dxy - dyx).max()))
                dxz = manifold.dist_rows(X, Z, k).data[:, 0]
                dyz = manifold.dist_rows(Y, Z, k).data[:, 0]
                record("triangle inequality violation", float((dxz - dxy - dyz).max()))
                record("distance self", float(manifold.dist_rows(X, X, k).data.max()))

                # parallel transport is an isometry and lands tangent
                Vt = manifold.transport_rows(X, Y, V, k)
                Wt = manifold.transport_rows(X, Y, W, k)
                before = manifold.rowwise_inner(V, W).data
                after = manifold.rowwise_inner(Vt, Wt).data
                record("transport inner-product preservation", float(np.abs(after - before).max()))
                tang = manifold.rowwise_inner(Vt, Y).data
                record("transport tangency at destination", float(np.abs(tang).max()))

                # linear-layer identities
                eye = ad.Tensor(np.eye(d + 1))
                Xi = manifold.hyp_matmul_rows(X, eye, k)
                record("hyp_matmul identity", float(np.abs(Xi.data - X.data).max()))
                zb = ad.Tensor(np.zeros(d + 1))
                Xb = manifold.hyp_bias_add_rows(X, zb, k)
                record("hyp_bias_add zero identity", float(np.abs(Xb.data - X.data).max()))
                Xa = manifold.hyp_activation_rows(X, lambda t: ad.leaky_relu(t, 0.2), k, k)
                record("hyperboloid constraint after activation", _constraint_violation(Xa.data, k))

    limits = {
        "hyperboloid constraint after exp at origin": 1e-8,
        "hyperboloid constraint after exp_map": 1e-8,
        "exp/log roundtrip": 1e-7,
        "log/exp roundtrip": 1e-7,
        "distance symmetry": 0.0 + 1e-300,  # bit-exact; any nonzero fails
        "triangle inequality violation": 1e-9,
        "distance self": 1e-6,
        "transport inner-product preservation": 1e-7,
        "transport tangency at destination": 1e-7,
        "hyp_matmul identity": 1e-9,
        "hyp_bias_add zero identity": 1e-9,
        "hyperboloid constraint after activation": 1e-8,
    }
    return [CheckResult(name, worst[name], limits[name]) for name in limits]


TOY_BATCH = [([0, 1, 2], 3), ([3, 4, 5], 0), ([1, 2, 2, 4], 5)]


def toy_model(seed: int = 11, contrastive_weight: float = 0.1):
    """Tiny network and config used for the finite-difference sweep."""
    hyper = HyperParams(dim=4, graph_layers=1, attention_blocks=1, max_session_len=50)
    model = HCGRModel.create(hyper, catalog_size=6, seed=seed)
    cfg = TrainConfig(
        epochs=1,
        batch_size=3,
        contrastive_weight=contrastive_weight,
        seed=seed,
    )
    return model, cfg


def gradient_check_toy(seed: int = 11, contrastive_weight: float = 0.1) -> GradientCheckReport:
    model, cfg = toy_model(seed, contrastive_weight)
    return gradient_check(model, TOY_BATCH, cfg, h=1e-5, tol=1e-3)
