"""Joint training: cross-entropy plus hyperbolic contrastive margin loss.

The total objective per batch is

    ce_weight * mean(L_ce) + contrastive_weight * mean(L_margin) + l2 * sum ||theta||^2

where the margin term hinges on geodesic distances between the session
representation (mapped back onto the item manifold), the target item and
uniformly sampled negative items. The L2 penalty covers every parameter
except the curvature scalars (shrinking those toward a softplus fixed point
would be an arbitrary prior, not regularization).

Optimization is plain Adam over the flat/tangent parameter arrays; the
manifold only enters through the forward pass, so no Riemannian machinery is
needed. The learning rate halves after every third epoch and early stopping
watches validation MRR@20.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import manifold
from .autodiff import Tensor
from .metrics import RankingMetrics, evaluate
from .model import HCGRModel, ModelCaches

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

PROB_CLAMP = 1e-12


class TrainingNumericError(ArithmeticError):
    """A batch produced a non-finite value; carries the batch index."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    lr_decay: float = 0.5
    lr_decay_every: int = 3
    l2: float = 3e-3
    batch_size: int = 128
    epochs: int = 30
    patience: int = 10
    ce_weight: float = 1.0
    contrastive_weight: float = 0.1
    margin: float = 0.5
    negatives: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.negatives < 1:
            raise ValueError("batch_size and negatives must be >= 1")
        if min(self.ce_weight, self.contrastive_weight, self.margin, self.l2) < 0:
            raise ValueError("loss weights, margin and l2 must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def lr_at_epoch(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch under the halving schedule."""
        return self.learning_rate * self.lr_decay ** ((epoch - 1) // self.lr_decay_every)


@dataclass
class TrainState:
    model: HCGRModel
    config: TrainConfig
    step: int = 0
    epoch: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    best_mrr: float = -np.inf
    best_epoch: int = 0
    best_arrays: dict[str, np.ndarray] | None = None
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.moments:
            for name, t in self.model.params.named_parameters():
                self.moments[name] = (np.zeros_like(t.data), np.zeros_like(t.data))
        if self.best_arrays is None:
            self.best_arrays = self.model.params.state_arrays()


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy_loss(yhat: Tensor, target: int) -> Tensor:
    """Binary cross-entropy against the one-hot target, summed over the catalog.

    Probabilities are clamped to [1e-12, 1 - 1e-12] before the logs.
    """
    n = yhat.shape[0]
    if not 0 <= target < n:
        raise ValueError(f"target {target} out of range for {n} items")
    p = ad.clamp(yhat, lo=PROB_CLAMP, hi=1.0 - PROB_CLAMP)
    log_miss = ad.log(ad.sub(1.0, p))
    pt = p[target]
    return ad.neg(ad.add(ad.sub(ad.log(pt), log_miss[target]), ad.tsum(log_miss)))


def contrastive_loss(anchor: Tensor, positive: Tensor, negatives: Tensor, margin, k) -> Tensor:
    """Margin hinge on geodesic distances: sum over negatives of
    max(d(anchor, positive) - d(anchor, negative) + margin, 0).

    anchor and positive are single (1, d+1) point rows, negatives is (m, d+1);
    everything must live on the hyperboloid of the same curvature k.
    """
    m = negatives.shape[0]
    if m < 1:
        raise ValueError("contrastive_loss: need at least one negative")
    d_pos = manifold.dist_rows(anchor, positive, k)[0, 0]
    anchor_tiled = ad.matmul(ad.constant(np.ones((m, 1))), anchor)
    d_neg = manifold.dist_rows(anchor_tiled, negatives, k)
    return ad.tsum(ad.relu(ad.add(ad.sub(d_pos, d_neg), margin)))


def l2_penalty(model: HCGRModel) -> Tensor:
    """Sum of squared entries over all non-curvature parameters."""
    total = None
    for name, t in model.params.named_parameters():
        if "kappa" in name:
            continue
        term = ad.tsum(ad.mul(t, t))
        total = term if total is None else ad.add(total, term)
    return total


def total_loss(
    model: HCGRModel,
    batch: list[tuple[list[int], int]],
    negatives: list[np.ndarray],
    cfg: TrainConfig,
    caches: ModelCaches | None = None,
) -> Tensor:
    """Weighted batch objective; `negatives` holds pre-drawn ids per pair."""
    if not batch:
        raise ValueError("total_loss: empty batch")
    if caches is None:
        caches = model.caches()
    ce_terms = []
    margin_terms = []
    k0 = caches.graph_k[0]
    for (session, target), neg_ids in zip(batch, negatives):
        result = model.forward(session, caches=caches)
        ce_terms.append(cross_entropy_loss(result.yhat, target))
        if cfg.contrastive_weight == 0.0 or len(neg_ids) == 0:
            continue
        anchor = manifold.exp_o_rows(ad.reshape(result.readout, (1, -1)), k0)
        positive = ad.take_rows(caches.point_table, np.asarray([target], dtype=np.intp))
        neg_pts = ad.take_rows(caches.point_table, np.asarray(neg_ids, dtype=np.intp))
        margin_terms.append(contrastive_loss(anchor, positive, neg_pts, cfg.margin, k0))

    loss = ad.mul(cfg.ce_weight, ad.div(_sum_scalars(ce_terms), float(len(batch))))
    if margin_terms:
        loss = ad.add(
            loss,
            ad.mul(cfg.contrastive_weight, ad.div(_sum_scalars(margin_terms), float(len(batch)))),
        )
    if cfg.l2 > 0:
        loss = ad.add(loss, ad.mul(cfg.l2, l2_penalty(model)))
    return loss


def _sum_scalars(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return acc


def draw_negatives(
    rng: np.random.Generator, session: list[int], target: int, catalog_size: int, count: int
) -> np.ndarray:
    """Uniform negatives excluding the session's own items and the target."""
    banned = set(session)
    banned.add(target)
    pool = np.array([i for i in range(catalog_size) if i not in banned], dtype=np.intp)
    if pool.size == 0:
        return pool
    replace = pool.size < count
    return rng.choice(pool, size=count, replace=replace)


# ---------------------------------------------------------------------------
# optimizer and epochs
# ---------------------------------------------------------------------------


def adam_step(state: TrainState, lr: float):
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for name, p in state.model.params.named_parameters():
        g = p.grad
        m, v = state.moments[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def train_epoch(state: TrainState, train_pairs: list[tuple[list[int], int]], lr: float) -> float:
    """One pass over the shuffled training pairs; returns the mean batch loss."""
    if not train_pairs:
        raise ValueError("train_epoch: empty training split")
    cfg = state.config
    state.epoch += 1
    rng = np.random.default_rng([cfg.seed, state.epoch])
    order = rng.permutation(len(train_pairs))
    catalog = state.model.catalog_size

    losses = []
    for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
        batch = [train_pairs[i] for i in order[start : start + cfg.batch_size]]
        negatives = [
            draw_negatives(rng, session, target, catalog, cfg.negatives)
            for session, target in batch
        ]
        state.model.params.zero_grads()
        try:
            loss = total_loss(state.model, batch, negatives, cfg)
            loss.backward()
        except ad.NumericError as exc:
            raise TrainingNumericError(
                f"epoch {state.epoch} batch {batch_index}: {exc}"
            ) from exc
        adam_step(state, lr)
        losses.append(float(loss.data))
    return float(np.mean(losses))


def fit(
    model: HCGRModel,
    cfg: TrainConfig,
    train_pairs: list[tuple[list[int], int]],
    valid_pairs: list[tuple[list[int], int]],
    log=None,
) -> TrainState:
    """Train with early stopping on validation MRR@20.

    Returns the state with the best-epoch parameter snapshot restored into
    the model. `log` receives one formatted line per epoch.
    """
    if not train_pairs or not valid_pairs:
        raise ValueError("fit: training and validation splits must be nonempty")
    state = TrainState(model=model, config=cfg)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at_epoch(epoch)
        loss = train_epoch(state, train_pairs, lr)
        val = evaluate(model, valid_pairs, ks=(10, 20), threads=cfg.threads)
        line = (
            f"epoch={epoch} loss={loss:.6f} val_hr20={val.hr[20]:.6f} "
            f"val_mrr20={val.mrr[20]:.6f} val_ndcg20={val.ndcg[20]:.6f} lr={lr:.6g}"
        )
        state.history.append(
            {"epoch": epoch, "loss": loss, "hr20": val.hr[20], "mrr20": val.mrr[20], "ndcg20": val.ndcg[20], "lr": lr}
        )
        if log is not None:
            log(line)
        if val.mrr[20] > state.best_mrr:
            state.best_mrr = val.mrr[20]
            state.best_epoch = epoch
            state.best_arrays = model.params.state_arrays()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params.load_arrays(state.best_arrays)
    return state


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class GradientCheckReport:
    max_rel_error: float
    worst_param: str
    passed: bool
    tolerance: float
    per_param: dict[str, float]


def gradient_check(
    model: HCGRModel,
    batch: list[tuple[list[int], int]],
    cfg: TrainConfig,
    h: float = 1e-5,
    tol: float = 1e-3,
) -> GradientCheckReport:
    """Central differences over every parameter entry vs the backward pass.

    Only sensible for small models; guarded at 5000 parameters because the
    sweep runs two forward passes per entry.
    """
    n_params = sum(t.data.size for _, t in model.params.named_parameters())
    if n_params > 5000:
        raise ValueError(f"gradient_check limited to 5000 parameters, got {n_params}")

    rng = np.random.default_rng(cfg.seed)
    negatives = [
        draw_negatives(rng, session, target, model.catalog_size, cfg.negatives)
        for session, target in batch
    ]

    model.params.zero_grads()
    loss = total_loss(model, batch, negatives, cfg)
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in model.params.named_parameters()}

    def loss_value() -> float:
        with ad.no_grad():
            return float(total_loss(model, batch, negatives, cfg).data)

    per_param: dict[str, float] = {}
    worst = ("", 0.0)
    for name, t in model.params.named_parameters():
        flat = t.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        worst_here = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            rel = abs(fd - ana[i]) / max(abs(fd), abs(ana[i]), 1e-6)
            if rel > worst_here:
                worst_here = rel
        per_param[name] = worst_here
        if worst_here > worst[1]:
            worst = (name, worst_here)
    return GradientCheckReport(
        max_rel_error=worst[1],
        worst_param=worst[0],
        passed=worst[1] < tol,
        tolerance=tol,
        per_param=per_param,
    )


def snapshot_metrics(val: RankingMetrics) -> dict:
    return {"hr": dict(val.hr), "ndcg": dict(val.ndcg), "mrr": dict(val.mrr), "n": val.n_evaluated}


def clone_model(model: HCGRModel) -> HCGRModel:
    """Independent copy with the same hyperparameters and parameter values."""
    params = model.params.state_arrays()
    new = HCGRModel(copy.deepcopy(model.hyper), model.catalog_size, type(model.params).from_arrays(model.hyper, model.catalog_size, params))
    return new
