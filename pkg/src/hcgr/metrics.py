"""Top-K ranking metrics and model evaluation.

Ranking is deterministic: items are ordered by descending score with ties
broken by ascending item id. The target is a single item, so NDCG reduces to
1/log2(rank+1) (the ideal DCG is 1) and MRR to the reciprocal rank, both
zeroed when the target falls outside the cutoff.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class RankingMetrics:
    hr: dict[int, float]
    ndcg: dict[int, float]
    mrr: dict[int, float]
    n_evaluated: int


def ranked_items(scores: np.ndarray) -> np.ndarray:
    """Item ids ordered by descending score, ties by ascending id."""
    scores = np.asarray(scores)
    return np.lexsort((np.arange(scores.shape[0]), -scores))


def target_rank(ranked, target: int) -> int:
    """1-based position of the target item in a ranked list."""
    for i, item in enumerate(ranked):
        if item == target:
            return i + 1
    raise ValueError(f"target {target} not present in ranking")


def _check_cutoff(ranked, k: int):
    if k < 1 or len(ranked) < k:
        raise ValueError(f"cutoff {k} invalid for ranking of {len(ranked)} items")


def hit_rate_at_k(ranked, target: int, k: int) -> int:
    _check_cutoff(ranked, k)
    for item in ranked[:k]:
        if item == target:
            return 1
    return 0


def mrr_at_k(ranked, target: int, k: int) -> float:
    _check_cutoff(ranked, k)
    rank = target_rank(ranked, target)
    return 1.0 / rank if rank <= k else 0.0


def ndcg_at_k(ranked, target: int, k: int) -> float:
    _check_cutoff(ranked, k)
    rank = target_rank(ranked, target)
    return 1.0 / math.log2(rank + 1.0) if rank <= k else 0.0


def evaluate(model, pairs, ks=(10, 20), threads: int = 1) -> RankingMetrics:
    """Mean HitRate/NDCG/MRR at each cutoff over (prefix, target) pairs.

    Scores come from full forward passes with a shared read-only cache;
    accumulation runs in pair order so results do not depend on `threads`.
    """
    if not pairs:
        raise ValueError("evaluate: empty split")
    ks = tuple(sorted(ks))
    with ad.no_grad():
        caches = model.caches()

        def rank_one(pair):
            prefix, target = pair
            scores = model.forward(prefix, caches=caches).yhat.data
            return target_rank(ranked_items(scores), target)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                ranks = list(pool.map(rank_one, pairs))
        else:
            ranks = [rank_one(p) for p in pairs]

    hr = {k: 0.0 for k in ks}
    ndcg = {k: 0.0 for k in ks}
    mrr = {k: 0.0 for k in ks}
    for rank in ranks:
        for k in ks:
            if rank <= k:
                hr[k] += 1.0
                ndcg[k] += float(1.0 / np.log2(rank + 1.0))
                mrr[k] += 1.0 / rank
    n = len(pairs)
    for k in ks:
        hr[k] = float(hr[k] / n)
        ndcg[k] = float(ndcg[k] / n)
        mrr[k] = float(mrr[k] / n)
    return RankingMetrics(hr, ndcg, mrr, n)


# ---------------------------------------------------------------------------
# popularity and hierarchy analyses
# ---------------------------------------------------------------------------


def interaction_counts(pairs, catalog_size: int) -> np.ndarray:
    """How often each item occurs across the given pairs (prefixes + targets)."""
    counts = np.zeros(catalog_size, dtype=np.int64)
    for prefix, target in pairs:
        for item in prefix:
            counts[item] += 1
        counts[target] += 1
    return counts


def popularity_ranking(pairs, catalog_size: int) -> np.ndarray:
    """Items ranked by training frequency (descending, ties by ascending id)."""
    counts = interaction_counts(pairs, catalog_size)
    return np.lexsort((np.arange(catalog_size), -counts))


def hierarchy_report(model, train_pairs) -> list[dict]:
    """Distance-to-origin quartiles vs item popularity.

    Items are sorted by geodesic distance from the origin (ties by id) and
    split into 4 equal-population regions; region 1 is nearest the origin.
    Each row reports the region's mean distance and mean interaction count.
    """
    catalog = model.catalog_size
    counts = interaction_counts(train_pairs, catalog)
    dists = model.embedding_distances()
    order = np.lexsort((np.arange(catalog), dists))
    rows = []
    for region, ids in enumerate(np.array_split(order, 4), start=1):
        rows.append(
            {
                "region": region,
                "n_items": int(ids.size),
                "mean_distance": float(dists[ids].mean()),
                "mean_interactions": float(counts[ids].mean()),
            }
        )
    return rows
