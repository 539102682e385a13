"""Corpus BLEU, token repetition rate, length-bucketed BLEU and call counting."""

from __future__ import annotations

import math
from collections import Counter
from typing import Callable, Hashable, Sequence

DEFAULT_EDGES = (10, 20, 30, 40, 50)


def _ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses, references, max_order: int = 4) -> dict:
    """Sufficient statistics of corpus BLEU (clipped matches and totals per order)."""
    if not hypotheses:
        raise ValueError("no hypotheses")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * max_order
    totals = [0] * max_order
    ref_totals = [0] * max_order
    hyp_len = ref_len = 0
    exact = True
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        exact = exact and hyp == ref
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
            ref_totals[n - 1] += max(len(ref) - n + 1, 0)
    return dict(matches=matches, totals=totals, ref_totals=ref_totals,
                hyp_len=hyp_len, ref_len=ref_len, exact=exact)


def bleu_from_stats(stats: dict) -> float:
    hyp_len, ref_len = stats["hyp_len"], stats["ref_len"]
    if stats.get("exact") and hyp_len > 0:
        # short sentences have no 3- or 4-grams; smoothing alone would keep
        # an exact match below 100
        return 100.0
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    orders = len(stats["matches"])
    for m, t in zip(stats["matches"], stats["totals"]):
        if m == 0:
            p = 1.0 / (2 * max(t, 1))
        else:
            p = m / t
        log_p += math.log(p) / orders
    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(log_p)


def bleu(hypotheses, references, max_order: int = 4) -> float:
    """Corpus-level BLEU-4 in [0, 100] on pre-tokenized sequences.

    Zero precisions are floored at ``1 / (2 * hypothesis n-gram count)``
    (count taken as at least 1, so an order with no hypothesis n-grams
    scores 1/2).  A corpus whose hypotheses all equal their references
    scores exactly 100.
    """
    return bleu_from_stats(bleu_stats(hypotheses, references, max_order))


def repetition_rate(hypotheses) -> float:
    """Percentage of tokens equal to their immediate predecessor."""
    if not hypotheses:
        raise ValueError("no hypotheses")
    repeats = total = 0
    for hyp in hypotheses:
        hyp = list(hyp)
        total += len(hyp)
        repeats += sum(1 for a, b in zip(hyp, hyp[1:]) if a == b)
    return 100.0 * repeats / total if total else 0.0


def bucket_label(length: int, edges: Sequence[int] = DEFAULT_EDGES) -> str:
    edges = sorted(edges)
    if not edges:
        return "all"
    if length <= edges[0]:
        return f"<={edges[0]}"
    for lo, hi in zip(edges, edges[1:]):
        if length <= hi:
            return f"{lo + 1}-{hi}"
    return f">{edges[-1]}"


def bucketed_bleu(hypotheses, references, edges: Sequence[int] = DEFAULT_EDGES) -> dict[str, float]:
    """BLEU per reference-length bucket; empty buckets are left out."""
    groups: dict[str, tuple[list, list]] = {}
    edges = sorted(edges)
    labels = [bucket_label(e, edges) for e in edges] + ([f">{edges[-1]}"] if edges else ["all"])
    for hyp, ref in zip(hypotheses, references):
        h, r = groups.setdefault(bucket_label(len(ref), edges), ([], []))
        h.append(hyp)
        r.append(ref)
    return {lab: bleu(*groups[lab]) for lab in labels if lab in groups}


class CallCounter:
    """Wraps a model function and counts invocations."""

    def __init__(self, fn: Callable):
        self.fn = fn
        self.calls = 0

    def __call__(self, *args, **kwargs):
        self.calls += 1
        return self.fn(*args, **kwargs)


def format_metrics(metrics: dict, human: bool = True) -> str:
    """Render metrics as an aligned table or as ``key=value`` lines."""
    if not human:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in metrics.items())
    width = max((len(k) for k in metrics), default=0)
    return "".join(f"{k:<{width}}  {_fmt(v)}\n" for k, v in metrics.items())


def _fmt(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)
