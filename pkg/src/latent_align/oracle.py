"""Brute-force oracles and finite-difference gradient checks.

Every suite returns a :class:`SuiteResult`; :func:`run_all` runs the lot
and is what ``latent-align oracle`` reports on.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from scipy.special import logsumexp

from .alignment import (
    BLANK_ID, MaskPolicy, collapse, count_alignments, enumerate_alignments, min_alignment_length,
    sample_mask, sample_uniform_alignment,
)
from .ctc import ctc_loss, log_softmax
from .imputer import imputer_loss
from .model import AlignmentScorer, ModelConfig, backward, forward_ctc, forward_imputer


# relative errors on gradient entries smaller than this are measured against it;
# round-off in a central difference is ~1e-10 absolute and would dominate
GRAD_FLOOR = 1e-4


@dataclass
class SuiteResult:
    name: str
    passed: bool
    n_cases: int
    max_error: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: cases={self.n_cases} max_err={self.max_error:.3g} "
                f"tol={self.tolerance:g} time={self.seconds:.2f}s")


def brute_force_nll(lattice: np.ndarray, y: Sequence[int], partial: Sequence[int] | None = None,
                    mask_id: int | None = None) -> float:
    """``-log`` of the summed path probability over the enumerated alignments.

    With ``partial`` only alignments agreeing with every observed frame count.
    """
    logp = log_softmax(np.asarray(lattice, dtype=np.float64))
    length = logp.shape[0]
    if len(y) > length:
        return np.inf
    paths = np.array(sorted(enumerate_alignments(y, length)), dtype=np.int64).reshape(-1, length)
    if partial is not None:
        partial = np.asarray(partial, dtype=np.int64)
        seen = partial != mask_id
        paths = paths[np.all(~seen | (paths == partial), axis=1)]
    if len(paths) == 0:
        return np.inf
    path_logp = logp[np.arange(length), paths].sum(axis=1)
    return float(-logsumexp(path_logp))


def relative_error(a, b, floor: float = 1e-6) -> float:
    """Largest ``|a - b| / max(|a|, |b|, floor)``; equal infinities count as 0."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    both_inf = np.isinf(a) & np.isinf(b) & (np.sign(a) == np.sign(b))
    with np.errstate(invalid="ignore"):
        err = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    err = np.where(both_inf, 0.0, err)
    err = np.where(np.isnan(err), np.inf, err)
    return float(err.max()) if err.size else 0.0


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5,
                       coords: Sequence[tuple] | None = None) -> np.ndarray:
    """Numerical gradient of ``fn`` at ``x``; ``coords`` restricts the entries probed."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in (np.ndindex(x.shape) if coords is None else coords):
        old = x[idx]
        x[idx] = old + step
        hi = fn(x)
        x[idx] = old - step
        lo = fn(x)
        x[idx] = old
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def random_instance(rng: np.random.Generator, max_vocab: int = 4, max_target: int = 5,
                    max_length: int = 12, feasible_only: bool = False):
    """Random ``(lattice, y)``; the lattice has ``|V| + 1`` columns (BLANK first)."""
    n_vocab = int(rng.integers(1, max_vocab + 1))
    y = tuple(int(t) for t in rng.integers(1, n_vocab + 1, size=int(rng.integers(0, max_target + 1))))
    lo = max(1, min_alignment_length(y) if feasible_only else len(y))
    length = int(rng.integers(lo, max(lo, max_length) + 1))
    lattice = rng.normal(scale=2.0, size=(length, n_vocab + 1))
    return lattice, y


def _timed(name, tol, fn) -> SuiteResult:
    start = time.perf_counter()
    n, err = fn()
    return SuiteResult(name, bool(err < tol), n, err, tol, time.perf_counter() - start)


def ctc_oracle_suite(n_instances: int = 1000, seed: int = 0, tol: float = 1e-8) -> SuiteResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_instances):
            lattice, y = random_instance(rng)
            worst = max(worst, relative_error(ctc_loss(lattice, y)[0], brute_force_nll(lattice, y)))
        return n_instances, worst
    return _timed("ctc-oracle", tol, run)


def imputer_oracle_suite(n_instances: int = 1000, seed: int = 1, tol: float = 1e-8,
                         all_mask_tol: float = 1e-12) -> tuple[SuiteResult, SuiteResult]:
    """Constrained loss vs. the filtered oracle, plus the all-MASK = CTC identity."""
    rng = np.random.default_rng(seed)
    worst, worst_all = 0.0, 0.0
    start = time.perf_counter()
    for i in range(n_instances):
        lattice, y = random_instance(rng, feasible_only=True)
        length, mask_id = lattice.shape[0], lattice.shape[1]
        a = sample_uniform_alignment(y, length, rng)
        partial = sample_mask(a, mask_id, MaskPolicy.BERNOULLI, rng)
        if i % 10 == 0:
            # observed frames from a foreign alignment: often infeasible
            partial = tuple(int(rng.integers(0, mask_id + 1)) for _ in range(length))
        got = imputer_loss(lattice, y, partial, mask_id)[0]
        worst = max(worst, relative_error(got, brute_force_nll(lattice, y, partial, mask_id)))
        all_mask = imputer_loss(lattice, y, (mask_id,) * length, mask_id)[0]
        ref = ctc_loss(lattice, y)[0]
        if np.isfinite(ref) or np.isfinite(all_mask):
            worst_all = max(worst_all, abs(all_mask - ref))
    sec = time.perf_counter() - start
    return (SuiteResult("imputer-oracle", bool(worst < tol), n_instances, worst, tol, sec),
            SuiteResult("imputer-all-mask", bool(worst_all <= all_mask_tol), n_instances, worst_all,
                        all_mask_tol, sec))


def dp_gradient_suite(n_instances: int = 50, seed: int = 2, tol: float = 1e-4,
                      step: float = 1e-5) -> SuiteResult:
    """CTC and constrained-loss lattice gradients vs. central differences."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for i in range(n_instances):
            lattice, y = random_instance(rng, max_length=8, feasible_only=True)
            if i % 2:
                mask_id = lattice.shape[1]
                partial = sample_mask(sample_uniform_alignment(y, len(lattice), rng), mask_id,
                                      MaskPolicy.BERNOULLI, rng)
                fn = lambda s: imputer_loss(s, y, partial, mask_id)[0]  # noqa: E731
                grad = imputer_loss(lattice, y, partial, mask_id)[1]
            else:
                fn = lambda s: ctc_loss(s, y)[0]  # noqa: E731
                grad = ctc_loss(lattice, y)[1]
            worst = max(worst, relative_error(grad, central_difference(fn, lattice, step), floor=GRAD_FLOOR))
        return n_instances, worst
    return _timed("dp-gradient", tol, run)


def model_gradient_suite(n_instances: int = 3, n_coords: int = 40, seed: int = 3,
                         tol: float = 1e-3, step: float = 1e-5) -> SuiteResult:
    """End-to-end parameter gradients through the model and the DP loss.

    Uses a depth-1, width-8 model in double precision and probes a random
    subset of parameter coordinates per instance.
    """
    def run():
        rng = np.random.default_rng(seed)
        torch.manual_seed(seed)
        worst = 0.0
        for i in range(n_instances):
            cfg = ModelConfig(n_tokens=3, depth=1, d_model=8, d_ff=16, heads=2, scale=2, dropout=0.0)
            net = AlignmentScorer(cfg).double()
            x = rng.integers(1, 4, size=int(rng.integers(2, 5)))
            length = cfg.scale * len(x)
            y = tuple(int(t) for t in rng.integers(1, 4, size=int(rng.integers(1, len(x) + 1))))
            while min_alignment_length(y) > length:
                y = y[:-1]
            partial = None
            if i % 2:
                a = sample_uniform_alignment(y, length, rng)
                partial = sample_mask(a, cfg.mask_id, MaskPolicy.BERNOULLI, rng, ratio=0.5)

            def loss() -> float:
                if partial is None:
                    return ctc_loss(forward_ctc(net, x), y)[0]
                return imputer_loss(forward_imputer(net, x, partial), y, partial, cfg.mask_id)[0]

            if partial is None:
                grad_lattice = ctc_loss(forward_ctc(net, x), y)[1]
            else:
                grad_lattice = imputer_loss(forward_imputer(net, x, partial), y, partial, cfg.mask_id)[1]
            analytic = backward(net, x, grad_lattice, partial)
            named = dict(net.named_parameters())
            names = sorted(named)
            got, want = [], []
            for _ in range(n_coords):
                name = names[int(rng.integers(len(names)))]
                p = named[name]
                idx = tuple(int(rng.integers(d)) for d in p.shape)
                with torch.no_grad():
                    old = p[idx].item()
                    p[idx] = old + step
                    hi = loss()
                    p[idx] = old - step
                    lo = loss()
                    p[idx] = old
                got.append(analytic[name][idx])
                want.append((hi - lo) / (2 * step))
            worst = max(worst, relative_error(got, want, floor=GRAD_FLOOR))
        return n_instances * n_coords, worst
    return _timed("model-gradient", tol, run)


def collapse_roundtrip_suite(n_instances: int = 10_000, seed: int = 4) -> SuiteResult:
    """Every enumerated alignment collapses back to its target; counts agree with the DP."""
    def run():
        rng = np.random.default_rng(seed)
        bad = 0
        for _ in range(n_instances):
            n_vocab = int(rng.integers(1, 5))
            y = tuple(int(t) for t in rng.integers(1, n_vocab + 1, size=int(rng.integers(0, 5))))
            length = int(rng.integers(max(1, len(y)), 9))
            paths = enumerate_alignments(y, length)
            bad += len(paths) != count_alignments(y, length)
            bad += sum(collapse(a) != y for a in paths)
        example = (BLANK_ID, 1, 1, BLANK_ID, 1, 2, 2, 3, BLANK_ID, 4)
        bad += collapse(example) != (1, 1, 2, 3, 4)
        return n_instances, float(bad)
    return _timed("collapse-roundtrip", 0.5, run)


def run_all(seed: int = 0, scale: float = 1.0) -> list[SuiteResult]:
    """All suites; ``scale`` shrinks or grows the instance counts (CTC floor 1000 at scale 1)."""
    n = max(1, int(1000 * scale))
    results = [ctc_oracle_suite(n, seed)]
    results.extend(imputer_oracle_suite(n, seed + 1))
    results.append(dp_gradient_suite(max(1, int(50 * scale)), seed + 2))
    results.append(model_gradient_suite(max(1, int(4 * scale)), seed=seed + 3))
    results.append(collapse_roundtrip_suite(max(1, int(10_000 * scale)), seed + 4))
    return results
