"""Batched decoding with trained networks."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .alignment import collapse
from .ctc import best_path
from .imputer import imputer_decode_batch
from .model import AlignmentScorer, CausalTeacher


def pad(seqs: Sequence[Sequence[int]], fill: int = 0, width: int | None = None) -> np.ndarray:
    width = max(len(s) for s in seqs) if width is None else width
    out = np.full((len(seqs), width), fill, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield range(start, min(start + size, n))


def score_batch(net: AlignmentScorer, sources, partials=None) -> np.ndarray:
    """Padded (B, s*N_max, K) float64 scores, inference mode."""
    src = torch.as_tensor(pad(sources))
    lengths = [len(s) for s in sources]
    part = None if partials is None else torch.as_tensor(partials)
    net.eval()
    with torch.no_grad():
        return net(src, lengths, part).double().numpy()


def ctc_predict(net: AlignmentScorer, sources, batch_size: int = 256, return_alignments: bool = False):
    """Greedy CTC decoding: row-wise argmax, then collapse."""
    scale = net.config.scale
    outputs, alignments = [], []
    for idx in _chunks(len(sources), batch_size):
        chunk = [sources[i] for i in idx]
        scores = score_batch(net, chunk)
        for b, src in enumerate(chunk):
            a = best_path(scores[b, : scale * len(src)])
            alignments.append(tuple(int(v) for v in a))
            outputs.append(collapse(a))
    return (outputs, alignments) if return_alignments else outputs


def imputer_predict(net: AlignmentScorer, sources, steps: int, batch_size: int = 256,
                    return_traces: bool = False, counter: list | None = None):
    """Top-k iterative decoding with ``steps`` model calls per batch.

    ``counter``, when given, is a one-element list incremented per model call.
    """
    scale, mask_id = net.config.scale, net.config.mask_id
    outputs, traces = [], []
    for idx in _chunks(len(sources), batch_size):
        chunk = [sources[i] for i in idx]

        def model_fn(partials, chunk=chunk):
            if counter is not None:
                counter[0] += 1
            return score_batch(net, chunk, partials)

        outs, trs = imputer_decode_batch(model_fn, [scale * len(s) for s in chunk], steps, mask_id)
        outputs += outs
        traces += trs
    return (outputs, traces) if return_traces else outputs


def teacher_predict(net: CausalTeacher, sources, max_lengths=None, batch_size: int = 256):
    """Greedy autoregressive decoding.

    Returns one tuple per source, or ``None`` where no END was produced
    within ``max_lengths[i]`` tokens (default: ``scale * len(source)``).
    """
    if max_lengths is None:
        max_lengths = [net.config.scale * len(s) for s in sources]
    results: list = [None] * len(sources)
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(sources):
        by_len.setdefault(len(s), []).append(i)
    net.eval()
    for n, members in sorted(by_len.items()):
        for idx in _chunks(len(members), batch_size):
            rows = [members[i] for i in idx]
            ids = np.concatenate(
                [np.array([sources[r] for r in rows], dtype=np.int64),
                 np.full((len(rows), 1), net.sep_id, dtype=np.int64)], axis=1)
            limit = max(max_lengths[r] for r in rows)
            generated = np.zeros((len(rows), 0), dtype=np.int64)
            done = np.zeros(len(rows), dtype=bool)
            ended = np.zeros(len(rows), dtype=bool)
            with torch.no_grad():
                for _ in range(limit + 1):
                    logits = net(torch.as_tensor(ids))[:, -1]
                    nxt = logits.argmax(dim=-1).numpy()
                    ended |= ~done & (nxt == 0)
                    done |= nxt == 0
                    nxt = np.where(done, 0, nxt)
                    generated = np.concatenate([generated, nxt[:, None]], axis=1)
                    ids = np.concatenate([ids, np.maximum(nxt, 1)[:, None]], axis=1)
                    if done.all():
                        break
            for j, r in enumerate(rows):
                toks = generated[j]
                stop = np.flatnonzero(toks == 0)
                out = toks[: stop[0]] if stop.size else toks
                if ended[j] and len(out) <= max_lengths[r]:
                    results[r] = tuple(int(t) for t in out)
    return results
