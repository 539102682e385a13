"""scikit-learn style estimators over integer token sequences.

``X`` and ``y`` are ragged lists of id sequences using ids ``1..n`` (0 is
reserved for BLANK).  ``fit`` trains, ``predict`` decodes, ``score`` reports
corpus BLEU.
"""

from __future__ import annotations

import sys

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .checkpoint import Checkpoint
from .inference import ctc_predict, imputer_predict, score_batch, teacher_predict
from .metrics import bleu
from .model import ModelConfig
from .train import TrainConfig, fit_scorer, fit_teacher
from .validation import check_pairs, check_sequences, infer_n_tokens


class _NetworkEstimator(BaseEstimator):
    _kind = "ctc"

    def _model_config(self, n_tokens: int) -> ModelConfig:
        return ModelConfig(
            n_tokens=n_tokens, depth=self.depth, d_model=self.d_model, d_ff=self.d_ff,
            heads=self.heads, scale=self.scale, dropout=self.dropout,
            positional_encoding=self.positional_encoding,
        )

    def _train_config(self, **extra) -> TrainConfig:
        return TrainConfig(
            peak_lr=self.peak_lr, warmup_steps=self.warmup_steps, total_steps=self.total_steps,
            batch_tokens=self.batch_tokens, seed=self.random_state, clip_norm=self.clip_norm,
            eval_every=self.eval_every, average_best=self.average_best, **extra,
        )

    def _n_tokens(self, *collections) -> int:
        return self.n_tokens if self.n_tokens is not None else infer_n_tokens(*collections)

    def _dev(self, X_dev, y_dev, n_tokens):
        if X_dev is None:
            return None
        return (check_sequences(X_dev, n_tokens, "X_dev"), check_sequences(y_dev, n_tokens, "y_dev"))

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, **params):
        """Wrap an already trained checkpoint without refitting."""
        cfg = checkpoint.model_config
        est = cls(n_tokens=cfg.n_tokens, depth=cfg.depth, d_model=cfg.d_model, d_ff=cfg.d_ff,
                  heads=cfg.heads, scale=cfg.scale, dropout=cfg.dropout,
                  positional_encoding=cfg.positional_encoding, **params)
        est.checkpoint_ = checkpoint
        est.n_tokens_ = cfg.n_tokens
        return est

    @property
    def net_(self):
        check_is_fitted(self, "checkpoint_")
        return self.checkpoint_.net

    def score(self, X, y) -> float:
        """Corpus BLEU of ``predict(X)`` against ``y``."""
        return bleu(self.predict(X), check_sequences(y, name="y"))


class CTCTransducer(_NetworkEstimator):
    """Single-step CTC model: bidirectional self-attention over the upsampled source."""

    def __init__(self, n_tokens=None, depth=2, d_model=64, d_ff=256, heads=4, scale=2,
                 dropout=0.1, positional_encoding=True, peak_lr=1e-3, warmup_steps=500,
                 total_steps=5000, batch_tokens=512, clip_norm=1.0, eval_every=500,
                 average_best=0, random_state=0, verbose=False):
        self.n_tokens = n_tokens
        self.depth = depth
        self.d_model = d_model
        self.d_ff = d_ff
        self.heads = heads
        self.scale = scale
        self.dropout = dropout
        self.positional_encoding = positional_encoding
        self.peak_lr = peak_lr
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.batch_tokens = batch_tokens
        self.clip_norm = clip_norm
        self.eval_every = eval_every
        self.average_best = average_best
        self.random_state = random_state
        self.verbose = verbose

    def _fit_kwargs(self) -> dict:
        return {}

    def fit(self, X, y, X_dev=None, y_dev=None):
        X, y = check_pairs(X, y, self.scale, self.n_tokens)
        n_tokens = self._n_tokens(X, y)
        self.checkpoint_ = fit_scorer(
            X, y, self._model_config(n_tokens), self._train_config(**self._fit_kwargs()),
            mode=self._kind, dev=self._dev(X_dev, y_dev, n_tokens),
            log=sys.stderr if self.verbose else None,
        )
        self.n_tokens_ = n_tokens
        return self

    def predict_lattice(self, X) -> list[np.ndarray]:
        """Per-source score lattices of shape ``(scale * len(x), n_tokens + 1)``."""
        X = check_sequences(X, self.n_tokens_)
        scores = score_batch(self.net_, X)
        return [scores[i, : self.scale * len(x)] for i, x in enumerate(X)]

    def predict(self, X) -> list[tuple[int, ...]]:
        X = check_sequences(X, getattr(self, "n_tokens_", None))
        return ctc_predict(self.net_, X)


class ImputerTransducer(CTCTransducer):
    """Iterative Imputer: CTC stage, then Bernoulli-masked constrained training.

    ``decode_steps`` is the default number of top-k decoding iterations used
    by :meth:`predict` and for dev scoring during training.
    """

    _kind = "imputer"

    def __init__(self, n_tokens=None, depth=2, d_model=64, d_ff=256, heads=4, scale=2,
                 dropout=0.1, positional_encoding=True, peak_lr=1e-3, warmup_steps=500,
                 total_steps=5000, batch_tokens=512, clip_norm=1.0, eval_every=500,
                 average_best=0, random_state=0, verbose=False, stage_switch=None,
                 rollin="viterbi", decode_steps=4):
        super().__init__(
            n_tokens=n_tokens, depth=depth, d_model=d_model, d_ff=d_ff, heads=heads, scale=scale,
            dropout=dropout, positional_encoding=positional_encoding, peak_lr=peak_lr,
            warmup_steps=warmup_steps, total_steps=total_steps, batch_tokens=batch_tokens,
            clip_norm=clip_norm, eval_every=eval_every, average_best=average_best,
            random_state=random_state, verbose=verbose,
        )
        self.stage_switch = stage_switch
        self.rollin = rollin
        self.decode_steps = decode_steps

    def _fit_kwargs(self) -> dict:
        return dict(stage_switch=self.stage_switch, rollin=self.rollin, eval_steps=self.decode_steps)

    def predict(self, X, steps: int | None = None) -> list[tuple[int, ...]]:
        X = check_sequences(X, getattr(self, "n_tokens_", None))
        return imputer_predict(self.net_, X, steps or self.decode_steps)

    def predict_trace(self, X, steps: int | None = None):
        """Outputs plus the partial alignment after every decoding step."""
        X = check_sequences(X, getattr(self, "n_tokens_", None))
        return imputer_predict(self.net_, X, steps or self.decode_steps, return_traces=True)


class AutoregressiveTeacher(_NetworkEstimator):
    """Causal decoder-only teacher used to produce distilled targets."""

    _kind = "teacher"

    def __init__(self, n_tokens=None, depth=2, d_model=64, d_ff=256, heads=4, scale=2,
                 dropout=0.1, positional_encoding=True, peak_lr=1e-3, warmup_steps=500,
                 total_steps=5000, batch_tokens=1024, clip_norm=1.0, eval_every=500,
                 average_best=0, random_state=0, verbose=False, max_len=256):
        self.n_tokens = n_tokens
        self.depth = depth
        self.d_model = d_model
        self.d_ff = d_ff
        self.heads = heads
        self.scale = scale
        self.dropout = dropout
        self.positional_encoding = positional_encoding
        self.peak_lr = peak_lr
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.batch_tokens = batch_tokens
        self.clip_norm = clip_norm
        self.eval_every = eval_every
        self.average_best = average_best
        self.random_state = random_state
        self.verbose = verbose
        self.max_len = max_len

    def _model_config(self, n_tokens: int) -> ModelConfig:
        cfg = super()._model_config(n_tokens)
        cfg.max_len = self.max_len
        return cfg

    def fit(self, X, y, X_dev=None, y_dev=None):
        X = check_sequences(X, self.n_tokens, "X")
        y = check_sequences(y, self.n_tokens, "y")
        n_tokens = self._n_tokens(X, y)
        self.checkpoint_ = fit_teacher(
            X, y, self._model_config(n_tokens), self._train_config(),
            dev=self._dev(X_dev, y_dev, n_tokens), log=sys.stderr if self.verbose else None,
        )
        self.n_tokens_ = n_tokens
        return self

    def predict(self, X) -> list[tuple[int, ...]]:
        """Greedy decodes; sources with no END within ``scale * len(x)`` give ``()``."""
        X = check_sequences(X, getattr(self, "n_tokens_", None))
        return [h or () for h in teacher_predict(self.net_, X)]

    def transform(self, X) -> list[tuple[int, ...] | None]:
        """Distilled targets: greedy decodes, ``None`` where the decode overflowed."""
        X = check_sequences(X, getattr(self, "n_tokens_", None))
        return teacher_predict(self.net_, X)
