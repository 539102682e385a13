import io

import numpy as np
import pytest
import torch

from latent_align.data import Corpus, gen_task
from latent_align.inference import ctc_predict
from latent_align.model import ModelConfig
from latent_align.train import (
    TrainConfig, distill, fit_scorer, lr_schedule, train_ctc, train_imputer, train_teacher,
)


def tiny_model(n_tokens, **kw):
    base = dict(n_tokens=n_tokens, depth=1, d_model=32, d_ff=64, heads=2, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def copy_task():
    corpora, vocab, _task = gen_task("copy", (200, 30, 0), 8, (2, 6), seed=0)
    return corpora, vocab


def states_equal(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)


def test_lr_schedule_examples():
    cfg = TrainConfig(warmup_steps=400, total_steps=4000)
    assert lr_schedule(400, cfg) == pytest.approx(1e-3)
    assert lr_schedule(200, cfg) == pytest.approx(5e-4)
    assert lr_schedule(1600, cfg) == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        lr_schedule(0, cfg)


def test_train_config_validation():
    assert TrainConfig(total_steps=1000).stage_switch == 500
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()
    for bad in (dict(warmup_steps=10, total_steps=5), dict(rollin="nope"), dict(stage_switch=-1),
                dict(peak_lr=0.0), dict(batch_tokens=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_loss_decreases(copy_task):
    corpora, vocab = copy_task
    ckpt = train_ctc(corpora["train"], vocab, tiny_model(len(vocab)),
                     TrainConfig(total_steps=100, warmup_steps=20, eval_every=100))
    history = ckpt.extra["loss_history"]
    assert np.mean(history[-10:]) < 0.7 * np.mean(history[:10])


def test_identical_seeds_identical_checkpoints(copy_task):
    corpora, vocab = copy_task
    cfg = TrainConfig(total_steps=15, warmup_steps=5, eval_every=15, seed=3)
    runs = [train_ctc(corpora["train"], vocab, tiny_model(len(vocab), dropout=0.1), cfg) for _i in range(2)]
    assert states_equal(runs[0].net, runs[1].net)
    other = train_ctc(corpora["train"], vocab, tiny_model(len(vocab), dropout=0.1),
                      TrainConfig(total_steps=15, warmup_steps=5, eval_every=15, seed=4))
    assert not states_equal(runs[0].net, other.net)


def test_stage_one_imputer_reproduces_ctc(copy_task):
    corpora, vocab = copy_task
    cfg = TrainConfig(total_steps=20, warmup_steps=5, eval_every=20, stage_switch=20, seed=1)
    mc = tiny_model(len(vocab), dropout=0.1)
    ctc = train_ctc(corpora["train"], vocab, mc, cfg)
    imp = train_imputer(corpora["train"], vocab, mc, cfg)
    assert ctc.extra["loss_history"] == imp.extra["loss_history"]
    assert states_equal(ctc.net, imp.net)


@pytest.mark.parametrize("rollin", ["viterbi", "uniform"])
def test_stage_two_runs(copy_task, rollin):
    corpora, vocab = copy_task
    log = io.StringIO()
    ckpt = train_imputer(corpora["train"], vocab, tiny_model(len(vocab)),
                         TrainConfig(total_steps=20, warmup_steps=5, eval_every=10, stage_switch=10,
                                     rollin=rollin, eval_steps=2),
                         dev=corpora["dev"], log=log)
    lines = log.getvalue().splitlines()
    assert lines[0] == "step\tlr\tloss\tdev_bleu"
    assert [line.split("\t")[0] for line in lines[1:]] == ["10", "20"]
    assert ckpt.kind == "imputer" and np.all(np.isfinite(ckpt.extra["loss_history"]))


def test_continue_from_checkpoint(copy_task):
    corpora, vocab = copy_task
    mc = tiny_model(len(vocab))
    first = train_ctc(corpora["train"], vocab, mc, TrainConfig(total_steps=10, warmup_steps=5, eval_every=10))
    log = io.StringIO()
    cont = train_imputer(corpora["train"], vocab, mc,
                         TrainConfig(total_steps=10, warmup_steps=5, eval_every=10, stage_switch=0),
                         log=log, init=first)
    assert cont.step == 20
    step, lr = log.getvalue().splitlines()[1].split("\t")[:2]
    assert step == "20" and float(lr) == pytest.approx(1e-3 * (5 / 20) ** 0.5, rel=1e-5)
    with pytest.raises(ValueError, match="model config"):
        train_imputer(corpora["train"], vocab, tiny_model(len(vocab), d_model=16),
                      TrainConfig(total_steps=10, warmup_steps=5), init=first)


def test_canvas_violation_is_rejected():
    with pytest.raises(ValueError, match="canvas"):
        fit_scorer([(1,)], [(2, 2)], tiny_model(3), TrainConfig(total_steps=10, warmup_steps=5))


def test_distill_identity_teacher():
    corpora, vocab, _task = gen_task("copy", (60, 0, 0), 5, (2, 4), seed=1)
    teacher = train_teacher(corpora["train"], vocab, tiny_model(len(vocab)),
                            TrainConfig(total_steps=600, warmup_steps=50, peak_lr=3e-3,
                                        batch_tokens=256, eval_every=600))
    out = distill(teacher, corpora["train"], vocab)
    assert out.provenance == "distilled"
    assert out.pairs == corpora["train"].pairs and out.skipped == 0


def test_distill_is_deterministic_and_never_grows():
    corpora, vocab, _task = gen_task("multimodal", (40, 0, 0), 6, (2, 5), seed=2)
    train = corpora["train"]
    doubled = Corpus(train.pairs + [(x, y[::-1]) for x, y in train.pairs])
    teacher = train_teacher(train, vocab, tiny_model(len(vocab)),
                            TrainConfig(total_steps=30, warmup_steps=10, eval_every=30))
    out = distill(teacher, doubled, vocab)
    assert len(out) + out.skipped == len(doubled)
    targets = {}
    for x, y in out.pairs:
        assert targets.setdefault(x, y) == y
    with pytest.raises(ValueError):
        ckpt = train_ctc(train, vocab, tiny_model(len(vocab)), TrainConfig(total_steps=2, warmup_steps=1))
        distill(ckpt, train, vocab)


def test_ctc_learns_tiny_copy(copy_task):
    corpora, vocab = copy_task
    ckpt = train_ctc(corpora["train"], vocab, tiny_model(len(vocab)),
                     TrainConfig(total_steps=400, warmup_steps=50, eval_every=200, peak_lr=3e-3),
                     dev=corpora["dev"])
    src, tgt = corpora["dev"].encode(vocab)
    acc = np.mean([h == y for h, y in zip(ctc_predict(ckpt.net, src), tgt)])
    assert acc >= 0.9
    assert ckpt.extra["best_dev_bleu"] is not None


def test_lr_continuous_and_decreasing():
    cfg = TrainConfig(warmup_steps=100, total_steps=1000)
    values = [lr_schedule(s, cfg) for s in range(1, 1001)]
    assert max(values) == values[99] == pytest.approx(1e-3)
    assert all(a < b for a, b in zip(values[:99], values[1:100]))
    assert all(a > b for a, b in zip(values[99:], values[100:]))
    assert abs(values[100] - values[99]) < 1e-5
