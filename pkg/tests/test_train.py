import numpy as np
import pytest

from dpfgl.autodiff import Tensor
from dpfgl.dpnet import build_model, models_equal
from dpfgl.harness.config import RunConfig
from dpfgl.optim import Adam, StepLR
from dpfgl.synthdata import CorpusConfig, generate_samples, select
from dpfgl.train import TrainConfig, predict, split_validation, train_detector


def _small(seed=0, n=10):
    recs = generate_samples(CorpusConfig(seed=seed, train_per_class=n, test_per_class=1, support_per_class=1,
                                         query_per_class=1))
    return select(recs, "train", ["checker_grid", "blend_seam", "ring_noise"])


def test_step_lr_halves_every_five():
    opt = Adam([Tensor(np.zeros(1), requires_grad=True)], lr=1e-3)
    sched = StepLR(opt, 5, 0.5)
    rates = []
    for e in range(12):
        sched.set_epoch(e)
        rates.append(opt.lr)
    assert rates[:5] == [1e-3] * 5 and rates[5:10] == [5e-4] * 5 and rates[10] == 2.5e-4


def test_validation_split_is_disjoint_and_seeded():
    data = _small()
    a, va = split_validation(data, 0.2, seed=1)
    b, vb = split_validation(data, 0.2, seed=1)
    assert list(a.ids) == list(b.ids) and list(va.ids) == list(vb.ids)
    assert not set(a.ids) & set(va.ids) and len(a) + len(va) == len(data)
    assert split_validation(data, 0.0, 0)[1] is None


def test_one_epoch_smoke_is_deterministic():
    data = _small(n=9)
    cfg = TrainConfig(epochs=1, lr=1e-3, betas=(0.9, 0.999))
    m1, h1 = train_detector(build_model(seed=0), data, cfg, seed=0)
    m2, h2 = train_detector(build_model(seed=0), data, cfg, seed=0)
    assert models_equal(m1, m2) and h1.epoch_loss == h2.epoch_loss
    assert not models_equal(m1, build_model(seed=0))
    assert len(h1.epoch_loss) == len(h1.train_acc) == 1 and h1.best_epoch == 0


def test_predict_in_unit_interval():
    s = predict(build_model(seed=1), _small(n=3).images)
    assert s.shape == (18,) and np.all((s > 0) & (s < 1))


@pytest.fixture(scope="module")
def default_runs():
    out = []
    for seed in range(5):
        cfg = RunConfig(seed=seed)
        data = select(generate_samples(cfg.corpus_config()), "train", list(cfg.known))
        _, hist = train_detector(build_model(seed=seed), data, cfg.train_config(), cfg.loss_weights(), seed=seed)
        out.append(hist)
    return out


@pytest.mark.slow
def test_loss_decreases_over_five_epochs(default_runs):
    assert sum(h.epoch_loss[4] < h.epoch_loss[0] for h in default_runs) >= 4


@pytest.mark.slow
def test_train_accuracy_at_defaults(default_runs):
    for h in default_runs:
        assert h.train_acc[-1] >= 0.90
