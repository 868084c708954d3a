import numpy as np
import pytest

from dpfgl.autodiff import ShapeError, Tensor
from dpfgl.dpnet import build_model, clone_params, forward, models_equal
from dpfgl.fgl import (
    ControlGenerator, FixedControls, GuidedUpdateConfig, LearningState, SourceSampler, adapt, compute_learning_state,
    draw_few_shot, guided_step, guided_update, init_generator, l2_regularized_step, meta_train_generator,
    query_loss, sample_episode,
)
from dpfgl.losses import bce
from dpfgl.rng import make_rng
from dpfgl.synthdata import LABEL_FAKE, LABEL_REAL, CorpusConfig, generate_samples, select
from dpfgl.train import TrainConfig, train_detector

KNOWN = ("checker_grid", "blend_seam", "ring_noise")
CFG = GuidedUpdateConfig(l_base=2e-3, meta_lr=1e-2, query_per_class=4)


@pytest.fixture(scope="module")
def corpus():
    recs = generate_samples(CorpusConfig(known=KNOWN, unknown=("band_stop",), seed=0, train_per_class=12,
                                         test_per_class=1, support_per_class=6, query_per_class=6))
    return tuple(select(recs, split, list(KNOWN)) for split in ("train", "support", "query"))


@pytest.fixture(scope="module")
def model():
    return build_model(seed=0)


def _support(corpus, seed=0, k=1, technique="checker_grid"):
    return draw_few_shot(corpus[1], technique, k, make_rng(seed, "test-support"))


# ---------------------------------------------------------------- learning state
def test_learning_state_layer_mean():
    params = {"a": {"weight": np.array([1.0, 2.0, 3.0])}, "b": {"weight": np.zeros((2, 2)), "bias": np.ones(2)}}
    grads = {"a": {"weight": np.array([0.5, 0.5, 2.0])}, "b": {"weight": np.ones((2, 2)), "bias": np.ones(2)}}
    s = compute_learning_state(params, grads)
    np.testing.assert_allclose(s.theta_bar, [2.0, 2 / 6])
    np.testing.assert_allclose(s.delta_bar, [1.0, 1.0])
    assert s.n == 2 and len(s.t) == 4


def test_learning_state_zero_model(model):
    zero = {n: {k: np.zeros_like(v) for k, v in g.items()} for n, g in clone_params(model).items()}
    s = compute_learning_state(zero, zero)
    assert np.all(s.theta_bar == 0) and len(s.t) == 2 * model.n_layers


def test_learning_state_missing_gradient():
    params = {"a": {"weight": np.ones(2)}, "b": {"weight": np.ones(2), "bias": np.ones(1)}}
    with pytest.raises(KeyError):
        compute_learning_state(params, {"a": {"weight": np.ones(2)}})
    with pytest.raises(KeyError):
        compute_learning_state(params, {"a": {"weight": np.ones(2)}, "b": {"weight": np.ones(2)}})


# ---------------------------------------------------------------- generator
def _state(rng, n):
    return LearningState(rng.normal(size=n), rng.normal(scale=10.0, size=n))


def test_zero_generator_controls():
    n = 5
    gen = ControlGenerator(Tensor(np.zeros((4 * n, 2 * n))), Tensor(np.zeros(4 * n)), Tensor(np.zeros((2 * n, 4 * n))),
                           Tensor(np.zeros(2 * n)), l_base=2e-4, w_range=0.01)
    c = gen(_state(np.random.default_rng(0), n))
    np.testing.assert_allclose(c.l.data, np.log(2.0) * 2e-4, rtol=1e-15)
    np.testing.assert_array_equal(c.w.data, 1.0)


def test_fresh_generator_starts_at_softplus_zero():
    c = init_generator(18, seed=3, l_base=1e-3)(_state(np.random.default_rng(1), 18))
    np.testing.assert_allclose(c.l.data, np.log(2.0) * 1e-3, rtol=1e-15)
    np.testing.assert_array_equal(c.w.data, 1.0)


@pytest.mark.parametrize("scale", [0.1, 3.0, 1e4])
@pytest.mark.parametrize("seed", range(10))
def test_random_generator_bounds(seed, scale):
    rng = np.random.default_rng(seed)
    gen = init_generator(18, seed=seed, w_range=0.05)
    gen.w2.data = rng.normal(scale=scale, size=gen.w2.shape)
    gen.b2.data = rng.normal(scale=scale, size=gen.b2.shape)
    c = gen(_state(rng, 18))
    assert np.all(c.l.data > 0) and np.all(np.isfinite(c.l.data))
    assert np.all(c.w.data > 0.95) and np.all(c.w.data < 1.05)


def test_generator_is_deterministic():
    gen = init_generator(6, seed=0)
    gen.w2.data = np.random.default_rng(0).normal(size=gen.w2.shape)
    s = _state(np.random.default_rng(2), 6)
    a, b = gen(s), gen(s)
    np.testing.assert_array_equal(a.l.data, b.l.data)
    np.testing.assert_array_equal(a.w.data, b.w.data)
    assert init_generator(6, seed=4).w1.data.tobytes() == init_generator(6, seed=4).w1.data.tobytes()


def test_generator_state_size_mismatch():
    with pytest.raises(ShapeError):
        init_generator(4)(_state(np.random.default_rng(0), 5))


def test_config_validation():
    with pytest.raises(ValueError):
        GuidedUpdateConfig(l_base=0.0)
    with pytest.raises(ValueError):
        GuidedUpdateConfig(w_range=1.0)
    with pytest.raises(ValueError):
        GuidedUpdateConfig(inner_steps=-1)


# ---------------------------------------------------------------- update rule
def test_guided_update_hand_value():
    out = guided_update([1.0, -2.0], [0.5, 0.5], np.array([0.9, 1.0]), np.array([0.1, 0.2]))
    np.testing.assert_allclose(out, [0.85, -2.1], atol=1e-15)


def test_l2_equivalence_hand_value():
    a = l2_regularized_step(np.array(1.0), np.array(0.5), 0.1, 0.01)
    b = guided_update(1.0, 0.5, 1 - 0.1 * 0.01, 0.1)
    assert a == pytest.approx(0.949, abs=1e-15) and b == pytest.approx(0.949, abs=1e-15)


def test_l2_equivalence_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 3)))
        theta, grad = rng.normal(scale=3.0, size=shape), rng.normal(scale=3.0, size=shape)
        l, lam = float(rng.uniform(0, 1)), float(rng.uniform(0, 1))
        np.testing.assert_allclose(l2_regularized_step(theta, grad, l, lam), guided_update(theta, grad, 1 - l * lam, l),
                                   rtol=0, atol=1e-12)


def test_guided_update_shape_errors():
    with pytest.raises(ShapeError):
        guided_update(np.ones(3), np.ones(2), 1.0, 0.1)
    with pytest.raises(ShapeError):
        guided_update(np.ones(3), np.ones(3), np.ones(2), 0.1)


def test_unit_decay_equals_gradient_descent():
    rng = np.random.default_rng(1)
    params = {"a": {"weight": rng.normal(size=(3, 4)), "bias": rng.normal(size=3)}, "b": {"weight": rng.normal(size=5)}}
    plain = {n: {k: v.copy() for k, v in g.items()} for n, g in params.items()}
    c = FixedControls(l=0.037, w=1.0)
    for step in range(10):
        grads = {n: {k: np.sin(v * (step + 1)) for k, v in g.items()} for n, g in params.items()}
        params = guided_step(params, grads, c(LearningState(np.zeros(2), np.zeros(2))))
        plain = {n: {k: v - 0.037 * np.sin(v * (step + 1)) for k, v in g.items()} for n, g in plain.items()}
    for n in params:
        for k in params[n]:
            assert params[n][k].tobytes() == plain[n][k].tobytes()


def test_guided_step_control_count_mismatch():
    params = {"a": {"weight": np.ones(2)}}
    with pytest.raises(ShapeError):
        guided_step(params, params, FixedControls()(LearningState(np.zeros(2), np.zeros(2))))


# ---------------------------------------------------------------- adaptation
def _sampler(corpus, seed=0):
    return SourceSampler(corpus[0], 8, seed=seed, stream="test-source")


def test_zero_inner_steps_is_identity(model, corpus):
    r = adapt(model, init_generator(model.n_layers), _support(corpus), _sampler(corpus),
              GuidedUpdateConfig(inner_steps=0))
    assert models_equal(r.model, model) and r.steps == []


def test_null_controls_leave_model_unchanged(model, corpus):
    r = adapt(model, FixedControls(0.0, 1.0), _support(corpus, k=2), _sampler(corpus), GuidedUpdateConfig(inner_steps=4))
    assert models_equal(r.model, model) and len(r.steps) == 4


def test_adapt_does_not_mutate_input(model, corpus):
    before = clone_params(model)
    r = adapt(model, init_generator(model.n_layers, l_base=1e-2), _support(corpus), _sampler(corpus), CFG)
    after = clone_params(model)
    assert all(before[n][k].tobytes() == after[n][k].tobytes() for n in before for k in before[n])
    assert not models_equal(r.model, model)


def test_adapt_records_support_ids(model, corpus):
    sup = _support(corpus, k=2)
    r = adapt(model, FixedControls(), sup, _sampler(corpus), CFG)
    assert r.support_ids == list(sup.ids)


def test_empty_support_rejected(model, corpus):
    with pytest.raises(ValueError):
        adapt(model, FixedControls(), corpus[1].subset(np.array([], dtype=int)), _sampler(corpus), CFG)


def _support_bce(m, sup):
    return bce(forward(m, Tensor(sup.images))[0], sup.labels).item()


def test_adaptation_lowers_support_loss(corpus):
    wins = 0
    for seed in range(5):
        m = build_model(seed=seed)
        sup = _support(corpus, seed=seed, technique=KNOWN[seed % 3])
        sampler = SourceSampler(corpus[0], CFG.source_batch, seed=seed, stream="adapt")
        r = adapt(m, init_generator(m.n_layers, seed, CFG.l_base), sup, sampler, CFG)
        wins += _support_bce(r.model, sup) <= _support_bce(m, sup)
    assert wins >= 4


# ---------------------------------------------------------------- episodes and meta-training
def test_draw_few_shot_composition(corpus):
    sup = draw_few_shot(corpus[1], "ring_noise", 3, make_rng(0, "x"))
    assert np.sum(sup.labels == LABEL_REAL) == np.sum(sup.labels == LABEL_FAKE) == 3
    assert set(sup.techniques[sup.labels == LABEL_FAKE]) == {"ring_noise"}
    assert len(set(sup.ids)) == 6
    with pytest.raises(ValueError):
        draw_few_shot(corpus[1], "ring_noise", 100, make_rng(0, "x"))


def test_episode_sampling_is_deterministic(corpus):
    a = sample_episode(*corpus, KNOWN, CFG, seed=3, episode=7)
    b = sample_episode(*corpus, KNOWN, CFG, seed=3, episode=7)
    assert a.technique == b.technique
    assert list(a.support.ids) == list(b.support.ids) and list(a.query.ids) == list(b.query.ids)
    assert a.technique not in set(a.source.techniques[a.source.labels == LABEL_FAKE])
    assert not set(a.support.ids) & set(a.query.ids)


def test_meta_zero_learning_rate_keeps_generator(model, corpus):
    gen = init_generator(model.n_layers, seed=1, l_base=CFG.l_base)
    before = {k: v.data.copy() for k, v in gen.named_parameters().items()}
    cfg = GuidedUpdateConfig(l_base=CFG.l_base, meta_lr=0.0, query_per_class=4, inner_steps=1)
    _, hist = meta_train_generator(gen, model, *corpus, KNOWN, cfg, episodes=1)
    assert len(hist.query_losses) == 1
    for k, v in gen.named_parameters().items():
        assert v.data.tobytes() == before[k].tobytes()


def test_meta_zero_episodes(model, corpus):
    gen = init_generator(model.n_layers)
    _, hist = meta_train_generator(gen, model, *corpus, KNOWN, CFG, episodes=0)
    assert hist.query_losses == []


def test_meta_needs_two_techniques(model, corpus):
    with pytest.raises(ValueError):
        meta_train_generator(init_generator(model.n_layers), model, *corpus, ["checker_grid"], CFG, episodes=1)
    with pytest.raises(ValueError):
        meta_train_generator(init_generator(model.n_layers), model, *corpus, ["ring_noise"] * 2, CFG, episodes=1)


def test_meta_training_is_reproducible(model, corpus):
    cfg = GuidedUpdateConfig(l_base=CFG.l_base, meta_lr=CFG.meta_lr, query_per_class=4, inner_steps=1)
    runs = [meta_train_generator(init_generator(model.n_layers, 2, cfg.l_base), model, *corpus, KNOWN, cfg, 2, seed=5)
            for _ in range(2)]
    assert runs[0][1].query_losses == runs[1][1].query_losses
    assert runs[0][0].w2.data.tobytes() == runs[1][0].w2.data.tobytes()
    assert np.any(runs[0][0].w2.data != 0)


def _mean_query_loss(model, gen, data, cfg, seed):
    out = []
    for e in range(1000, 1006):
        ep = sample_episode(*data, KNOWN, cfg, seed, e)
        r = adapt(model, gen, ep.support, SourceSampler(ep.source, cfg.source_batch, seed, f"eval-{e}"), cfg)
        out.append(query_loss(r.model, None, ep.query).item())
    return float(np.mean(out))


@pytest.mark.slow
def test_meta_training_lowers_query_loss():
    cfg = GuidedUpdateConfig(l_base=2e-3, meta_lr=1e-2, query_per_class=10)
    before, after = [], []
    for seed in range(5):
        recs = generate_samples(CorpusConfig(known=KNOWN, unknown=("band_stop",), seed=seed, train_per_class=40,
                                             test_per_class=1, support_per_class=10, query_per_class=10))
        data = tuple(select(recs, split, list(KNOWN)) for split in ("train", "support", "query"))
        m, _ = train_detector(build_model(seed=seed), data[0],
                              TrainConfig(epochs=2, lr=1e-3, betas=(0.9, 0.999), val_fraction=0.0), seed=seed)
        gen = init_generator(m.n_layers, seed, cfg.l_base, cfg.w_range)
        before.append(_mean_query_loss(m, gen, data, cfg, seed))
        meta_train_generator(gen, m, *data, KNOWN, cfg, episodes=15, seed=seed)
        after.append(_mean_query_loss(m, gen, data, cfg, seed))
    assert np.mean(after) <= np.mean(before)
