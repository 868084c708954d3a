import pytest

from dpfgl.harness.config import ConfigError, RunConfig, dump_config, load_config, parse_config


def test_defaults_validate():
    cfg = load_config()
    assert cfg == RunConfig()
    assert cfg.target_technique == "band_stop"


def test_parse_types_and_comments():
    v = parse_config("""
        # comment
        seed = 7          # trailing
        known = checker_grid, ring_noise
        lr = 5e-4
        null_generator = yes
        corpus = data/x
    """)
    assert v == {"seed": 7, "known": ("checker_grid", "ring_noise"), "lr": 5e-4, "null_generator": True,
                 "corpus": "data/x"}


@pytest.mark.parametrize("text", ["bogus = 1", "seed = 1\nseed = 2", "seed", "seed = x", "null_generator = maybe"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_error_carries_line_number():
    with pytest.raises(ConfigError, match=":3:"):
        parse_config("seed = 1\n\nnope = 2\n")


def test_dump_roundtrip(tmp_path):
    cfg = RunConfig(seed=3, known=("blend_seam", "ring_noise"), unknown=("checker_grid",), shots=5, lr=3e-4)
    p = tmp_path / "c.cfg"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_overrides_beat_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 1\nepochs = 2\n")
    cfg = load_config(p, seed=9, epochs=None)
    assert cfg.seed == 9 and cfg.epochs == 2


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.cfg")


@pytest.mark.parametrize("kw", [
    dict(shots=3), dict(known=("nope",)), dict(known=("band_stop",)), dict(unknown=()),
    dict(train_per_class=0), dict(epochs=-1), dict(tau=0.0), dict(l_base=0.0), dict(technique="nope"),
])
def test_validation_errors(kw):
    with pytest.raises(ConfigError):
        load_config(**kw)


def test_any_shots_override():
    assert load_config(shots=3, allow_any_shots=True).shots == 3


def test_digest_ignores_paths_only():
    a = RunConfig()
    assert a.digest() == RunConfig(out="elsewhere", corpus="c2").digest()
    assert a.digest() != RunConfig(seed=1).digest()
    assert len(a.digest()) == 16


def test_derived_configs():
    cfg = RunConfig(shots=5, meta_query=4, beta1=0.8)
    assert cfg.fgl_config().shots == 5 and cfg.fgl_config().query_per_class == 4
    assert cfg.train_config().betas == (0.8, 0.999)
    assert cfg.corpus_config().known == cfg.known
