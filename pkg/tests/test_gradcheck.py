import numpy as np
import pytest

from dpfgl import autodiff as ad
from dpfgl import gradcheck
from dpfgl.harness.commands import cmd_grad_check
from dpfgl.harness.config import RunConfig


def test_all_components_pass():
    results = gradcheck.run_all(seed=0)
    assert [r.component for r in results] == list(gradcheck.COMPONENTS)
    for r in results:
        assert r.passed, r
        assert r.coords_checked > 0


def _bad_square(a):
    data = a.data
    return ad._make(data * data, (a,), lambda g: (-2.0 * data * g,), "square")


def test_sign_error_in_backward_is_caught(monkeypatch):
    monkeypatch.setattr(ad, "square", _bad_square)
    r = gradcheck.check_fpf(seed=0)
    assert not r.passed and r.worst_rel_error > 1.0


def test_command_reports_every_component(capsys, tmp_path):
    assert cmd_grad_check(RunConfig(), tmp_path) == 0
    out = capsys.readouterr().out
    for name in gradcheck.COMPONENTS:
        assert name in out
    assert (tmp_path / "grad_check.json").is_file()


def test_command_exit_one_on_failure(monkeypatch, capsys):
    monkeypatch.setattr(ad, "square", _bad_square)
    assert cmd_grad_check(RunConfig()) == 1
    assert "FAIL" in capsys.readouterr().out


def test_nan_error_never_passes():
    assert not gradcheck.GradCheckResult("x", float("nan"), 1).passed
    assert gradcheck.GradCheckResult("x", 0.0, 1).passed


def test_check_tensors_on_known_function():
    x = ad.Tensor(np.array([0.3, -1.2, 2.0]))
    err, n = gradcheck.check_tensors(lambda: ad.tsum(ad.exp(x) * x), {"x": x}, np.random.default_rng(0))
    assert n == 3 and err < 1e-8
