import numpy as np
import pytest

from dpfgl.experiment import ExperimentConfig


def test_default_setup():
    cfg = ExperimentConfig()
    assert cfg.held_out == "checker_grid"
    assert cfg.fgl.inner_steps == 3 and cfg.fgl.shots == 1


@pytest.mark.slow
def test_meta_query_loss_falls_during_meta_training(heldout_runs):
    results, _ = heldout_runs
    falls = sum(np.mean(r.meta_losses[-10:]) < np.mean(r.meta_losses[:10]) for r in results)
    assert all(len(r.meta_losses) == ExperimentConfig().meta_episodes for r in results)
    assert falls >= 4


@pytest.mark.slow
def test_results_are_in_range(heldout_runs):
    for r in heldout_runs[0]:
        for v in (r.auc_base, r.auc_1shot, r.auc_5shot, r.acc_base, r.acc_1shot, r.acc_5shot, r.train_acc):
            assert 0.0 <= v <= 1.0
