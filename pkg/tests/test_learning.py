"""Desk-scale learning checks; run with `pytest -m slow`."""

import numpy as np
import pytest

from uck.evaluation import evaluate
from uck.kernel import ModelConfig, UniversalCognitiveKernel
from uck.tasks import TaskSpec, generate_dataset
from uck.training import TrainConfig, train

pytestmark = pytest.mark.slow


def small_model(task, seed, **overrides):
    settings = dict(d_model=16, d_rule=16, n_rules=4, n_steps=3, seed=seed)
    settings.update(overrides)
    return UniversalCognitiveKernel(ModelConfig.for_task(task, **settings))


def test_loss_decreases_on_toy_set():
    dataset = generate_dataset(TaskSpec('reachability', 6, 20, seed=1))
    first, last = [], []
    for seed in range(3):
        result = train(small_model('reachability', seed), dataset,
                       TrainConfig(epochs=10, batch_size=4, lr=3e-3, seed=seed))
        first.append(result.epochs[0].mean_loss)
        last.append(result.epochs[-1].mean_loss)
    assert np.median(last) < np.median(first)


def test_reachability_beats_chance():
    train_set = generate_dataset(TaskSpec('reachability', 8, 200, seed=10))
    test_set = generate_dataset(TaskSpec('reachability', 8, 100, seed=11))
    model = small_model('reachability', 0)
    train(model, train_set, TrainConfig(epochs=15, batch_size=16, lr=3e-3))
    assert evaluate(model, test_set).accuracy > 0.6


def test_sat_global_head_trains():
    dataset = generate_dataset(TaskSpec('sat', 5, 40, seed=2))
    result = train(small_model('sat', 0), dataset, TrainConfig(epochs=5, batch_size=8, lr=3e-3))
    assert all(np.isfinite(e.mean_loss) for e in result.epochs)
    assert result.final.lr_last == pytest.approx(0.0, abs=1e-18)


def test_state_bounds_after_random_training():
    dataset = generate_dataset(TaskSpec('reachability', 6, 100, seed=4))
    model = small_model('reachability', 0)
    result = train(model, dataset, TrainConfig(epochs=4, batch_size=4, lr=1e-2))
    assert result.steps == 100
    for inst in dataset[:20]:
        diag = model.predict(inst).diagnostics
        assert np.max(np.abs(diag.final_phi)) <= model.config.phi_max
        assert max(abs(v) for v in diag.Phi_trace) <= model.config.n_steps


def test_desk_scale_reachability():
    train_set = generate_dataset(TaskSpec('reachability', 12, 2000, seed=20))
    test_set = generate_dataset(TaskSpec('reachability', 12, 500, seed=21))
    accuracies = []
    for seed in range(3):
        model = UniversalCognitiveKernel(ModelConfig.for_task('reachability', seed=seed))
        train(model, train_set, TrainConfig(epochs=15, seed=seed))
        accuracies.append(evaluate(model, test_set).accuracy)
    assert np.median(accuracies) >= 0.85


def _planning_cell(ablation, attention, seed, data):
    train_set, gen_set = data
    config = ModelConfig.for_task('planning', seed=seed).with_ablation(ablation).replace(attention=attention)
    model = UniversalCognitiveKernel(config)
    train(model, train_set, TrainConfig(epochs=15, seed=seed))
    return model, evaluate(model, gen_set)


@pytest.fixture(scope='module')
def planning_data():
    return {seed: (generate_dataset(TaskSpec('planning', 8, 2000, seed=100 + seed)),
                   generate_dataset(TaskSpec('planning', 12, 500, seed=200 + seed)))
            for seed in range(3)}


def test_directional_ablation(planning_data):
    gaps_global, gaps_projection = [], []
    for seed, data in planning_data.items():
        full = _planning_cell('full-dsp', 'sparsemax', seed, data)[1].accuracy
        no_global = _planning_cell('no-global-phi', 'sparsemax', seed, data)[1].accuracy
        softmax = _planning_cell('full-dsp', 'softmax', seed, data)[1].accuracy
        gaps_global.append(full - no_global)
        gaps_projection.append(full - softmax)
    assert np.median(gaps_global) >= 0.10
    assert np.median(gaps_projection) >= 0.05


def test_phi_separates_feasible_instances(planning_data):
    _, report = _planning_cell('full-dsp', 'sparsemax', 0, planning_data[0])
    phi = report.phi
    assert phi.feasible.sum_phi_mean > phi.infeasible.sum_phi_mean
    assert phi.feasible.Phi_mean > phi.infeasible.Phi_mean
    assert phi.sum_phi_p_value < 0.05
    assert phi.Phi_p_value < 0.05
