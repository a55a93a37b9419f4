"""
Evaluation metrics, reports and the ablation grid.

This module provides:
- balance_score and count-derived metrics
- evaluate(), producing an EvalReport with class-conditional Phi statistics
- run_ablation_grid(), training every (ablation, attention) cell per seed
- pandas aggregation and CSV export of grid results
- published reference values printed next to measured ones
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy import stats

from uck.errors import ConfigError, DataIOError, TaskMismatchError, UckError
from uck.kernel import ABLATIONS, TASK_HEADS, UniversalCognitiveKernel
from uck.training import train

logger = logging.getLogger(__name__)

COLLAPSE_THRESHOLD = 0.5

# Published results on the generalisation splits, keyed by (task, configuration).
REFERENCE_RESULTS = {
    ('planning', 'full-dsp'): {'accuracy': 0.974, 'accuracy_std': 0.001, 'acc_pos': 0.999, 'acc_neg': 0.948,
                               'balance': 0.949},
    ('planning', 'no-dsp'): {'accuracy': 0.597, 'acc_pos': 0.201, 'acc_neg': 0.993, 'balance': 0.203},
    ('sat', 'full-dsp'): {'accuracy': 0.964, 'accuracy_std': 0.007, 'acc_pos': 0.996, 'acc_neg': 0.932,
                          'balance': 0.936},
    ('reachability', 'full-dsp'): {'accuracy': 0.827, 'accuracy_std': 0.012, 'acc_pos': 0.771, 'acc_neg': 0.883,
                                   'balance': 0.873},
    ('reachability', 'no-dsp'): {'accuracy': 0.734, 'acc_pos': 0.562, 'acc_neg': 0.906, 'balance': 0.620},
}

# Planning ablations: in-distribution accuracy, generalisation accuracy, generalisation acc_neg.
REFERENCE_ABLATIONS = {
    'full-dsp': (0.970, 0.980, 0.960),
    'no-phi': (0.968, 0.588, 0.176),
    'no-global-phi': (0.966, 0.640, 0.280),
    'phi-keys-only': (0.970, 0.980, 0.960),
    'phi-effects-only': (0.964, 0.982, 0.964),
    'no-dsp': (0.828, 0.784, 0.852),
}

# Planning generalisation accuracy (mean, std over seeds) per attention kind.
REFERENCE_ATTENTION = {'sparsemax': (0.974, 0.001), 'softmax': (0.711, 0.028)}

# Final global Phi on planning by true class (mean, std).
REFERENCE_PHI = {'feasible': (18.0, 6.4), 'infeasible': (-13.5, 15.9), 'separation': 31.5}


# ==================== METRICS ====================

def balance_score(acc_pos, acc_neg):
    """min(acc_pos, acc_neg) / max(acc_pos, acc_neg); 0 when both are 0."""
    for name, value in (('acc_pos', acc_pos), ('acc_neg', acc_neg)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f'{name} must lie in [0, 1], got {value}')
    top = max(acc_pos, acc_neg)
    return 0.0 if top == 0 else min(acc_pos, acc_neg) / top


def metrics_from_counts(tp, tn, fp, fn):
    """Overall and per-class accuracy plus balance from confusion counts alone."""
    total = tp + tn + fp + fn
    positives, negatives = tp + fn, tn + fp
    acc_pos = tp / positives if positives else None
    acc_neg = tn / negatives if negatives else None
    balance = balance_score(acc_pos, acc_neg) if positives and negatives else None
    return {
        'accuracy': (tp + tn) / total if total else 0.0,
        'acc_pos': acc_pos,
        'acc_neg': acc_neg,
        'balance': balance,
    }


@dataclass
class ClassStatistics:
    n: int
    Phi_mean: float
    Phi_std: float
    sum_phi_mean: float
    sum_phi_std: float


@dataclass
class PhiStatistics:
    """
    Final-step Phi and sum(phi) by true class. A class with no instances is
    None; separations and Welch p-values are None unless both classes exist.
    """

    feasible: Optional[ClassStatistics] = None
    infeasible: Optional[ClassStatistics] = None
    Phi_separation: Optional[float] = None
    sum_phi_separation: Optional[float] = None
    Phi_p_value: Optional[float] = None
    sum_phi_p_value: Optional[float] = None

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ('feasible', 'infeasible'):
            if data.get(key) is not None:
                data[key] = ClassStatistics(**data[key])
        return cls(**data)


def _welch_p(a, b):
    if len(a) < 2 or len(b) < 2:
        return None
    p = stats.ttest_ind(a, b, equal_var=False).pvalue
    return None if np.isnan(p) else float(p)


def phi_statistics(final_Phi, final_sum_phi, labels):
    """
    Class-conditional statistics of the final global and summed local feasibility.

    Args:
        final_Phi: Final Phi per instance.
        final_sum_phi: Final sum(phi) per instance.
        labels: True labels (1 = feasible).

    Returns:
        PhiStatistics
    """
    Phi = np.asarray(final_Phi, dtype=np.float64)
    sum_phi = np.asarray(final_sum_phi, dtype=np.float64)
    labels = np.asarray(labels)
    result = PhiStatistics()
    groups = {}
    for name, value in (('feasible', 1), ('infeasible', 0)):
        mask = labels == value
        if not mask.any():
            continue
        groups[name] = (Phi[mask], sum_phi[mask])
        setattr(result, name, ClassStatistics(
            n=int(mask.sum()),
            Phi_mean=float(Phi[mask].mean()), Phi_std=float(Phi[mask].std()),
            sum_phi_mean=float(sum_phi[mask].mean()), sum_phi_std=float(sum_phi[mask].std())))
    if result.feasible is not None and result.infeasible is not None:
        result.Phi_separation = result.feasible.Phi_mean - result.infeasible.Phi_mean
        result.sum_phi_separation = result.feasible.sum_phi_mean - result.infeasible.sum_phi_mean
        result.Phi_p_value = _welch_p(groups['feasible'][0], groups['infeasible'][0])
        result.sum_phi_p_value = _welch_p(groups['feasible'][1], groups['infeasible'][1])
    return result


# ==================== REPORTS ====================

@dataclass
class EvalReport:
    task: str
    n: int
    accuracy: float
    acc_pos: Optional[float]
    acc_neg: Optional[float]
    balance: Optional[float]
    tp: int
    tn: int
    fp: int
    fn: int
    ties: int
    mean_active_rules: float
    phi: PhiStatistics = field(default_factory=PhiStatistics)
    provenance: dict = field(default_factory=dict)

    @property
    def collapsed(self):
        """True when one class is predicted far worse than the other."""
        return self.balance is not None and self.balance < COLLAPSE_THRESHOLD

    def to_dict(self):
        data = dataclasses.asdict(self)
        data['collapsed'] = self.collapsed
        return data

    @classmethod
    def from_dict(cls, data):
        data = {k: v for k, v in data.items() if k != 'collapsed'}
        try:
            data['phi'] = PhiStatistics.from_dict(data.get('phi') or {})
            return cls(**data)
        except TypeError as e:
            raise DataIOError(f'malformed evaluation report: {e}') from e


def _check_head(model, dataset):
    if not dataset:
        raise ConfigError('evaluation dataset is empty')
    tasks = sorted({inst.task for inst in dataset})
    for task in tasks:
        if TASK_HEADS[task] != model.config.head:
            raise TaskMismatchError(
                f'{task} instances need the {TASK_HEADS[task]} head, model has the {model.config.head} head')
    if len(tasks) > 1:
        raise TaskMismatchError(f'evaluation dataset mixes tasks: {", ".join(tasks)}')
    return tasks[0]


def evaluate(model, dataset, provenance=None):
    """
    Score a model on a dataset in evaluation mode.

    Predictions are the argmax of the logits; exactly equal logits predict 0
    and are counted as ties.

    Args:
        model: UniversalCognitiveKernel.
        dataset: Non-empty list of GraphInstance of one task.
        provenance: Optional dict stored verbatim on the report.

    Returns:
        EvalReport

    Raises:
        TaskMismatchError: If the dataset's task does not match the model head.
    """
    task = _check_head(model, dataset)
    tp = tn = fp = fn = ties = 0
    final_Phi, final_sum_phi, active, labels = [], [], [], []
    for inst in dataset:
        out = model.predict(inst)
        z0, z1 = out.logits.data
        ties += int(z0 == z1)
        pred = 1 if z1 > z0 else 0
        if inst.label == 1:
            tp += pred
            fn += 1 - pred
        else:
            fp += pred
            tn += 1 - pred
        final_Phi.append(out.diagnostics.final_Phi)
        final_sum_phi.append(out.diagnostics.final_sum_phi)
        active.append(out.diagnostics.mean_active_rules)
        labels.append(inst.label)

    metrics = metrics_from_counts(tp, tn, fp, fn)
    report = EvalReport(
        task=task, n=len(dataset), tp=tp, tn=tn, fp=fp, fn=fn, ties=ties,
        mean_active_rules=float(np.mean(active)),
        phi=phi_statistics(final_Phi, final_sum_phi, labels),
        provenance=dict(provenance or {}), **metrics)
    logger.info(f'Evaluated {report.n} {task} instances: accuracy {report.accuracy:.3f}, '
                f'balance {report.balance}, ties {ties}')
    if report.collapsed:
        logger.warning(f'Class collapse on {task}: acc_pos {report.acc_pos}, acc_neg {report.acc_neg}')
    return report


def generalization_gap(in_dist, generalization):
    """In-distribution accuracy minus generalisation accuracy."""
    return in_dist.accuracy - generalization.accuracy


def reference_comparison(report, ablation='full-dsp'):
    """
    Pair each measured metric with its published value, when one exists.

    Returns:
        dict: metric -> (measured, reference); empty when there is no reference.
    """
    reference = REFERENCE_RESULTS.get((report.task, ablation))
    if reference is None:
        return {}
    measured = report.to_dict()
    return {key: (measured[key], value) for key, value in reference.items() if key in measured}


def phi_reference_comparison(report):
    """
    Pair the final-Phi class means and their separation with the published
    planning values (reference entries are (mean, std) or a bare number).

    Returns:
        dict: 'feasible' / 'infeasible' / 'separation' -> (measured, reference);
        empty unless the report is on planning and holds both classes.
    """
    phi = report.phi
    if report.task != 'planning' or phi.feasible is None or phi.infeasible is None:
        return {}
    return {
        'feasible': (phi.feasible.Phi_mean, REFERENCE_PHI['feasible']),
        'infeasible': (phi.infeasible.Phi_mean, REFERENCE_PHI['infeasible']),
        'separation': (phi.Phi_separation, REFERENCE_PHI['separation']),
    }


# ==================== ABLATION GRID ====================

@dataclass
class GridConfig:
    """Which cells, seeds and dataset sizes an ablation run covers."""

    task: str = 'planning'
    train_size: int = 8
    gen_size: int = 12
    train_count: int = 2000
    test_count: int = 500
    gen_count: int = 500
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    ablations: List[str] = field(default_factory=lambda: list(ABLATIONS))
    attention_kinds: List[str] = field(default_factory=lambda: ['sparsemax', 'softmax'])
    balance: float = 0.5

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f'unknown grid setting {name!r}' for name in unknown])
        return cls(**data)

    def validate(self):
        from uck.utils import validate_grid_config
        errors = validate_grid_config(self.to_dict())
        if errors:
            raise ConfigError(errors)
        return self


@dataclass(frozen=True)
class AblationCell:
    ablation: str
    attention: str

    @property
    def name(self):
        return f'{self.ablation}--{self.attention}'

    def model_config(self, base, seed):
        return base.with_ablation(self.ablation).replace(attention=self.attention, seed=seed)


def default_cells(ablations=None, attention_kinds=None):
    """Every (ablation, attention kind) pair; 6 x 2 = 12 cells by default."""
    return [AblationCell(a, k) for a in (ablations or list(ABLATIONS))
            for k in (attention_kinds or ['sparsemax', 'softmax'])]


@dataclass
class CellResult:
    cell: AblationCell
    seed: int
    in_dist: Optional[EvalReport] = None
    generalization: Optional[EvalReport] = None
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None

    def to_dict(self):
        return {
            'ablation': self.cell.ablation,
            'attention': self.cell.attention,
            'seed': self.seed,
            'in_dist': self.in_dist.to_dict() if self.in_dist else None,
            'generalization': self.generalization.to_dict() if self.generalization else None,
            'error': self.error,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            cell=AblationCell(data['ablation'], data['attention']),
            seed=data['seed'],
            in_dist=EvalReport.from_dict(data['in_dist']) if data.get('in_dist') else None,
            generalization=EvalReport.from_dict(data['generalization']) if data.get('generalization') else None,
            error=data.get('error'),
        )


def run_ablation_grid(base, train_config, data_for_seed, seeds, cells=None, completed=None, on_cell=None):
    """
    Train and evaluate every cell once per seed.

    All cells use the same seed list and, per seed, the same datasets, so
    comparisons between cells are paired. A failing cell is logged and
    recorded with its error; the remaining cells still run.

    Args:
        base: ModelConfig the ablations are applied to.
        train_config: TrainConfig; its seed is replaced by each run's seed.
        data_for_seed: Callable(seed) -> (train, in-distribution test, generalisation) datasets.
        seeds: Seeds driving data generation and initialisation together.
        cells: AblationCells to run (default_cells() when None).
        completed: Optional {(cell name, seed): CellResult} of finished runs to reuse.
        on_cell: Optional callable(CellResult) invoked after each newly run cell.

    Returns:
        list[CellResult] in cell-major, seed-minor order.
    """
    cells = cells if cells is not None else default_cells()
    completed = completed or {}
    data_cache = {}
    results = []
    for cell in cells:
        for seed in seeds:
            key = (cell.name, seed)
            if key in completed and completed[key].ok:
                logger.info(f'Skipping completed cell {cell.name} seed {seed}')
                results.append(completed[key])
                continue
            logger.info(f'Running cell {cell.name} seed {seed}')
            result = CellResult(cell=cell, seed=seed)
            try:
                if seed not in data_cache:
                    data_cache[seed] = data_for_seed(seed)
                train_set, test_set, gen_set = data_cache[seed]
                model = UniversalCognitiveKernel(cell.model_config(base, seed))
                train(model, train_set, train_config.replace(seed=seed))
                provenance = {'cell': cell.name, 'seed': seed}
                result.in_dist = evaluate(model, test_set, {**provenance, 'split': 'in-distribution'})
                result.generalization = evaluate(model, gen_set, {**provenance, 'split': 'generalization'})
                logger.info(f'Finished cell {cell.name} seed {seed}: in-dist {result.in_dist.accuracy:.3f}, '
                            f'generalization {result.generalization.accuracy:.3f}')
            except UckError as e:
                logger.error(f'Cell {cell.name} seed {seed} failed: {e}', exc_info=True)
                result.error = f'{type(e).__name__}: {e}'
            results.append(result)
            if on_cell is not None:
                on_cell(result)
    return results


AGGREGATE_COLUMNS = [
    'ablation', 'attention', 'seeds', 'failed',
    'in_dist_acc_mean', 'in_dist_acc_std',
    'gen_acc_mean', 'gen_acc_std',
    'gen_acc_neg_mean', 'gen_acc_neg_std',
    'gen_balance_mean', 'gen_balance_std',
    'gap_mean',
]


def results_frame(results):
    """One row per (cell, seed) run."""
    rows = []
    for r in results:
        row = {'ablation': r.cell.ablation, 'attention': r.cell.attention, 'seed': r.seed, 'failed': not r.ok}
        if r.ok:
            row.update({
                'in_dist_acc': r.in_dist.accuracy,
                'gen_acc': r.generalization.accuracy,
                'gen_acc_neg': r.generalization.acc_neg,
                'gen_balance': r.generalization.balance,
                'gap': generalization_gap(r.in_dist, r.generalization),
            })
        rows.append(row)
    columns = ['ablation', 'attention', 'seed', 'failed', 'in_dist_acc', 'gen_acc', 'gen_acc_neg',
               'gen_balance', 'gap']
    return pd.DataFrame(rows, columns=columns)


def aggregate_results(results):
    """
    Mean and population std (ddof=0) over seeds for every cell.

    Returns:
        pd.DataFrame: One row per cell, columns AGGREGATE_COLUMNS, in cell order.
    """
    frame = results_frame(results)
    metrics = ['in_dist_acc', 'gen_acc', 'gen_acc_neg', 'gen_balance', 'gap']
    frame[metrics] = frame[metrics].astype(float)
    grouped = frame.groupby(['ablation', 'attention'], sort=False)
    table = grouped.agg(
        seeds=('seed', 'count'),
        failed=('failed', 'sum'),
        in_dist_acc_mean=('in_dist_acc', 'mean'),
        in_dist_acc_std=('in_dist_acc', lambda s: s.std(ddof=0)),
        gen_acc_mean=('gen_acc', 'mean'),
        gen_acc_std=('gen_acc', lambda s: s.std(ddof=0)),
        gen_acc_neg_mean=('gen_acc_neg', 'mean'),
        gen_acc_neg_std=('gen_acc_neg', lambda s: s.std(ddof=0)),
        gen_balance_mean=('gen_balance', 'mean'),
        gen_balance_std=('gen_balance', lambda s: s.std(ddof=0)),
        gap_mean=('gap', 'mean'),
    ).reset_index()
    table['failed'] = table['failed'].astype(int)
    return table[AGGREGATE_COLUMNS]


REPORT_COLUMNS = ['task', 'split', 'n', 'accuracy', 'acc_pos', 'acc_neg', 'balance', 'collapsed',
                  'tp', 'tn', 'fp', 'fn', 'ties', 'mean_active_rules',
                  'Phi_mean_feasible', 'Phi_mean_infeasible', 'Phi_separation', 'Phi_p_value',
                  'sum_phi_mean_feasible', 'sum_phi_mean_infeasible', 'sum_phi_separation']


def reports_frame(reports):
    """Flatten EvalReports into REPORT_COLUMNS for plotting tools."""
    rows = []
    for report in reports:
        phi = report.phi
        rows.append({
            'task': report.task, 'split': report.provenance.get('split'), 'n': report.n,
            'accuracy': report.accuracy, 'acc_pos': report.acc_pos, 'acc_neg': report.acc_neg,
            'balance': report.balance, 'collapsed': report.collapsed,
            'tp': report.tp, 'tn': report.tn, 'fp': report.fp, 'fn': report.fn, 'ties': report.ties,
            'mean_active_rules': report.mean_active_rules,
            'Phi_mean_feasible': phi.feasible.Phi_mean if phi.feasible else None,
            'Phi_mean_infeasible': phi.infeasible.Phi_mean if phi.infeasible else None,
            'Phi_separation': phi.Phi_separation, 'Phi_p_value': phi.Phi_p_value,
            'sum_phi_mean_feasible': phi.feasible.sum_phi_mean if phi.feasible else None,
            'sum_phi_mean_infeasible': phi.infeasible.sum_phi_mean if phi.infeasible else None,
            'sum_phi_separation': phi.sum_phi_separation,
        })
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def export_csv(frame, path):
    """Write a DataFrame as comma-separated values without the index."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        frame.to_csv(path, index=False, float_format='%.6f', lineterminator='\n')
    except OSError as e:
        raise DataIOError(f'cannot write {path}: {e}') from e
    logger.info(f'Wrote {len(frame)} rows to {path}')
