"""
Benchmark tasks: exact oracles, graph encodings and seeded dataset generation.

Three binary constraint-reasoning tasks are supported:
- planning: is there a 4-connected obstacle-free path from start to goal?
- sat: is a CNF formula satisfiable?
- reachability: is tgt reachable from src along directed edges?

Every sample is drawn from its own generator, seeded by a splitmix64 sequence
derived from the TaskSpec seed, so datasets are a pure function of the spec
and samples can be produced in any order or in parallel.
"""

import dataclasses
import json
import logging
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from uck.errors import ConfigError, DataIOError, GenerationError

logger = logging.getLogger(__name__)

TASKS = ('planning', 'sat', 'reachability')

ROLE_NAMES = {
    'planning': ('free', 'obstacle', 'start', 'goal'),
    'sat': ('positive', 'negative', 'clause'),
    'reachability': ('plain', 'source', 'target'),
}
FEATURE_WIDTHS = {task: len(names) for task, names in ROLE_NAMES.items()}

# (training size, generalisation size) per task: grid side, variables, nodes.
DEFAULT_SIZES = {'planning': (8, 16), 'sat': (10, 20), 'reachability': (12, 30)}

DATASET_FORMAT = 'uck-dataset'
DATASET_VERSION = 1

FREE, OBSTACLE, START, GOAL = (1 << i for i in range(4))
POSITIVE, NEGATIVE, CLAUSE = (1 << i for i in range(3))
PLAIN, SOURCE, TARGET = (1 << i for i in range(3))

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


# ==================== SEEDS ====================

def splitmix64(x):
    """Finalising mix of the splitmix64 generator."""
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed, index):
    """Seed of sample `index`: splitmix64(seed + (index + 1) * golden-ratio increment)."""
    return splitmix64((seed + (index + 1) * _GOLDEN) & _MASK64)


# ==================== RECORDS ====================

@dataclass
class GraphInstance:
    """
    One labelled benchmark example.

    roles holds one bitmask per node over the task's role names; features()
    expands it into the one-hot node feature matrix.
    """

    task: str
    n_nodes: int
    edges: Tuple[Tuple[int, int], ...]
    roles: Tuple[int, ...]
    label: int
    src: Optional[int] = None
    tgt: Optional[int] = None
    seed: Optional[int] = None

    def features(self):
        width = FEATURE_WIDTHS[self.task]
        roles = np.asarray(self.roles, dtype=np.int64)
        return ((roles[:, None] >> np.arange(width)) & 1).astype(np.float64)

    def adjacency(self):
        """Fresh dense matrix with A[i, j] = 1 for every edge (i, j)."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            a[i, j] = 1.0
        return a

    def permuted(self, perm):
        """Relabel nodes so that old node i becomes perm[i]."""
        perm = [int(p) for p in perm]
        roles = [0] * self.n_nodes
        for old, new in enumerate(perm):
            roles[new] = self.roles[old]
        edges = tuple(sorted((perm[i], perm[j]) for i, j in self.edges))
        return dataclasses.replace(
            self, edges=edges, roles=tuple(roles),
            src=None if self.src is None else perm[self.src],
            tgt=None if self.tgt is None else perm[self.tgt])

    def to_dict(self):
        return {
            'task': self.task,
            'seed': self.seed,
            'n_nodes': self.n_nodes,
            'edges': [list(e) for e in self.edges],
            'roles': list(self.roles),
            'src': self.src,
            'tgt': self.tgt,
            'label': self.label,
        }

    @classmethod
    def from_dict(cls, data):
        from uck.utils import validate_instance
        errors = validate_instance(data)
        if errors:
            raise DataIOError('invalid instance record: ' + '; '.join(errors))
        return cls(
            task=data['task'],
            n_nodes=int(data['n_nodes']),
            edges=tuple((int(i), int(j)) for i, j in data['edges']),
            roles=tuple(int(r) for r in data['roles']),
            label=int(data['label']),
            src=data.get('src'),
            tgt=data.get('tgt'),
            seed=data.get('seed'),
        )


@dataclass
class TaskSpec:
    """What to generate: task, size parameter, sample count, positive fraction, seed."""

    task: str
    size: int
    count: int
    balance: float = 0.5
    seed: int = 0
    max_attempts: int = 10000

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f'unknown task setting {name!r}' for name in unknown])
        return cls(**data)

    def validate(self):
        from uck.utils import validate_task_spec
        errors = validate_task_spec(self.to_dict())
        if errors:
            raise ConfigError(errors)
        return self


# ==================== ORACLES ====================

def oracle_grid_feasible(grid, start, goal):
    """
    4-connected BFS over free cells.

    Args:
        grid: Boolean matrix, True marks an obstacle.
        start: (row, col) of the start cell.
        goal: (row, col) of the goal cell.

    Raises:
        ValueError: If start or goal lies on an obstacle.
    """
    grid = np.asarray(grid, dtype=bool)
    rows, cols = grid.shape
    start, goal = tuple(start), tuple(goal)
    for name, cell in (('start', start), ('goal', goal)):
        if not (0 <= cell[0] < rows and 0 <= cell[1] < cols):
            raise ValueError(f'{name} {cell} lies outside the grid')
        if grid[cell]:
            raise ValueError(f'{name} {cell} lies on an obstacle')
    if start == goal:
        return True
    queue = deque([start])
    visited = {start}
    while queue:
        r, c = queue.popleft()
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < rows and 0 <= nc < cols and not grid[nr, nc] and (nr, nc) not in visited:
                if (nr, nc) == goal:
                    return True
                visited.add((nr, nc))
                queue.append((nr, nc))
    return False


def oracle_reachable(edges, n, src, tgt):
    """BFS along directed out-edges from src; True iff tgt is reached."""
    for name, index in (('src', src), ('tgt', tgt)):
        if not 0 <= index < n:
            raise ValueError(f'{name}={index} out of range for {n} nodes')
    successors = [[] for _ in range(n)]
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f'edge ({i}, {j}) references a missing node')
        successors[i].append(j)
    if src == tgt:
        return True
    queue = deque([src])
    visited = {src}
    while queue:
        node = queue.popleft()
        for nxt in successors[node]:
            if nxt == tgt:
                return True
            if nxt not in visited:
                visited.add(nxt)
                queue.append(nxt)
    return False


def _check_formula(formula, n_vars=None):
    for clause in formula:
        for lit in clause:
            if isinstance(lit, bool) or not isinstance(lit, (int, np.integer)) or lit == 0:
                raise ValueError(f'malformed literal {lit!r}')
            if n_vars is not None and abs(lit) > n_vars:
                raise ValueError(f'literal {lit} exceeds variable count {n_vars}')


def _assign(clauses, literal):
    reduced = []
    for clause in clauses:
        if literal in clause:
            continue
        if -literal in clause:
            clause = clause - {-literal}
        reduced.append(clause)
    return reduced


def _dpll(clauses):
    while True:
        if any(not clause for clause in clauses):
            return False
        if not clauses:
            return True
        unit = next((next(iter(c)) for c in clauses if len(c) == 1), None)
        if unit is not None:
            clauses = _assign(clauses, unit)
            continue
        literals = {lit for clause in clauses for lit in clause}
        pure = next((lit for lit in sorted(literals) if -lit not in literals), None)
        if pure is not None:
            clauses = _assign(clauses, pure)
            continue
        break
    var = min(abs(lit) for clause in clauses for lit in clause)
    return _dpll(_assign(clauses, var)) or _dpll(_assign(clauses, -var))


def oracle_sat(formula, n_vars=None):
    """
    DPLL with unit propagation and pure-literal elimination.

    Args:
        formula: List of clauses, each a list of non-zero signed variable indices.
        n_vars: Optional variable count used to validate literal indices.

    Returns:
        bool: True iff the formula is satisfiable (the empty formula is; a
        formula containing an empty clause is not).
    """
    _check_formula(formula, n_vars)
    return _dpll([frozenset(int(lit) for lit in clause) for clause in formula])


# ==================== ENCODERS ====================

def encode_planning(grid, start, goal, label=None, seed=None):
    """
    One node per cell (row-major); undirected 4-adjacency edges between free
    cells, stored as both directed pairs; obstacles stay isolated.
    """
    grid = np.asarray(grid, dtype=bool)
    rows, cols = grid.shape
    if rows != cols:
        raise ValueError(f'planning grids must be square, got {rows}x{cols}')
    start, goal = tuple(int(v) for v in start), tuple(int(v) for v in goal)
    if label is None:
        label = int(oracle_grid_feasible(grid, start, goal))
    roles = np.where(grid, OBSTACLE, FREE).reshape(-1)
    s, g = start[0] * cols + start[1], goal[0] * cols + goal[1]
    roles[s] = START
    roles[g] = START | GOAL if s == g else GOAL
    edges = []
    for r in range(rows):
        for c in range(cols):
            if grid[r, c]:
                continue
            a = r * cols + c
            if c + 1 < cols and not grid[r, c + 1]:
                edges += [(a, a + 1), (a + 1, a)]
            if r + 1 < rows and not grid[r + 1, c]:
                edges += [(a, a + cols), (a + cols, a)]
    return GraphInstance(task='planning', n_nodes=rows * cols, edges=tuple(sorted(edges)),
                         roles=tuple(int(x) for x in roles), label=int(label), src=s, tgt=g, seed=seed)


def encode_sat(formula, n_vars=None, label=None, seed=None):
    """
    Literal-node encoding: nodes 2(x-1) and 2(x-1)+1 are the positive and
    negative literals of variable x, followed by one node per clause; each
    occurrence links literal and clause, and each literal links to its negation.
    """
    if n_vars is None:
        n_vars = max((abs(lit) for clause in formula for lit in clause), default=0)
    _check_formula(formula, n_vars)
    if label is None:
        label = int(oracle_sat(formula, n_vars))

    def node(lit):
        return 2 * (abs(lit) - 1) + (0 if lit > 0 else 1)

    roles = [POSITIVE, NEGATIVE] * n_vars + [CLAUSE] * len(formula)
    edges = set()
    for x in range(n_vars):
        edges |= {(2 * x, 2 * x + 1), (2 * x + 1, 2 * x)}
    for j, clause in enumerate(formula):
        c = 2 * n_vars + j
        for lit in set(clause):
            edges |= {(node(lit), c), (c, node(lit))}
    return GraphInstance(task='sat', n_nodes=len(roles), edges=tuple(sorted(edges)),
                         roles=tuple(roles), label=int(label), seed=seed)


def encode_reachability(edges, n, src, tgt, label=None, seed=None):
    """Nodes and directed edges as given; source/target marked in the roles."""
    if label is None:
        label = int(oracle_reachable(edges, n, src, tgt))
    else:
        oracle_reachable([], n, src, tgt)
    roles = [PLAIN] * n
    roles[src] = SOURCE
    roles[tgt] = SOURCE | TARGET if src == tgt else TARGET
    unique = sorted({(int(i), int(j)) for i, j in edges})
    for i, j in unique:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f'edge ({i}, {j}) references a missing node')
    return GraphInstance(task='reachability', n_nodes=n, edges=tuple(unique), roles=tuple(roles),
                         label=int(label), src=int(src), tgt=int(tgt), seed=seed)


# ==================== DECODERS ====================

def decode_planning(instance):
    """Recover (obstacle grid, start cell, goal cell) from a row-major encoding."""
    side = int(round(np.sqrt(instance.n_nodes)))
    if side * side != instance.n_nodes:
        raise ValueError(f'{instance.n_nodes} nodes do not form a square grid')
    grid = np.array([bool(r & OBSTACLE) for r in instance.roles]).reshape(side, side)
    return grid, divmod(instance.src, side), divmod(instance.tgt, side)


def decode_sat(instance):
    """Recover (formula, n_vars) using roles and negation edges only."""
    neighbours = [[] for _ in range(instance.n_nodes)]
    for i, j in instance.edges:
        neighbours[i].append(j)
    literal = {}
    positives = [i for i, r in enumerate(instance.roles) if r & POSITIVE]
    for var, node in enumerate(positives, start=1):
        literal[node] = var
        for other in neighbours[node]:
            if instance.roles[other] & NEGATIVE:
                literal[other] = -var
    formula = []
    for i, r in enumerate(instance.roles):
        if r & CLAUSE:
            formula.append(sorted((literal[j] for j in set(neighbours[i]) if j in literal), key=abs))
    return formula, len(positives)


def decode_reachability(instance):
    return [tuple(e) for e in instance.edges], instance.n_nodes, instance.src, instance.tgt


def oracle_label(instance):
    """Recompute the label of an instance from its graph alone."""
    if instance.task == 'sat':
        formula, n_vars = decode_sat(instance)
        return int(oracle_sat(formula, n_vars))
    return int(oracle_reachable(instance.edges, instance.n_nodes, instance.src, instance.tgt))


# ==================== GENERATION ====================

def _sample_planning(rng, side):
    density = rng.uniform(0.20, 0.40)
    grid = rng.random((side, side)) < density
    free = np.flatnonzero(~grid)
    if free.size < 2:
        return None
    s, g = rng.choice(free, size=2, replace=False)
    start, goal = divmod(int(s), side), divmod(int(g), side)
    label = int(oracle_grid_feasible(grid, start, goal))
    return label, partial(encode_planning, grid, start, goal, label)


def _sample_sat(rng, n_vars):
    ratio = rng.uniform(3.8, 4.8)
    n_clauses = max(1, int(round(ratio * n_vars)))
    formula = []
    for _ in range(n_clauses):
        variables = rng.choice(n_vars, size=min(3, n_vars), replace=False) + 1
        signs = rng.integers(0, 2, size=variables.size) * 2 - 1
        formula.append([int(v * s) for v, s in zip(variables, signs)])
    label = int(oracle_sat(formula, n_vars))
    return label, partial(encode_sat, formula, n_vars, label)


def _sample_reachability(rng, n):
    p = rng.uniform(1.0, 2.0) / n
    draws = rng.random((n, n)) < p
    np.fill_diagonal(draws, False)
    edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(draws))]
    src, tgt = (int(v) for v in rng.choice(n, size=2, replace=False))
    label = int(oracle_reachable(edges, n, src, tgt))
    return label, partial(encode_reachability, edges, n, src, tgt, label)


_SAMPLERS = {'planning': _sample_planning, 'sat': _sample_sat, 'reachability': _sample_reachability}


def required_label(spec, index):
    """Balance controller: sample `index` must be positive iff floor((i+1)b) > floor(ib)."""
    return int(np.floor((index + 1) * spec.balance) > np.floor(index * spec.balance))


def generate_sample(spec, index):
    """
    Draw sample `index` of a dataset by rejection until it carries the label
    the balance controller requires.

    Raises:
        GenerationError: If max_attempts candidates all had the wrong label.
    """
    seed = derive_seed(spec.seed, index)
    rng = np.random.default_rng(seed)
    need = required_label(spec, index)
    sampler = _SAMPLERS[spec.task]
    for _ in range(spec.max_attempts):
        drawn = sampler(rng, spec.size)
        if drawn is not None and drawn[0] == need:
            return drawn[1](seed=seed)
    raise GenerationError(
        f'{spec.task} size {spec.size}: no {"positive" if need else "negative"} sample for index {index} '
        f'within {spec.max_attempts} attempts')


def generate_dataset(spec, workers=1):
    """
    Generate spec.count labelled instances, ordered by sample index.

    Args:
        spec: TaskSpec (validated here).
        workers: Process count; results are identical for any value.

    Returns:
        list[GraphInstance]
    """
    spec.validate()
    logger.info(f'Generating {spec.count} {spec.task} instances (size {spec.size}, seed {spec.seed}, workers {workers})')
    indices = range(spec.count)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            instances = list(pool.map(partial(generate_sample, spec), indices, chunksize=64))
    else:
        instances = [generate_sample(spec, i) for i in indices]
    positives = sum(inst.label for inst in instances)
    logger.info(f'Generated {len(instances)} instances, {positives} positive')
    return instances


# ==================== DATASET FILES ====================

def _dumps(record):
    return json.dumps(record, sort_keys=True, separators=(',', ':'))


def write_dataset(path, spec, instances):
    """One header line {format, version, spec} followed by one record per instance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {'format': DATASET_FORMAT, 'version': DATASET_VERSION, 'spec': spec.to_dict()}
    lines = [_dumps(header)] + [_dumps(inst.to_dict()) for inst in instances]
    try:
        path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    except OSError as e:
        raise DataIOError(f'cannot write dataset {path}: {e}') from e
    logger.info(f'Wrote {len(instances)} instances to {path}')


def read_dataset(path):
    """Read a dataset file; returns (TaskSpec, list[GraphInstance])."""
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as e:
        raise DataIOError(f'cannot read dataset {path}: {e}') from e
    if not lines:
        raise DataIOError(f'dataset {path} is empty')
    try:
        header = json.loads(lines[0])
        if header.get('format') != DATASET_FORMAT or header.get('version') != DATASET_VERSION:
            raise DataIOError(f'{path}: unsupported dataset format {header.get("format")} v{header.get("version")}')
        spec = TaskSpec.from_dict(header['spec'])
        instances = [GraphInstance.from_dict(json.loads(line)) for line in lines[1:] if line.strip()]
    except (json.JSONDecodeError, KeyError, TypeError, ConfigError) as e:
        raise DataIOError(f'{path}: malformed dataset ({e})') from e
    return spec, instances
