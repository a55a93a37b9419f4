import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal
from scipy import ndimage

from uck.errors import ConfigError, DataIOError, GenerationError
from uck.tasks import (CLAUSE, DEFAULT_SIZES, FEATURE_WIDTHS, GOAL, NEGATIVE, OBSTACLE, POSITIVE, START,
                       GraphInstance, TaskSpec,
                       decode_planning, decode_reachability, decode_sat, derive_seed, encode_planning,
                       encode_reachability, encode_sat, generate_dataset, generate_sample, oracle_grid_feasible,
                       oracle_label, oracle_reachable, oracle_sat, read_dataset, required_label, write_dataset)


# ==================== ORACLES ====================

def brute_force_sat(formula, n_vars):
    for values in itertools.product([False, True], repeat=n_vars):
        if all(any(values[abs(l) - 1] == (l > 0) for l in clause) for clause in formula):
            return True
    return False


def closure_reachable(edges, n, src, tgt):
    reach = np.eye(n, dtype=bool)
    for i, j in edges:
        reach[i, j] = True
    for k in range(n):
        reach |= reach[:, [k]] & reach[[k], :]
    return bool(reach[src, tgt])


def flood_fill_feasible(grid, start, goal):
    labels, _ = ndimage.label(~grid)
    return labels[start] == labels[goal]


def random_formula(rng, n_vars):
    n_clauses = int(rng.integers(0, 8))
    formula = []
    for _ in range(n_clauses):
        width = int(rng.integers(0, 4))
        formula.append([int(rng.integers(1, n_vars + 1)) * int(rng.choice([-1, 1])) for _ in range(width)])
    return formula


class TestSatOracle:

    def test_against_truth_table(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n_vars = int(rng.integers(1, 5))
            formula = random_formula(rng, n_vars)
            assert oracle_sat(formula, n_vars) == brute_force_sat(formula, n_vars), formula

    @pytest.mark.parametrize('formula, expected', [
        ([], True),
        ([[]], False),
        ([[1], [-1]], False),
        ([[1, -1]], True),
        ([[1, 2], [-1, 2], [1, -2], [-1, -2]], False),
        ([[1, 2], [-1, 2], [-2, 3]], True),
    ])
    def test_examples(self, formula, expected):
        assert oracle_sat(formula) is expected

    @pytest.mark.parametrize('formula', [[[0]], [[1.5]], [[True]]])
    def test_malformed_literal(self, formula):
        with pytest.raises(ValueError):
            oracle_sat(formula)

    def test_literal_beyond_variable_count(self):
        with pytest.raises(ValueError):
            oracle_sat([[3]], n_vars=2)


class TestReachabilityOracle:

    def test_against_transitive_closure(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            n = int(rng.integers(1, 7))
            edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(rng.random((n, n)) < 0.3))]
            src, tgt = int(rng.integers(n)), int(rng.integers(n))
            assert oracle_reachable(edges, n, src, tgt) == closure_reachable(edges, n, src, tgt)

    def test_direction_matters(self):
        assert oracle_reachable([(0, 1)], 2, 0, 1)
        assert not oracle_reachable([(0, 1)], 2, 1, 0)

    def test_self_is_reachable(self):
        assert oracle_reachable([], 3, 2, 2)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            oracle_reachable([], 3, 0, 3)
        with pytest.raises(ValueError):
            oracle_reachable([(0, 5)], 3, 0, 1)


GRIDS = [
    ('..\n..', (0, 0), (1, 1), True),
    ('.#\n#.', (0, 0), (1, 1), False),
    ('.#.\n.#.\n...', (0, 0), (0, 2), True),
    ('.#.\n.#.\n.#.', (0, 0), (0, 2), False),
    ('...\n.#.\n...', (0, 0), (2, 2), True),
    ('.#.\n#..\n...', (0, 0), (2, 2), False),
    ('...\n###\n...', (0, 1), (2, 1), False),
    ('...\n##.\n...', (0, 0), (2, 0), True),
    ('.', (0, 0), (0, 0), True),
    ('..#\n.#.\n#..', (0, 0), (2, 2), False),
    ('....\n.##.\n.#..\n.#.#', (0, 0), (3, 2), True),
    ('....\n###.\n...#\n.#..', (0, 0), (3, 3), False),
    ('.#..\n.#.#\n...#\n##..', (0, 0), (3, 3), True),
    ('.#..\n.#.#\n.#.#\n##..', (0, 0), (3, 3), False),
    ('#...\n..#.\n.#..\n....', (1, 0), (0, 3), True),
    ('#...\n.##.\n#...\n....', (1, 0), (0, 3), False),
    ('.....\n####.\n.....\n.####\n.....', (0, 0), (4, 4), True),
    ('.....\n#####\n.....\n.####\n.....', (0, 0), (4, 4), False),
    ('..#..\n..#..\n.....\n..#..\n..#..', (0, 0), (4, 4), True),
    ('..#..\n..#..\n###..\n..#..\n..#..', (0, 0), (4, 0), False),
]


def parse_grid(text):
    return np.array([[c == '#' for c in row] for row in text.split('\n')], dtype=bool)


class TestGridOracle:

    @pytest.mark.parametrize('text, start, goal, expected', GRIDS)
    def test_hand_built(self, text, start, goal, expected):
        assert oracle_grid_feasible(parse_grid(text), start, goal) is expected

    def test_diagonal_moves_not_allowed(self):
        assert not oracle_grid_feasible(parse_grid('.#\n#.'), (0, 0), (1, 1))

    def test_obstacle_endpoint_rejected(self):
        with pytest.raises(ValueError):
            oracle_grid_feasible(parse_grid('#.\n..'), (0, 0), (1, 1))

    def test_outside_grid_rejected(self):
        with pytest.raises(ValueError):
            oracle_grid_feasible(parse_grid('..\n..'), (0, 0), (2, 0))

    @settings(max_examples=300, deadline=None)
    @given(st.integers(min_value=2, max_value=9), st.integers(min_value=0, max_value=2 ** 20))
    def test_matches_flood_fill(self, side, seed):
        rng = np.random.default_rng(seed)
        grid = rng.random((side, side)) < 0.35
        free = np.argwhere(~grid)
        if len(free) < 2:
            return
        start, goal = (tuple(int(v) for v in free[i]) for i in rng.choice(len(free), 2, replace=False))
        assert oracle_grid_feasible(grid, start, goal) == flood_fill_feasible(grid, start, goal)


# ==================== ENCODINGS ====================

class TestEncodings:

    def test_sat_node_layout(self, sat_instance):
        assert sat_instance.n_nodes == 2 * 3 + 3
        assert sat_instance.roles[:6] == (POSITIVE, NEGATIVE) * 3
        assert sat_instance.roles[6:] == (CLAUSE,) * 3
        # clause [-1, 2] is node 7; -1 is node 1, 2 is node 2
        assert {(1, 7), (7, 1), (2, 7), (7, 2)} <= set(sat_instance.edges)
        assert (0, 1) in sat_instance.edges and (1, 0) in sat_instance.edges
        assert sat_instance.label == 1
        assert sat_instance.features().shape == (9, FEATURE_WIDTHS['sat'])

    def test_sat_decode(self, sat_instance):
        formula, n_vars = decode_sat(sat_instance)
        assert n_vars == 3
        assert formula == [[1, 2], [-1, 2], [-2, 3]]

    def test_planning_edges_symmetric(self, planning_instance):
        edges = set(planning_instance.edges)
        assert all((j, i) in edges for i, j in edges)
        assert_array_equal(planning_instance.adjacency(), planning_instance.adjacency().T)

    def test_planning_obstacles_isolated(self, planning_instance):
        obstacles = {i for i, r in enumerate(planning_instance.roles) if r & OBSTACLE}
        assert obstacles == {2, 3, 5, 6}
        assert not any(i in obstacles or j in obstacles for i, j in planning_instance.edges)

    def test_planning_roles(self, planning_instance):
        assert planning_instance.roles[0] == START
        assert planning_instance.roles[8] == GOAL
        assert (planning_instance.src, planning_instance.tgt) == (0, 8)
        assert planning_instance.label == 1

    def test_planning_start_equals_goal(self):
        inst = encode_planning(parse_grid('..\n..'), (1, 1), (1, 1))
        assert inst.roles[3] == START | GOAL
        assert inst.label == 1
        assert inst.features()[3].tolist() == [0.0, 0.0, 1.0, 1.0]

    def test_planning_decode(self, planning_instance):
        grid, start, goal = decode_planning(planning_instance)
        assert_array_equal(grid, [[False, False, True], [True, False, True], [True, False, False]])
        assert (start, goal) == ((0, 0), (2, 2))

    def test_planning_requires_square(self):
        with pytest.raises(ValueError):
            encode_planning(np.zeros((2, 3), dtype=bool), (0, 0), (1, 1))

    def test_reachability_roles(self, reach_instance):
        assert reach_instance.features().tolist()[0] == [0.0, 1.0, 0.0]
        assert reach_instance.features().tolist()[3] == [0.0, 0.0, 1.0]
        assert decode_reachability(reach_instance) == ([(0, 1), (1, 2), (2, 3)], 5, 0, 3)

    @pytest.mark.parametrize('fixture', ['reach_instance', 'planning_instance', 'sat_instance'])
    def test_label_survives_permutation(self, request, fixture):
        inst = request.getfixturevalue(fixture)
        rng = np.random.default_rng(8)
        for _ in range(10):
            permuted = inst.permuted(rng.permutation(inst.n_nodes))
            assert oracle_label(permuted) == inst.label
            assert sorted(permuted.roles) == sorted(inst.roles)

    @pytest.mark.parametrize('task', sorted(DEFAULT_SIZES))
    def test_generated_labels_match_oracle(self, task):
        size = DEFAULT_SIZES[task][0]
        dataset = generate_dataset(TaskSpec(task, size, 1000, seed=3))
        assert len(dataset) == 1000
        mismatched = [i for i, inst in enumerate(dataset) if oracle_label(inst) != inst.label]
        assert mismatched == []

    def test_adjacency_is_rebuilt_per_call(self, reach_instance):
        first = reach_instance.adjacency()
        first[0, 0] = 7.0
        assert reach_instance.adjacency()[0, 0] == 0.0
        assert reach_instance.adjacency()[0, 1] == 1.0

    def test_record_round_trip(self, reach_instance):
        assert GraphInstance.from_dict(reach_instance.to_dict()) == reach_instance

    def test_invalid_record(self, reach_instance):
        record = reach_instance.to_dict()
        record['edges'].append([0, 9])
        record['label'] = 2
        with pytest.raises(DataIOError):
            GraphInstance.from_dict(record)


# ==================== GENERATION ====================

class TestGeneration:

    def test_derive_seed_distinct(self):
        seeds = {derive_seed(0, i) for i in range(1000)}
        assert len(seeds) == 1000
        assert derive_seed(0, 0) != derive_seed(1, 0)

    @pytest.mark.parametrize('balance, positives', [(0.5, 20), (0.25, 10), (1.0, 40), (0.0, 0)])
    def test_balance_controller(self, balance, positives):
        spec = TaskSpec('reachability', 6, 40, balance=balance)
        assert sum(required_label(spec, i) for i in range(40)) == positives

    def test_exact_class_balance(self):
        instances = generate_dataset(TaskSpec('reachability', 8, 30, seed=5))
        labels = [inst.label for inst in instances]
        assert sum(labels) == 15
        assert labels == [required_label(TaskSpec('reachability', 8, 30), i) for i in range(30)]

    def test_deterministic(self):
        spec = TaskSpec('sat', 5, 12, seed=11)
        a = [inst.to_dict() for inst in generate_dataset(spec)]
        b = [inst.to_dict() for inst in generate_dataset(spec)]
        assert a == b

    def test_seed_changes_data(self):
        a = generate_dataset(TaskSpec('planning', 5, 6, seed=0))
        b = generate_dataset(TaskSpec('planning', 5, 6, seed=1))
        assert [i.to_dict() for i in a] != [i.to_dict() for i in b]

    def test_sample_independent_of_order(self):
        spec = TaskSpec('planning', 5, 10, seed=2)
        dataset = generate_dataset(spec)
        assert generate_sample(spec, 7).to_dict() == dataset[7].to_dict()

    def test_workers_give_same_result(self):
        spec = TaskSpec('reachability', 8, 16, seed=4)
        serial = [i.to_dict() for i in generate_dataset(spec, workers=1)]
        parallel = [i.to_dict() for i in generate_dataset(spec, workers=2)]
        assert serial == parallel

    def test_sizes_respected(self):
        for inst in generate_dataset(TaskSpec('planning', 6, 4)):
            assert inst.n_nodes == 36
        for inst in generate_dataset(TaskSpec('sat', 5, 4)):
            assert sum(1 for r in inst.roles if r & POSITIVE) == 5

    def test_impossible_balance(self):
        spec = TaskSpec('sat', 1, 20, balance=1.0, max_attempts=1)
        with pytest.raises(GenerationError):
            generate_dataset(spec)

    def test_spec_validation_lists_every_error(self):
        with pytest.raises(ConfigError) as excinfo:
            TaskSpec('maze', 0, -1, balance=2.0).validate()
        assert len(excinfo.value.errors) == 4

    def test_minimum_size(self):
        with pytest.raises(ConfigError):
            TaskSpec('planning', 1, 10).validate()


class TestDatasetFiles:

    def test_round_trip(self, tmp_path):
        spec = TaskSpec('sat', 4, 6, seed=1)
        instances = generate_dataset(spec)
        path = tmp_path / 'sat.jsonl'
        write_dataset(path, spec, instances)
        read_spec, read_instances = read_dataset(path)
        assert read_spec == spec
        assert [i.to_dict() for i in read_instances] == [i.to_dict() for i in instances]

    def test_same_spec_same_bytes(self, tmp_path):
        spec = TaskSpec('planning', 4, 5, seed=9)
        write_dataset(tmp_path / 'a.jsonl', spec, generate_dataset(spec))
        write_dataset(tmp_path / 'b.jsonl', spec, generate_dataset(spec))
        assert (tmp_path / 'a.jsonl').read_bytes() == (tmp_path / 'b.jsonl').read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            read_dataset(tmp_path / 'absent.jsonl')

    def test_wrong_format(self, tmp_path):
        path = tmp_path / 'bad.jsonl'
        path.write_text('{"format": "other", "version": 1}\n')
        with pytest.raises(DataIOError):
            read_dataset(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / 'bad.jsonl'
        path.write_text('not json\n')
        with pytest.raises(DataIOError):
            read_dataset(path)
