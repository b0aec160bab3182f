import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dietcl.errors import InputError, ParseError, SchemaError
from dietcl.streams import (Split, Task, TaskStream, load_csv_dataset, make_gaussian_stream, split_dataset,
                            train_test_split, write_csv_dataset)


def pairwise_disjoint(stream):
    return all(not (a.classes & b.classes) for a, b in itertools.combinations(stream.tasks, 2))


def test_five_by_two_stream():
    s = make_gaussian_stream(5, 2, 10, 4, 3, seed=1)
    assert len(s) == 5 and s.total_classes == 10 and s.feature_dim == 3
    assert pairwise_disjoint(s)
    assert [t.sorted_classes for t in s] == [[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]]
    assert [t.index for t in s] == [1, 2, 3, 4, 5]
    ids = np.concatenate([t.train.ids for t in s])
    assert len(np.unique(ids)) == len(ids)


def test_zero_noise_samples_sit_on_their_means():
    s = make_gaussian_stream(2, 2, 5, 3, 4, class_separation=2.5, noise_sigma=0.0, seed=3)
    for task in s:
        for split in (task.train, task.test):
            for c in task.classes:
                rows = split.x[split.y == c]
                assert np.array_equal(rows, np.repeat(rows[:1], len(rows), axis=0))
                assert np.linalg.norm(rows[0]) == pytest.approx(2.5)


def test_means_are_spread_over_the_sphere():
    # 2000 classes in 3-D: the mean direction of uniform points is near the origin
    s = make_gaussian_stream(1000, 2, 1, 1, 3, class_separation=1.0, noise_sigma=0.0, seed=0)
    means = np.vstack([t.train.x for t in s])
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), 1.0, atol=1e-12)
    assert np.linalg.norm(means.mean(axis=0)) < 4 / np.sqrt(len(means))


def test_same_seed_is_bit_identical():
    a = make_gaussian_stream(3, 2, 7, 3, 5, seed=9)
    b = make_gaussian_stream(3, 2, 7, 3, 5, seed=9)
    c = make_gaussian_stream(3, 2, 7, 3, 5, seed=10)
    assert a.to_bytes() == b.to_bytes() and a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_generator_preconditions():
    with pytest.raises(InputError):
        make_gaussian_stream(0, 2, 5, 5, 3)
    with pytest.raises(InputError):
        make_gaussian_stream(2, 2, 5, 5, 1)


def _labelled(classes, per_class, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(classes, per_class)
    return Split(rng.normal(size=(len(y), dim)), y, np.arange(len(y)))


def test_split_10_classes():
    data = _labelled(list(range(10)), 3)
    assert len(split_dataset(data, 2)) == 5
    single = split_dataset(data, 10)
    assert len(single) == 1 and single[0].classes == frozenset(range(10))
    with pytest.raises(InputError):
        split_dataset(data, 3)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31 - 1),
       st.booleans())
def test_disjointness_fuzz(num_tasks, per_task, per_class, seed, use_splitter):
    if use_splitter:
        rng = np.random.default_rng(seed)
        labels = rng.choice(1000, size=num_tasks * per_task, replace=False)
        stream = split_dataset(_labelled(labels, per_class, seed=seed), per_task, class_order_seed=seed)
    else:
        stream = make_gaussian_stream(num_tasks, per_task, per_class, 1, 2, seed=seed)
    assert len(stream) == num_tasks
    assert pairwise_disjoint(stream)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 10_000))
def test_splitter_partitions_train_set(num_tasks, per_task, seed):
    rng = np.random.default_rng(seed)
    classes = rng.choice(50, size=num_tasks * per_task, replace=False)
    y = rng.choice(classes, size=40)
    y[: len(classes)] = classes  # every class present
    data = Split(rng.normal(size=(40, 2)), y, rng.permutation(1000)[:40])
    stream = split_dataset(data, per_task, class_order_seed=seed)
    ids = np.concatenate([t.train.ids for t in stream])
    assert sorted(ids.tolist()) == sorted(data.ids.tolist())
    by_id = {int(i): (tuple(x), int(c)) for i, x, c in zip(data.ids, data.x, data.y)}
    for t in stream:
        for i, x, c in zip(t.train.ids, t.train.x, t.train.y):
            assert by_id[int(i)] == (tuple(x), int(c))


def test_splitter_keeps_test_membership():
    train, test = _labelled([0, 1, 2, 3], 4), _labelled([0, 1, 2, 3], 2, seed=1)
    stream = split_dataset(train, 2, class_order_seed=5, test=test)
    assert sum(len(t.test) for t in stream) == len(test)
    for t in stream:
        assert set(t.test.y.tolist()) <= t.classes


def test_task_and_stream_invariants():
    s = _labelled([0, 1], 2)
    with pytest.raises(InputError):
        Task(1, Split.empty(3), s, frozenset({0, 1}))
    with pytest.raises(InputError):
        Task(1, s, s, frozenset({0}))
    t1 = Task(1, s, s, frozenset({0, 1}))
    with pytest.raises(InputError):
        TaskStream((t1, Task(2, s, s, frozenset({0, 1}))), 2, 3)
    with pytest.raises(InputError):
        Split(np.zeros((2, 2)), [0, 0], [1, 1])
    with pytest.raises(InputError):
        Split(np.array([[0.0, np.nan]]), [0], [0])


def test_split_arrays_are_read_only():
    s = _labelled([0], 3)
    with pytest.raises(ValueError):
        s.x[0, 0] = 1.0


def test_train_test_split_is_per_class_and_seeded():
    data = _labelled([0, 1, 2], 10)
    tr, te = train_test_split(data, 0.2, seed=4)
    assert len(te) == 6 and len(tr) == 24
    assert sorted(np.concatenate([tr.ids, te.ids]).tolist()) == list(range(30))
    assert np.array_equal(train_test_split(data, 0.2, seed=4)[1].ids, te.ids)


# ---------------------------------------------------------------- csv

def test_csv_three_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,d=2\n0,1.0,2.0\n1,3.0,4.0\n1,5.0,6.0\n")
    s = load_csv_dataset(p)
    assert s.ids.tolist() == [0, 1, 2] and s.y.tolist() == [0, 1, 1]
    np.testing.assert_array_equal(s.x, [[1, 2], [3, 4], [5, 6]])


def test_csv_short_row_is_schema_error_with_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,d=3\n0,1,2,3\n1,1,2\n")
    with pytest.raises(SchemaError) as err:
        load_csv_dataset(p)
    assert err.value.line == 3 and ":3:" in str(err.value)


def test_csv_malformed_row_is_parse_error_with_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,d=2\n0,1,2\n1,x,2\n")
    with pytest.raises(ParseError) as err:
        load_csv_dataset(p)
    assert err.value.line == 3 and not isinstance(err.value, SchemaError)
    p.write_text("label,dim\n0,1\n")
    with pytest.raises(ParseError) as err:
        load_csv_dataset(p)
    assert err.value.line == 1


def test_csv_scaling_guards_constant_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,d=2\n0,5.0,0.0\n1,5.0,2.0\n0,5.0,4.0\n")
    s = load_csv_dataset(p, scale=True)
    np.testing.assert_array_equal(s.x, [[0, 0], [0, 0.5], [0, 1]])


def test_csv_round_trip(tmp_path):
    data = _labelled([3, 7], 4, dim=5)
    p = tmp_path / "d.csv"
    write_csv_dataset(data, p)
    back = load_csv_dataset(p)
    assert np.array_equal(back.x, data.x) and np.array_equal(back.y, data.y)
