import numpy as np
import pytest

from metalabel import MetaTrainingSet, Sample, Task, TaskSpec


def make_task(task_id, groups, n_support):
    """Build a task from {y_local: (rows, y_true)} with the first n_support rows
    of each group as support."""
    support, query = [], []
    for y_local, (rows, y_true) in groups.items():
        rows = np.asarray(rows, dtype=float)
        for i, row in enumerate(rows):
            sample = Sample(x=row, y_local=y_local, y_true=y_true)
            (support if i < n_support else query).append(sample)
    return Task(id=task_id, support=support, query=query)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_meta():
    """Two 2-way tasks in 3 dimensions with ground truth."""
    rng = np.random.default_rng(5)
    tasks = []
    for t in range(2):
        groups = {}
        for y_local, y_true in enumerate((2 * t, 2 * t + 1)):
            center = np.zeros(3)
            center[y_local] = 4.0 * (t + 1)
            groups[y_local] = (center + rng.standard_normal((5, 3)), y_true)
        tasks.append(make_task(t, groups, n_support=2))
    return MetaTrainingSet(tasks=tasks, spec=TaskSpec(k=2, n_support=2, n_query=3),
                           replacement=True)
