import numpy as np

from transduct.types import EmbeddingMatrix, Hyperparams, SupportSet, TaskSpec


def unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def random_task(
    rng,
    n_query=20,
    n_classes=4,
    dim=8,
    shots_per_class=0,
    temperature=20.0,
    **hyper_kwargs,
) -> TaskSpec:
    """Unstructured random task: handy when only invariants matter."""
    support = None
    if shots_per_class:
        labels = np.repeat(np.arange(n_classes), shots_per_class)
        support = SupportSet(
            EmbeddingMatrix(unit_rows(rng, labels.size, dim)), labels
        )
    return TaskSpec(
        query=EmbeddingMatrix(unit_rows(rng, n_query, dim)),
        text=EmbeddingMatrix(unit_rows(rng, n_classes, dim)),
        support=support,
        temperature=temperature,
        hyper=Hyperparams(**hyper_kwargs),
    )
