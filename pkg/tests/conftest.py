import math

import numpy as np
import pytest

from minnorm.fmn import fmn_attack
from minnorm.model import attack_loss
from minnorm.projections import lp_norm


def assert_attack_invariants(model, sample, config, **kwargs):
    """Run the attack and assert the per-run invariants.

    Checks the trace (strictly increasing queries, non-increasing best
    norm), box feasibility of every evaluated iterate, that a returned
    best perturbation is re-verified adversarial, and that a repeated run
    is bit-identical. Returns the attack result.
    """
    iterates = []
    result = fmn_attack(
        model, sample, config, on_iterate=lambda k, x, rec: iterates.append(x.copy()), **kwargs
    )
    recs = result.trace.records
    queries = [r.query for r in recs]
    assert queries == sorted(set(queries))
    bests = [r.best_norm for r in recs]
    assert all(b2 <= b1 for b1, b2 in zip(bests, bests[1:]))
    for x in iterates:
        assert np.all(x >= 0.0) and np.all(x <= 1.0)
    if result.found:
        x_star = sample.x + result.best_delta
        assert np.all(x_star >= 0.0) and np.all(x_star <= 1.0)
        assert attack_loss(model, x_star, config.goal, sample.y) < 0.0
        assert result.best_norm == lp_norm(result.best_delta, config.p)
    else:
        assert result.best_delta is None and math.isinf(result.best_norm)
    again = fmn_attack(model, sample, config, **kwargs)
    assert len(again.trace.records) == len(recs)
    for a, b in zip(again.trace.records, recs):
        assert (a.query, a.best_norm, a.loss, a.eps) == (b.query, b.best_norm, b.loss, b.eps)
    if result.found:
        np.testing.assert_array_equal(again.best_delta, result.best_delta)
    return result


@pytest.fixture()
def check_run():
    return assert_attack_invariants
