import inspect

import numpy as np
import pytest

from warpgraph.engine.adjoint import (
    ADJOINT_THRESHOLD,
    JACOBIAN_THRESHOLD,
    ComponentResult,
    finite_diff_check,
    run_grad_check,
)
from warpgraph.engine.adjoint.suite import (
    check_bilinear,
    check_energy_terms,
    check_solve_adjoint,
    check_unrolled,
)


def test_component_without_probes_never_passes():
    assert not ComponentResult("feature", 0.0, JACOBIAN_THRESHOLD, 0).passed
    result = ComponentResult("feature", 1e-8, JACOBIAN_THRESHOLD, 10)
    assert result.passed
    assert result.to_json() == {
        "name": "feature",
        "worst_rel_error": 1e-8,
        "threshold": JACOBIAN_THRESHOLD,
        "probes": 10,
        "passed": True,
    }


def test_bilinear_check_passes():
    result = check_bilinear(np.random.default_rng(0), 25)
    assert result.probes == 25
    assert result.passed, result.worst_rel_error


def test_solve_adjoint_check_passes():
    result = check_solve_adjoint(np.random.default_rng(0), systems=3)
    assert result.threshold == ADJOINT_THRESHOLD
    assert result.passed, result.worst_rel_error


def test_unrolled_check_passes():
    results = check_unrolled(np.random.default_rng(0), steps=(1, 3), systems=1)
    assert [r.name for r in results] == ["unrolled_pcg_k1", "unrolled_pcg_k3"]
    assert all(r.passed for r in results), [r.worst_rel_error for r in results]


@pytest.mark.slow
def test_energy_term_jacobians_pass():
    results = check_energy_terms(np.random.default_rng(0), 20)
    assert [r.name for r in results] == ["feature", "geometric", "arap"]
    for result in results:
        assert result.passed, (result.name, result.worst_rel_error)


@pytest.mark.slow
def test_full_grad_check_records_a_workflow_span(exporter):
    results = run_grad_check(probes=20, seed=1)
    assert all(r.passed for r in results)
    names = [span.name for span in exporter.get_finished_spans()]
    assert names[-1] == "grad_check.workflow"


def test_default_floor_keeps_small_gradients_honest():
    def f(x):
        return 1e-9 * x[0]

    report = finite_diff_check(f, np.zeros(1), [0.0])
    assert report.max_rel_error == pytest.approx(1.0, rel=1e-3)
    assert finite_diff_check(f, np.zeros(1), [0.0], floor=1e-3).passed(1e-5)
    assert inspect.signature(run_grad_check).parameters["floor"].default == 1e-12
