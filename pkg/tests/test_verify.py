import pytest

from lsred.errors import InvalidParameter
from lsred.verify import CHECKS, FAULTS, format_result, run_suite


def test_unknown_fault_rejected():
    with pytest.raises(InvalidParameter):
        run_suite(["no_such_fault"])


def test_module_filter_and_result_format():
    results = run_suite(only={"ground-state"})
    assert len(results) == sum(m == "ground-state" for m, _, _ in CHECKS)
    assert all(r.passed for r in results)
    line = format_result(results[0])
    assert line.startswith("PASS") and "ground-state" in line


@pytest.mark.parametrize("fault, module", [("profile_scale", "ground-state"), ("warped_weight", "lift"),
                                           ("dilation", "lift")])
def test_fault_is_caught_by_its_module(fault, module):
    results = run_suite([fault], only={module})
    assert any(not r.passed for r in results)


def test_every_fault_has_a_description():
    assert all(isinstance(v, str) and v for v in FAULTS.values())
