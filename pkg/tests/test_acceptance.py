"""All acceptance criteria at their stated tolerances, one pass/fail line each.

The lines are echoed as the criteria run and collected again in the terminal
summary. A criterion that fails here fails the test: none is marked xfail.
"""
import pytest

from negcount import acceptance

from conftest import ACCEPTANCE_LINES

SEED = 0


@pytest.mark.slow
@pytest.mark.parametrize("criterion", acceptance.CRITERIA, ids=lambda c: f"AC{c.number:02d}")
def test_acceptance_criterion(criterion):
    result = acceptance.run_criterion(criterion, SEED)
    line = result.line()
    ACCEPTANCE_LINES[criterion.number] = line
    print(line)
    assert result.passed, result.detail
