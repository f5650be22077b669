"""The eight acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal
summary so they show up without ``-s``.
"""

import pytest

from reskit import validate

LINES = []


@pytest.mark.parametrize("number", sorted(validate.SUITE))
def test_acceptance_criterion(number):
    result = validate.run_criterion(number)
    LINES.append(result.line())
    print(result.line())
    assert result.passed, result.line()
