"""The twelve acceptance criteria, one test each.

The PASS/FAIL line of every criterion is repeated in the terminal summary.
Criteria 4 and 5 share one 30-seed ensemble run.
"""

import pytest

from v2xcollab.acceptance import CRITERIA, Context, run_one

RESULTS: list = []


@pytest.fixture(scope="module")
def ctx(tmp_path_factory):
    return Context(tmp_path_factory.mktemp("acceptance"))


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, ctx):
    res = run_one(number, ctx)
    RESULTS.append(res)
    print(res.line())
    assert res.ok, res.line()
