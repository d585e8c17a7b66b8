"""All fifteen acceptance criteria at their fixed tolerances.

The criteria share one :class:`Context`, so every branch is traced once.
Each criterion prints a single PASS/FAIL line as it finishes, whether or
not output capture is on.
"""
import sys

import pytest

from plasmacont.acceptance import CRITERIA, Context, run_all

_ctx = Context()
_results = {}


@pytest.fixture(scope="module")
def result(request, pytestconfig):
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    def get(k):
        if k not in _results:
            (_results[k],) = run_all([k], _ctx)
            with capman.global_and_fixture_disabled():
                sys.stdout.write("\n" + _results[k].line() + "\n")
                sys.stdout.flush()
        return _results[k]

    return get


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, result):
    r = result(k)
    assert r.passed, r.line()
