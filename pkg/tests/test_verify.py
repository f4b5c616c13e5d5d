"""The named-check machinery, including failures on deliberately corrupted state."""

import numpy as np

from citnet.verify import (
    CheckResult,
    check_rpb_table,
    check_ddconv_reduction,
    run_checks,
)
from citnet.wacam import WacamLayer


def test_fast_checks_all_pass():
    results = run_checks(level="fast", seed=0)
    failed = [r for r in results if not r.passed]
    assert not failed, failed
    assert len(results) >= 14


def test_corrupted_rpb_shape_fails_by_name(rng):
    layer = WacamLayer(16, 7, 2, rng, dtype=np.float64)
    layer.rpb.data = layer.rpb.data[:100]  # truncate the (2M-1)^2 table
    result = check_rpb_table(layer)
    assert isinstance(result, CheckResult)
    assert result.name == "wacam.rpb_table"
    assert not result.passed
    assert "169" in result.detail  # names the required row count (2*7-1)^2

def test_check_results_carry_details_only_on_failure(rng):
    ok = check_ddconv_reduction(np.random.default_rng(0))
    assert ok.passed and ok.detail == ""
