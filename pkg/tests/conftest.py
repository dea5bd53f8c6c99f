import json
import os

import numpy as np
import pytest

_RESULTS = []


def record_criterion(number, passed, detail):
    """Collect one acceptance-criterion outcome for the terminal summary."""
    _RESULTS.append((number, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[criterion {number}] {status}: {detail}")


@pytest.fixture(scope="session")
def shipped_theta(tmp_path_factory):
    """The meta-trained optimizer used by every acceptance criterion.

    Trained once per session with the shipped staged recipe and cached on
    disk so repeated runs in one checkout skip the ~2 minute training.
    """
    from epturbo.metaopt import LstmOptimizerParams, meta_train_recipe

    cache = os.environ.get("EPTURBO_THETA_CACHE",
                           os.path.join(os.path.dirname(__file__),
                                        ".theta_cache.json"))
    if os.path.exists(cache):
        try:
            return LstmOptimizerParams.load(cache)
        except (ValueError, KeyError, json.JSONDecodeError):
            pass
    theta, _ = meta_train_recipe(rng=np.random.default_rng(2))
    theta.save(cache)
    return theta
