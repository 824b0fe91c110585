import numpy as np
import pytest

from mcqd.autoencoder import ModularAutoEncoderEnsemble


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def build_toy_ensemble(n_modules=2, input_dim=6, latent_dim=2, hidden=(3,),
                       diversity_kind="none", diversity_weight=1.0,
                       diversity_sign=-1, seed=0, dropout=0.0):
    """Small randomly initialized ensemble for oracle and gradient tests."""
    rng = np.random.default_rng(seed)
    return ModularAutoEncoderEnsemble.build(
        input_dim=input_dim, latent_dim=latent_dim, n_modules=n_modules,
        hidden=hidden, dropout=dropout, diversity_kind=diversity_kind,
        diversity_weight=diversity_weight, diversity_sign=diversity_sign,
        rng=rng)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one pass/fail line per acceptance criterion."""
    lines = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" not in nodeid or report.when not in (None, "call"):
                continue
            name = nodeid.split("::")[-1]
            lines[name] = "PASS" if status == "passed" else status.upper()
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(lines):
            terminalreporter.write_line(f"{lines[name]:>5}  {name}")
