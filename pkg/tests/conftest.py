import numpy as np
import pytest


def all_pairs_histogram(ta, tb, lo, bin_width, nbins, gate=None):
    """Quadratic reference for the delay histogram of t_b - t_a."""
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    d = tb[None, :] - ta[:, None]
    ok = (d >= lo) & (d < lo + nbins * bin_width)
    if gate is not None:
        period, phase = gate
        ga = np.floor((ta - phase) / period)
        gb = np.floor((tb - phase) / period)
        ok &= ga[:, None] == gb[None, :]
    k = np.floor((d[ok] - lo) / bin_width).astype(np.int64)
    return np.bincount(np.minimum(k, nbins - 1), minlength=nbins)


def pair_delays(t, tau_max):
    """All positive delays t_j - t_i < tau_max (j > i) of one sorted array."""
    t = np.asarray(t, dtype=float)
    out = []
    k = 1
    while k < t.size:
        d = t[k:] - t[:-k]
        m = d < tau_max
        if not m.any():
            break
        out.append(d[m])
        k += 1
    return np.concatenate(out) if out else np.empty(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Collects one summary line per acceptance criterion."""
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
