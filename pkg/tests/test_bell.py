import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solarhom.bell import (CHSH_ANGLES, PSI_MINUS, AnalyzerSetting, InvalidStateError,
                           TwoQubitState, basis_correlations, basis_fractions,
                           bootstrap_chsh_stderr, build_postselected_state,
                           calibrate_contamination, chsh_error, chsh_report, chsh_S, correlation_E,
                           fidelity, fidelity_from_correlations, outcome_probabilities,
                           pairs_for_stderr, sample_polarizer_counts)

SINGLET = TwoQubitState.pure(PSI_MINUS)


def random_state(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    return TwoQubitState(rho / np.trace(rho).real)


def random_product_state(seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        out.append(np.outer(v, v.conj()) / np.vdot(v, v).real)
    return TwoQubitState(np.kron(*out))


def model_E(weights, phi1, phi2):
    """Closed form of E for the post-selected model family."""
    w_qq, w_ss, w_x, c = weights
    tot = w_qq + w_ss + w_x
    cc = math.cos(2 * phi1) * math.cos(2 * phi2)
    ss = math.sin(2 * phi1) * math.sin(2 * phi2)
    return ((w_qq + w_ss) * cc + w_x * (-cc - c * ss)) / tot


def test_state_validation():
    with pytest.raises(InvalidStateError):
        TwoQubitState(np.eye(3) / 3)
    with pytest.raises(InvalidStateError):
        TwoQubitState(np.diag([1.0, 0, 0, 0.1]))
    with pytest.raises(InvalidStateError):
        TwoQubitState(np.diag([1.2, -0.2, 0, 0]))
    bad = np.eye(4, dtype=complex) / 4
    bad[0, 1] = 0.1j
    with pytest.raises(InvalidStateError):
        TwoQubitState(bad)
    with pytest.raises(ValueError):
        AnalyzerSetting(math.pi)


def test_build_state_examples():
    rho = build_postselected_state((0, 0, 1, 1))
    np.testing.assert_allclose(rho.rho, SINGLET.rho, atol=1e-15)
    mix = build_postselected_state((0, 0, 1, 0))
    np.testing.assert_allclose(np.diag(mix.rho).real, [0, 0.5, 0.5, 0])
    assert fidelity(mix) == pytest.approx(0.5)
    with pytest.raises(InvalidStateError):
        build_postselected_state((0, 0, 0, 0.5))
    with pytest.raises(InvalidStateError):
        build_postselected_state((0.1, 0, 1, 1.5))


def test_fidelity_values():
    assert fidelity(SINGLET) == pytest.approx(1.0)
    assert fidelity(np.eye(4) / 4) == pytest.approx(0.25)
    assert fidelity_from_correlations(-1, -1, -1) == 1.0
    assert fidelity_from_correlations(-1, 0, 0) == 0.5
    with pytest.raises(ValueError):
        fidelity_from_correlations(-1.5, 0, 0)


def test_fidelity_identity_on_model_family():
    rng = np.random.default_rng(0)
    for _ in range(100):
        w = (*rng.uniform(0, 1, 3), rng.uniform(0, 1))
        rho = build_postselected_state(w, contamination_scale=rng.uniform(0, 2))
        assert abs(fidelity_from_correlations(*basis_correlations(rho)) - fidelity(rho)) <= 1e-12
        # closed form F = w_x (1 + c) / (2 total) at unit scale
        plain = build_postselected_state(w)
        assert fidelity(plain) == pytest.approx(w[2] * (1 + w[3]) / (2 * sum(w[:3])), abs=1e-12)


def test_singlet_correlations():
    for phi in np.linspace(0, math.pi, 7, endpoint=False):
        assert correlation_E(SINGLET, phi, phi) == pytest.approx(-1.0)
    assert correlation_E(SINGLET, 0.0, math.pi / 8) == pytest.approx(-0.70711, abs=1e-5)
    assert chsh_S(SINGLET) == pytest.approx(2 * math.sqrt(2), abs=1e-6)


def test_model_state_correlations_match_closed_form():
    w = (0.08, 0.08, 0.84, 0.93)
    rho = build_postselected_state(w)
    assert correlation_E(rho, 0.0, math.pi / 8) == pytest.approx(model_E(w, 0.0, math.pi / 8), abs=1e-12)
    assert model_E(w, 0.0, math.pi / 8) == pytest.approx(-0.48, abs=0.005)
    assert model_E(w, math.pi / 4, math.pi / 8) == pytest.approx(-0.55, abs=0.005)
    for a in np.linspace(0, math.pi, 5, endpoint=False):
        for b in np.linspace(0, math.pi, 5, endpoint=False):
            assert correlation_E(rho, a, b) == pytest.approx(model_E(w, a, b), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_product_states_obey_bell_bound(seed):
    assert chsh_S(random_product_state(seed)) <= 2.0 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0, math.pi - 1e-9), min_size=4, max_size=4))
def test_tsirelson_and_correlation_range(seed, angles):
    rho = random_state(seed)
    assert chsh_S(rho, angles) <= 2 * math.sqrt(2) + 1e-12
    for a in angles:
        for b in angles:
            assert -1 - 1e-12 <= correlation_E(rho, a, b) <= 1 + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, math.pi))
def test_chsh_invariant_under_frame_rotation(seed, theta):
    rho = random_state(seed)
    r = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    u = np.kron(r, r)
    rotated = TwoQubitState(u @ rho.rho @ u.conj().T)
    shifted = [(a + theta) % math.pi for a in CHSH_ANGLES]
    assert chsh_S(rotated, shifted) == pytest.approx(chsh_S(rho), abs=1e-10)


def test_outcome_probabilities_and_fractions():
    p = outcome_probabilities(SINGLET, 0.3, 0.3)
    assert p.sum() == pytest.approx(1.0)
    assert p[0] == pytest.approx(0) and p[3] == pytest.approx(0)
    fr = basis_fractions(SINGLET)
    assert set(fr) == {"HV", "PM", "RL"}
    for basis in fr.values():
        assert sum(basis.values()) == pytest.approx(1.0)
    assert fr["RL"]["RL"] == pytest.approx(0.5)
    assert correlation_E(SINGLET, AnalyzerSetting(circular=True), AnalyzerSetting(circular=True)) \
        == pytest.approx(-1.0)


def test_sampled_counts():
    c = sample_polarizer_counts(SINGLET, (0.2, 0.2), 1e6, 0)
    assert c[0] == 0 and c[3] == 0
    assert abs(c.sum() - 1e6) < 5e3
    with pytest.raises(ValueError):
        sample_polarizer_counts(SINGLET, (0, 0), 0, 0)


def test_sampled_E_is_unbiased():
    rho = build_postselected_state((0.08, 0.08, 0.84, 0.93))
    rng = np.random.default_rng(1)
    exact = correlation_E(rho, 0.0, math.pi / 8)
    es = []
    for _ in range(100):
        c = sample_polarizer_counts(rho, (0.0, math.pi / 8), 1e4, rng)
        es.append((c[0] + c[3] - c[1] - c[2]) / c.sum())
    es = np.array(es)
    assert abs(es.mean() - exact) < 4 * es.std(ddof=1) / 10


def test_chsh_error_scaling_and_sigma():
    # counts giving stderr_S = 0.06 around S = 2.2: E = +-0.55 each
    e = 0.55
    n = 4 * (1 - e * e) / 0.06 ** 2
    same, diff = n * (1 + e) / 2, n * (1 - e) / 2
    pos = [same / 2, diff / 2, diff / 2, same / 2]
    neg = [diff / 2, same / 2, same / 2, diff / 2]
    s, err, sigma = chsh_error([pos, neg, pos, pos])
    assert s == pytest.approx(2.2) and err == pytest.approx(0.06)
    assert sigma == pytest.approx(3.33, abs=0.01)
    s_big, err_big, _ = chsh_error([[1e12 * v for v in c] for c in (pos, neg, pos, pos)])
    assert err_big < 1e-5
    with pytest.raises(ValueError):
        chsh_error([pos, neg, pos, [0, 0, 0, 0]])
    with pytest.raises(ValueError):
        chsh_error([pos, neg, pos])


def test_analytic_stderr_matches_bootstrap():
    rho = build_postselected_state((0.08, 0.08, 0.84, 0.93))
    rng = np.random.default_rng(2)
    counts = [sample_polarizer_counts(rho, (x, y), 5000, rng)
              for x, y in ((0, math.pi / 8), (0, 3 * math.pi / 8), (math.pi / 4, math.pi / 8),
                           (math.pi / 4, 3 * math.pi / 8))]
    _, err, _ = chsh_error(counts)
    assert bootstrap_chsh_stderr(counts, 4000, 3) == pytest.approx(err, rel=0.1)


def test_calibration_and_report():
    w = (0.0436, 0.0715, 0.662, 0.901)
    scale = calibrate_contamination(w, 0.826)
    rho = build_postselected_state(w, scale)
    assert fidelity(rho) == pytest.approx(0.826, abs=1e-12)
    with pytest.raises(ValueError):
        calibrate_contamination(w, 0.99)
    n = pairs_for_stderr(rho, 0.06)
    rep = chsh_report(rho, pairs_per_setting=n, rng=4)
    assert rep["stderr_S_expected"] == pytest.approx(0.06)
    assert len(rep["E"]) == 4
    assert abs(rep["S"] - rep["S_exact"]) < 4 * rep["stderr_S"]
