"""Post-selected two-photon polarisation states and Bell tests.

Basis order is |HH>, |HV>, |VH>, |VV>; H is the +1 eigenstate of sigma_z
and R = (H + iV)/sqrt(2) the +1 eigenstate of sigma_y.  The QD photon
enters H and the thermal photon V, so same-source pairs land in |HH> and
|VV> and the cross-source pairs in a partially coherent HV/VH mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .synth import as_generator

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)

PSI_MINUS = np.array([0, 1, -1, 0], dtype=complex) / math.sqrt(2.0)

CHSH_ANGLES = (0.0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)  # (a, a', b, b')
REFERENCE_FIDELITY = 0.826
BELL_LIMIT = 2.0

TRACE_TOL = 1e-12
PSD_TOL = 1e-10


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class TwoQubitState:
    """Validated 4x4 density matrix."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise InvalidStateError(f"density matrix must be 4x4, got {rho.shape}")
        if not np.allclose(rho, rho.conj().T, atol=1e-12):
            raise InvalidStateError("density matrix is not Hermitian")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"trace is {tr!r}, not 1")
        ev = np.linalg.eigvalsh(rho)
        if ev.min() < -PSD_TOL:
            raise InvalidStateError(f"negative eigenvalue {ev.min():.3e}")
        object.__setattr__(self, "rho", rho)

    @classmethod
    def pure(cls, psi) -> "TwoQubitState":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    def expect(self, op: np.ndarray) -> float:
        return float(np.trace(self.rho @ op).real)


@dataclass(frozen=True)
class AnalyzerSetting:
    """Linear polariser at ``angle`` (rad) or, with ``circular``, an R/L analyser."""

    angle: float = 0.0
    circular: bool = False

    def __post_init__(self):
        if not self.circular and not 0.0 <= self.angle < math.pi:
            raise ValueError(f"analyser angle must lie in [0, pi), got {self.angle}")

    @property
    def observable(self) -> np.ndarray:
        if self.circular:
            return SY
        return math.cos(2 * self.angle) * SZ + math.sin(2 * self.angle) * SX


def _setting(s) -> AnalyzerSetting:
    return s if isinstance(s, AnalyzerSetting) else AnalyzerSetting(float(s) % math.pi)


def _as_state(rho) -> TwoQubitState:
    return rho if isinstance(rho, TwoQubitState) else TwoQubitState(rho)


def build_postselected_state(weights, contamination_scale: float = 1.0) -> TwoQubitState:
    """State of the one-photon-per-output events.

    ``weights`` is (w_qq, w_ss, w_x, c): bin-integrated same-source QD,
    same-source thermal and cross-source pair rates and the coherence of
    the cross-source part.  ``contamination_scale`` multiplies both
    same-source weights.
    """
    w_qq, w_ss, w_x, c = (float(v) for v in weights)
    if min(w_qq, w_ss, w_x) < 0:
        raise InvalidStateError("pair weights must be non-negative")
    if not 0.0 <= c <= 1.0:
        raise InvalidStateError(f"coherence must lie in [0, 1], got {c}")
    if contamination_scale < 0:
        raise InvalidStateError("contamination scale must be >= 0")
    w_qq *= contamination_scale
    w_ss *= contamination_scale
    total = w_qq + w_ss + w_x
    if total <= 0:
        raise InvalidStateError("all pair weights are zero")
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = w_qq
    rho[3, 3] = w_ss
    rho[1, 1] = rho[2, 2] = w_x / 2
    rho[1, 2] = rho[2, 1] = -c * w_x / 2
    return TwoQubitState(rho / total)


def fidelity(rho) -> float:
    """<psi-| rho |psi->."""
    r = _as_state(rho).rho
    return float((PSI_MINUS.conj() @ r @ PSI_MINUS).real)


def basis_correlations(rho) -> tuple[float, float, float]:
    """(E_HV, E_pm, E_RL) = <zz>, <xx>, <yy>."""
    s = _as_state(rho)
    return (s.expect(np.kron(SZ, SZ)), s.expect(np.kron(SX, SX)), s.expect(np.kron(SY, SY)))


def fidelity_from_correlations(e_hv, e_pm=None, e_rl=None) -> float:
    """Singlet fidelity from the three same-basis correlations.

    Accepts the three correlations or a state.
    """
    if e_pm is None and e_rl is None:
        e_hv, e_pm, e_rl = basis_correlations(e_hv)
    for e in (e_hv, e_pm, e_rl):
        if not -1.0 - 1e-12 <= e <= 1.0 + 1e-12:
            raise ValueError(f"correlation {e} outside [-1, 1]")
    return (1.0 - e_hv - e_pm - e_rl) / 4.0


def outcome_probabilities(rho, s1, s2) -> np.ndarray:
    """P(++), P(+-), P(-+), P(--) for analysers s1, s2."""
    a = _setting(s1).observable
    b = _setting(s2).observable
    r = _as_state(rho).rho
    p = []
    for sa in (1, -1):
        for sb in (1, -1):
            proj = np.kron((I2 + sa * a) / 2, (I2 + sb * b) / 2)
            p.append(np.trace(r @ proj).real)
    p = np.clip(np.array(p), 0.0, None)
    assert abs(p.sum() - 1.0) < 1e-9
    return p / p.sum()


def correlation_E(rho, s1, s2) -> float:
    op = np.kron(_setting(s1).observable, _setting(s2).observable)
    return _as_state(rho).expect(op)


def chsh_terms(angles=CHSH_ANGLES):
    a, a2, b, b2 = angles
    return ((a, b, 1.0), (a, b2, -1.0), (a2, b, 1.0), (a2, b2, 1.0))


def chsh_S(rho, angles=CHSH_ANGLES) -> float:
    """|E(a,b) - E(a,b') + E(a',b) + E(a',b')|."""
    return abs(sum(sign * correlation_E(rho, x, y) for x, y, sign in chsh_terms(angles)))


def basis_fractions(rho) -> dict:
    """Outcome fractions in the HV, +-, RL bases (four bars per basis)."""
    labels = {"HV": ("HH", "HV", "VH", "VV"), "PM": ("++", "+-", "-+", "--"),
              "RL": ("RR", "RL", "LR", "LL")}
    settings = {"HV": AnalyzerSetting(0.0), "PM": AnalyzerSetting(math.pi / 4),
                "RL": AnalyzerSetting(circular=True)}
    out = {}
    for basis, s in settings.items():
        p = outcome_probabilities(rho, s, s)
        out[basis] = dict(zip(labels[basis], (float(v) for v in p)))
    return out


def sample_polarizer_counts(rho, setting_pair, expected_pairs: float, rng) -> np.ndarray:
    """Poisson total, multinomial split over (++, +-, -+, --)."""
    if not expected_pairs > 0:
        raise ValueError("expected_pairs must be > 0")
    rng = as_generator(rng)
    p = outcome_probabilities(rho, *setting_pair)
    n = rng.poisson(expected_pairs)
    return rng.multinomial(n, p)


def _e_and_var(counts) -> tuple[float, float]:
    c = np.asarray(counts, dtype=float)
    n = c.sum()
    if n <= 0:
        raise ValueError("a setting has zero total counts")
    e = (c[0] + c[3] - c[1] - c[2]) / n
    return e, max(1.0 - e * e, 0.0) / n


def chsh_error(counts, signs=(1.0, -1.0, 1.0, 1.0)) -> tuple[float, float, float]:
    """(S, stderr_S, sigma_violation) from per-setting outcome counts."""
    counts = list(counts)
    if len(counts) != 4:
        raise ValueError("need counts for all four settings")
    es, vs = zip(*(_e_and_var(c) for c in counts))
    s = abs(sum(sg * e for sg, e in zip(signs, es)))
    err = math.sqrt(sum(vs))
    sigma = (s - BELL_LIMIT) / err if err > 0 else math.inf
    return s, err, sigma


def bootstrap_chsh_stderr(counts, n_boot: int = 2000, rng=0) -> float:
    """Parametric bootstrap of stderr_S by multinomial resampling."""
    rng = as_generator(rng)
    signs = np.array([1.0, -1.0, 1.0, 1.0])
    s = np.zeros(n_boot)
    for k, c in enumerate(counts):
        c = np.asarray(c)
        n = int(c.sum())
        draws = rng.multinomial(n, c / n, size=n_boot)
        e = (draws[:, 0] + draws[:, 3] - draws[:, 1] - draws[:, 2]) / n
        s += signs[k] * e
    return float(np.abs(s).std(ddof=1))


def pairs_for_stderr(rho, target: float, angles=CHSH_ANGLES) -> float:
    """Pairs per setting giving an expected stderr_S of ``target``."""
    var_sum = sum(1.0 - correlation_E(rho, x, y) ** 2 for x, y, _ in chsh_terms(angles))
    return var_sum / target ** 2


def calibrate_contamination(weights, target_fidelity: float) -> float:
    """Scale on the same-source weights that sets the singlet fidelity."""
    w_qq, w_ss, w_x, c = (float(v) for v in weights)
    if not 0.25 <= target_fidelity <= (1.0 + c) / 2:
        raise ValueError(f"fidelity {target_fidelity} unreachable with coherence {c:.4f}")
    contamination = w_qq + w_ss
    if contamination <= 0:
        raise ValueError("no same-source weight to calibrate")
    scale = (w_x * (1.0 + c) / (2.0 * target_fidelity) - w_x) / contamination
    if scale < 0:
        raise ValueError(f"fidelity {target_fidelity} unreachable by scaling contamination")
    return scale


def chsh_report(rho, angles=CHSH_ANGLES, pairs_per_setting: float | None = None, rng=1,
                target_stderr: float = 0.06) -> dict:
    """Exact and (optionally) finite-count CHSH summary.

    Without ``pairs_per_setting`` the count scale is chosen so that the
    expected stderr_S equals ``target_stderr``.
    """
    terms = chsh_terms(angles)
    exact = {f"({x:.4f},{y:.4f})": correlation_E(rho, x, y) for x, y, _ in terms}
    s_exact = chsh_S(rho, angles)
    if pairs_per_setting is None:
        pairs_per_setting = pairs_for_stderr(rho, target_stderr, angles)
    rng = as_generator(rng)
    counts = [sample_polarizer_counts(rho, (x, y), pairs_per_setting, rng) for x, y, _ in terms]
    s, err, sigma = chsh_error(counts)
    e_stats = {}
    for (x, y, _), c in zip(terms, counts):
        e, var = _e_and_var(c)
        e_stats[f"({x:.4f},{y:.4f})"] = {"E": e, "stderr": math.sqrt(var), "exact": exact[f"({x:.4f},{y:.4f})"],
                                          "counts": [int(v) for v in c]}
    expected_err = math.sqrt(sum(1 - v ** 2 for v in exact.values()) / pairs_per_setting)
    return {"E": e_stats, "S": s, "stderr_S": err, "sigma_violation": sigma,
            "S_exact": s_exact, "stderr_S_expected": expected_err,
            "sigma_violation_expected": (s_exact - BELL_LIMIT) / expected_err,
            "pairs_per_setting": pairs_per_setting}
