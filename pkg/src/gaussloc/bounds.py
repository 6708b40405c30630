"""Closed-form analytic bounds with every intermediate quantity exposed."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erfc, gamma as gamma_fn

from gaussloc.geometry import Kappas, reference_kappas

B_E_POINTS_PER_AXIS = 1000
B_E_MAX_POINTS = 250_000
B_E_CHUNK = 200_000


class BoundError(ValueError):
    pass


@dataclass
class BoundReport:
    name: str
    inputs: dict
    value: float
    intermediates: dict = field(default_factory=dict)
    valid: bool = True
    flags: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), sort_keys=True)

    def __float__(self) -> float:
        return float(self.value)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d = 1)."""
    return 2 * math.pi ** (d / 2) / gamma_fn(d / 2)


# ---------------------------------------------------------------------------
# Wegner
# ---------------------------------------------------------------------------


def b_E_grid(covariance: Callable[[np.ndarray], np.ndarray], c0: float, ell_E: float, d: int) -> tuple[float, int]:
    """Grid infimum of ``C(x)/C(0)`` over the closed cube ``|x|_inf <= ell_E/2``.

    The closure is used so that radially decreasing covariances attain the
    true infimum at the corners; otherwise the grid value can only
    overestimate the continuum infimum.
    """
    n = min(B_E_POINTS_PER_AXIS, max(2, int(B_E_MAX_POINTS ** (1.0 / d))))
    ax = np.linspace(-ell_E / 2, ell_E / 2, n)
    best = math.inf
    rest = np.meshgrid(*([ax] * (d - 1)), indexing="ij") if d > 1 else []
    rest = np.stack([r.ravel() for r in rest], axis=1) if rest else np.zeros((1, 0))
    # batches of first-axis rows bound memory
    rows = max(1, B_E_CHUNK // len(rest))
    for i in range(0, n, rows):
        x0 = ax[i:i + rows]
        pts = np.concatenate([np.repeat(x0, len(rest))[:, None], np.tile(rest, (len(x0), 1))], axis=1)
        best = min(best, float(np.min(covariance(pts))) / c0)
    return best, n


def wegner_t(E: float, C_E: float) -> float:
    a = 2 * C_E / math.pi
    root = math.sqrt(E * E + a)
    if E > 0:
        return a / (2 * C_E * (E + root))
    return (-E + root) / (2 * C_E)


def wegner_constant(
    E: float,
    c0: float,
    ell_C: float,
    d: int,
    covariance: Callable[[np.ndarray], np.ndarray] | None = None,
    b_E: float | None = None,
    t: float | None = None,
) -> BoundReport:
    """Wegner constant ``W(E)``; ``b_E`` is grid-evaluated from ``covariance`` unless given."""
    if not (c0 > 0 and math.isfinite(c0)):
        raise BoundError("C(0) must be positive and finite")
    if not ell_C > 0:
        raise BoundError("ell_C must be positive")
    ell_E = ell_C if E == 0 else min(abs(E) ** -0.5, ell_C)
    npts = None
    if b_E is None:
        if covariance is None:
            raise BoundError("need a covariance evaluator or b_E")
        b_E, npts = b_E_grid(covariance, c0, ell_E, d)
    if not b_E > 0:
        raise BoundError(f"b_E = {b_E} <= 0: positivity fails on the evaluation cube")
    b_E = min(b_E, 1.0)
    C_E = c0 * (2 - b_E**2)
    t_used = wegner_t(E, C_E) if t is None else float(t)
    if not t_used > 0:
        raise BoundError("t must be positive")
    log_w = (
        t_used * E
        + t_used**2 * C_E / 2
        - 0.5 * math.log(2 * math.pi * c0)
        - math.log(b_E)
        + d * math.log(2 / ell_E + (2 * math.pi * t_used) ** -0.5)
    )
    value = math.exp(log_w) if log_w < 709 else math.inf
    return BoundReport(
        "wegner_constant",
        {"E": E, "C(0)": c0, "ell_C": ell_C, "d": d, "t": t},
        value,
        {"ell_E": ell_E, "b_E": b_E, "C_E": C_E, "t": t_used, "ln_W": log_w,
         "b_E_grid_points_per_axis": npts, "b_E_direction": "grid inf >= continuum inf"},
    )


def wegner_asymptotic_limits(d: int, c0: float) -> dict:
    return {
        "high": 3**d * math.exp(1 / (2 * math.pi)) / math.sqrt(2 * math.pi * c0),
        "low": -1 / (2 * c0),
    }


def wegner_spectral_gap_probability(E_tilde: float, eps: float, volume: float, W: float, E: float,
                                    ell_C: float, d: int) -> BoundReport:
    """``P{dist(spec, E_tilde) < eps} <= 2 |Lambda| eps W(E)``."""
    ok_e = E_tilde + eps <= E
    ok_v = volume >= ell_C**d
    return BoundReport(
        "wegner_spectral_gap_probability",
        {"E_tilde": E_tilde, "eps": eps, "volume": volume, "W": W, "E": E, "ell_C": ell_C, "d": d},
        2 * volume * eps * W,
        {},
        bool(ok_e and ok_v and eps >= 0),
        {"energy_order": ok_e, "volume_at_least_ell_C^d": ok_v},
    )


# ---------------------------------------------------------------------------
# Combes-Thomas
# ---------------------------------------------------------------------------


def combes_thomas_bound(v0: float, E: float, delta: float, vol1: float, vol2: float, d: int) -> BoundReport:
    if not E < v0:
        raise BoundError("Combes-Thomas needs E < v0")
    if not delta > 0:
        raise BoundError("separation delta must be positive")
    gap = v0 - E
    k = math.sqrt(2 * gap)
    pref = math.sqrt(vol1 * vol2) / (2 ** ((d + 1) / 4) * (math.pi * delta) ** ((d - 1) / 2))
    corr = 1 + d * d / (8 * delta * k)
    value = pref * gap ** ((d - 3) / 4) * corr * math.exp(-delta * k)
    return BoundReport(
        "combes_thomas_bound",
        {"v0": v0, "E": E, "delta": delta, "vol1": vol1, "vol2": vol2, "d": d},
        value,
        {"delta": delta, "v0": v0, "rate": k, "prefactor": pref, "correction": corr},
    )


# ---------------------------------------------------------------------------
# Fernique
# ---------------------------------------------------------------------------


def fernique_rhs(ell: float, E: float, c0: float, d: int) -> BoundReport:
    if not ell > 1:
        raise BoundError("need ell > 1 so that ln(ell) > 0")
    value = 2 ** (2 * (d + 1)) * math.exp(-E * E / (200 * c0 * math.log(ell)))
    return BoundReport("fernique_rhs", {"ell": ell, "E": E, "C(0)": c0, "d": d}, value)


def dudley_integral_bound(ell: float, c0: float, beta: float, b: float, theta: float) -> float:
    """Upper bound on the entropy integral J(ell) from the Hölder data (beta, b, theta)."""
    lt = math.log(ell / theta)
    if lt <= 0:
        return math.inf
    first = math.sqrt(2 * c0 * lt / math.log(2))
    tail = math.sqrt(2 * b * ell**beta / (beta * math.log(2))) * (math.sqrt(math.pi) / 2) * erfc(
        math.sqrt(beta / 2 * lt)
    )
    return first + tail


def _clip_theta(c0: float, beta: float, b: float, theta: float) -> float:
    return min(theta, 1.0, (2 * c0 / b) ** (1 / beta))


def fernique_regime(c0: float, beta: float, b: float, theta: float, ell_max: float = 1e12,
                    points: int = 4000) -> BoundReport:
    """Smallest ``ell_H`` on a log grid such that the Fernique condition holds for all larger grid ell."""
    th = _clip_theta(c0, beta, b, theta)
    ells = np.geomspace(1.0 + 1e-6, ell_max, points)
    ok = np.array([
        math.sqrt(c0) + (2 + 2**1.5) * dudley_integral_bound(l, c0, beta, b, th) <= 10 * math.sqrt(c0 * math.log(l))
        for l in ells
    ])
    if not ok[-1]:
        return BoundReport("fernique_regime", {"C(0)": c0, "beta": beta, "b": b, "theta": theta},
                           math.inf, {"theta_used": th}, False)
    bad = np.nonzero(~ok)[0]
    idx = 0 if bad.size == 0 else int(bad[-1]) + 1
    ell_H = float(ells[idx])
    return BoundReport(
        "fernique_regime",
        {"C(0)": c0, "beta": beta, "b": b, "theta": theta},
        ell_H,
        {"ell_H": ell_H, "theta_used": th, "J(ell_H)": dudley_integral_bound(ell_H, c0, beta, b, th)},
    )


# ---------------------------------------------------------------------------
# energy scales and the initial estimate
# ---------------------------------------------------------------------------


def _scale_log(L: float, rho: float, d: int, extra: int = 1) -> float:
    return math.log(L) * ((2 * (d + extra)) * math.log(2) + rho * math.log(L))


def energy_scales(sigma: float, L: float, rho: float, d: int, c0: float, E0: float | None = None,
                  delta_E: float | None = None) -> BoundReport:
    """``E_sigma(L)``, ``epsilon(L)``, ``sigma(L)`` and ``v0(L)``."""
    if not L > 1:
        raise BoundError("need L > 1")
    if not rho > 0:
        raise BoundError("need rho > 0")
    if E0 is not None and not E0 < 0:
        raise BoundError("E0 must be negative")
    q1 = 200 * c0 * _scale_log(L, rho, d, 1)
    q2 = 200 * c0 * _scale_log(L, rho, d, 2)
    E_sigma = sigma * math.sqrt(q1)
    if delta_E is None:
        delta_E = -E0 / 2 if E0 is not None else 1.0
    inter = {
        "E_sigma(L)": E_sigma,
        "epsilon(L)": -E_sigma - delta_E,
        "v0(L)": -sigma * math.sqrt(q2),
        "Delta_E": delta_E,
        "sigma(L)": (-E0 / 2) / math.sqrt(q1) if E0 is not None else None,
    }
    return BoundReport(
        "energy_scales",
        {"sigma": sigma, "L": L, "rho": rho, "d": d, "C(0)": c0, "E0": E0, "delta_E": delta_E},
        inter["epsilon(L)"],
        inter,
    )


def pointwise_constant(gamma0: float, zeta: float, d: int, N: int) -> BoundReport:
    """Explicit ``tilde gamma`` with ``||gamma_k - gamma||^2 <= (tilde gamma / 200) L_k^(d - 2 zeta)``.

    Uses ``gamma(x) <= gamma0 (1+|x|)^-zeta`` and that ``gamma_k = gamma`` on the
    plateau ``|x|_inf < L_k/(8N) - 2/3`` of the unit-frame cutoff.
    """
    if not 2 * zeta > d:
        raise BoundError("need 2 zeta > d")
    value = 200 * gamma0**2 * sphere_area(d) * (8 * N) ** (2 * zeta - d) / (2 * zeta - d)
    return BoundReport("pointwise_constant", {"gamma0": gamma0, "zeta": zeta, "d": d, "N": N}, value,
                       {"S_{d-1}": sphere_area(d)})


def phi_functional(frame: float, sup_positive_part: float, kappas: Kappas) -> float:
    """``(kappa2/2 + sqrt(kappa4/2 + 2 (b kappa1)^2 sup max(0, f))) / b^2``."""
    if not math.isfinite(sup_positive_part):
        return math.inf
    s = max(0.0, sup_positive_part)
    b = frame
    return (kappas.kappa2 / 2 + math.sqrt(kappas.kappa4 / 2 + 2 * (b * kappas.kappa1) ** 2 * s)) / b**2


def initial_estimate_bound(L: float, N: int, d: int, E: float, v_min: float,
                           kappas: Kappas | None = None) -> BoundReport:
    """Reconstructed low-energy bound on ``sup_eta ||R_{B_N, B_0}||`` for ``E < v_min``.

    Composition of the frame lemma (the Heaviside term vanishes because
    ``dist(boundary, Lambda_{L/(4N)}) > L/(4N)``) with the Combes-Thomas
    estimate between the frame shell of ``B_N`` and ``Lambda_{L/(4N)}``.
    """
    kappas = kappas or reference_kappas(d)
    b = L / (4 * N)
    phi = phi_functional(b, E - v_min, kappas)
    vol1 = L**d - (L - 2 * b) ** d
    vol2 = (L / (4 * N)) ** d
    delta = L * (4 * N - 3) / (8 * N)
    ct = combes_thomas_bound(v_min, E, delta, vol1, vol2, d)
    return BoundReport(
        "initial_estimate_bound",
        {"L": L, "N": N, "d": d, "E": E, "v_min": v_min},
        phi * ct.value,
        {"Phi": phi, "combes_thomas": ct.value, "delta": delta, "vol_frame": vol1, "vol_core": vol2,
         **kappas.to_dict()},
    )
