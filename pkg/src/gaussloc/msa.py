"""Multi-scale analysis: parameter certification and numerical event probes.

The constraint ledger evaluates every inequality of the parameter system in
exact rational arithmetic (floats are converted to the rationals they
represent). The only transcendental constraint, ``L0^(nu-1) >= 4``, is
decided with interval arithmetic and reported as failed when the interval
cannot separate the two sides.

Probes take a *realization*: a ``DiscreteOperator`` assembled on a cube that
contains ``Lambda_L(x)``. Resolvent norms follow the operator module's
``sup_eta`` policy.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Callable

import mpmath
import numpy as np

from gaussloc.geometry import Box, BoxFamily, nested_boxes, reference_kappas, tile_frame
from gaussloc.grid import Grid
from gaussloc.operator import (
    DiscreteOperator,
    Gauge,
    Resolvent,
    assemble_on_grid,
    box_indicator,
    box_resolvent_norm,
    frame_operator,
    full_spectrum,
    spectral_distance,
    _eta_ladder,
    _reduced_matrix,
    _svd_norm,
)
from gaussloc.stats import ProportionEstimate, map_trials, trial_rng, wilson_interval


class MsaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parameter ledger
# ---------------------------------------------------------------------------

REAL_FIELDS = ("nu", "r", "rho", "theta", "w", "delta", "zeta", "L0")
INT_FIELDS = ("d", "N", "S")


@dataclass(frozen=True)
class LedgerEntry:
    id: str
    statement: str
    lhs: float
    relation: str
    rhs: float
    passed: bool
    exact: bool = True
    note: str = ""

    @property
    def margin(self) -> float:
        """Signed slack, positive when the entry holds (up to ties)."""
        if self.relation in (">", ">="):
            return self.lhs - self.rhs
        return self.rhs - self.lhs


@dataclass(frozen=True)
class MsaParameters:
    d: int
    N: int
    S: int
    nu: float
    r: float
    rho: float
    theta: float
    w: float
    delta: float
    zeta: float
    L0: float
    ledger: tuple[LedgerEntry, ...] = ()
    info: dict = field(default_factory=dict, compare=False)

    @property
    def feasible(self) -> bool:
        return bool(self.ledger) and all(e.passed for e in self.ledger)

    @property
    def violated(self) -> list[str]:
        return [e.id for e in self.ledger if not e.passed]

    def entry(self, cid: str) -> LedgerEntry:
        for e in self.ledger:
            if e.id == cid:
                return e
        raise KeyError(cid)

    def values(self) -> dict:
        return {k: getattr(self, k) for k in (*INT_FIELDS, *REAL_FIELDS)}

    def with_values(self, **changes) -> "MsaParameters":
        """Copy with fields changed and the ledger cleared."""
        return replace(self, ledger=(), info={}, **changes)

    def to_json(self) -> str:
        out = self.values()
        out["feasible"] = self.feasible
        out["violated"] = self.violated
        out["ledger"] = [{**asdict(e), "margin": e.margin} for e in self.ledger]
        out["info"] = self.info
        return json.dumps(out, sort_keys=True, indent=2)


def _q(x) -> Fraction:
    return Fraction(x)


@dataclass(frozen=True)
class Constraint:
    id: str
    statement: str
    params: tuple[str, ...]
    evaluate: Callable[[dict], tuple[Fraction, str, Fraction]]


def _theta0(p):
    return p["nu"] / 2 + 2 / p["delta"] * (p["d"] - 1) * (p["nu"] - 1)


def _independence_rhs(p):
    K = p["N"] - p["S"]
    den = 2 * p["theta"] - p["nu"]
    if K <= 0 or den <= 0:
        return None
    return Fraction(4, K) * (p["d"] - 1) * (p["nu"] - 1) / den


CONSTRAINTS: tuple[Constraint, ...] = (
    Constraint("nu_lower", "nu > 1", ("nu",),
               lambda p: (p["nu"], ">", Fraction(1))),
    Constraint("nu_upper", "nu < 1 + 1/(8d)", ("nu",),
               lambda p: (p["nu"], "<", 1 + Fraction(1, 8 * p["d"]))),
    Constraint("r_lower", "r > 4 d nu", ("r", "nu"),
               lambda p: (p["r"], ">", 4 * p["d"] * p["nu"])),
    Constraint("r_upper", "r < 4d + 1/2", ("r",),
               lambda p: (p["r"], "<", 4 * p["d"] + Fraction(1, 2))),
    Constraint("rho_upper", "rho < 1/2", ("rho",),
               lambda p: (p["rho"], "<", Fraction(1, 2))),
    Constraint("w_upper", "w < d - 1/4", ("w",),
               lambda p: (p["w"], "<", p["d"] - Fraction(1, 4))),
    Constraint("w_lower", "w > rho + d + 1 - 2/nu", ("w", "rho", "nu"),
               lambda p: (p["w"], ">", p["rho"] + p["d"] + 1 - 2 / p["nu"])),
    Constraint("zeta_lower", "zeta > d/2 + r + 2w + 2/nu - 1", ("zeta", "r", "w", "nu"),
               lambda p: (p["zeta"], ">", Fraction(p["d"], 2) + p["r"] + 2 * p["w"] + 2 / p["nu"] - 1)),
    Constraint("recursion_i", "(S-nu) r > (nu-1)(d-1)S + nu w (S+1)", ("r", "nu", "w", "S"),
               lambda p: ((p["S"] - p["nu"]) * p["r"], ">",
                          (p["nu"] - 1) * (p["d"] - 1) * p["S"] + p["nu"] * p["w"] * (p["S"] + 1))),
    Constraint("recursion_ii", "((N-S) theta - nu) rho > (nu-1)(d-1)(N-S)",
               ("theta", "nu", "rho", "N", "S"),
               lambda p: (((p["N"] - p["S"]) * p["theta"] - p["nu"]) * p["rho"], ">",
                          (p["nu"] - 1) * (p["d"] - 1) * (p["N"] - p["S"]))),
    Constraint("independence_rho_lower", "K = N-S: (4/K)(d-1)(nu-1)/(2 theta - nu) < rho",
               ("rho", "nu", "theta"), None),  # evaluated specially (rhs may be undefined)
    Constraint("independence_rho_upper", "K = N-S: rho <= delta/K", ("rho", "delta", "N", "S"),
               lambda p: (p["rho"], "<=", p["delta"] / max(p["N"] - p["S"], 1))),
    Constraint("N_min", "N >= 4", ("N",),
               lambda p: (Fraction(p["N"]), ">=", Fraction(4))),
    Constraint("S_lower", "S >= 2", ("S",),
               lambda p: (Fraction(p["S"]), ">=", Fraction(2))),
    Constraint("S_upper", "S <= N - 2", ("S", "N"),
               lambda p: (Fraction(p["S"]), "<=", Fraction(p["N"] - 2))),
    Constraint("L0_growth", "L0^(nu-1) >= 4", ("L0", "nu"), None),  # interval arithmetic
    Constraint("theta_lower", "theta > max(3/4, theta0)", ("theta", "nu", "delta"),
               lambda p: (p["theta"], ">", max(Fraction(3, 4), _theta0(p)))),
    Constraint("theta_upper", "theta < 1", ("theta",),
               lambda p: (p["theta"], "<", Fraction(1))),
)

CONSTRAINT_IDS = tuple(c.id for c in CONSTRAINTS)
_BY_ID = {c.id: c for c in CONSTRAINTS}

_REL = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
}


def _growth_entry(p_float: dict, statement: str) -> LedgerEntry:
    """Decide ``(nu - 1) log L0 >= log 4`` with outward-rounded intervals."""
    nu, L0 = p_float["nu"], p_float["L0"]
    if not L0 > 0:
        return LedgerEntry("L0_growth", statement, math.nan, ">=", math.log(4), False, False, "L0 <= 0")
    for prec in (80, 200, 600):
        mpmath.iv.prec = prec
        lhs = (mpmath.iv.mpf(nu) - 1) * mpmath.iv.log(mpmath.iv.mpf(L0))
        rhs = mpmath.iv.log(mpmath.iv.mpf(4))
        if lhs.a >= rhs.b:
            return LedgerEntry("L0_growth", statement, float(lhs.mid), ">=", float(rhs.mid), True, False,
                               f"interval arithmetic, {prec} bits")
        if lhs.b < rhs.a:
            return LedgerEntry("L0_growth", statement, float(lhs.mid), ">=", float(rhs.mid), False, False,
                               f"interval arithmetic, {prec} bits")
    return LedgerEntry("L0_growth", statement, float(lhs.mid), ">=", float(rhs.mid), False, False,
                       "undecided at 600 bits; reported as failed")


def _evaluate(c: Constraint, p: dict, pf: dict) -> LedgerEntry:
    if c.id == "L0_growth":
        return _growth_entry(pf, c.statement)
    if c.id == "independence_rho_lower":
        rhs = _independence_rhs(p)
        if rhs is None:
            return LedgerEntry(c.id, c.statement, float(p["rho"]), ">", math.inf, False, True,
                               "2 theta - nu <= 0 or N - S <= 0")
        return LedgerEntry(c.id, c.statement, float(p["rho"]), ">", float(rhs), p["rho"] > rhs)
    lhs, rel, rhs = c.evaluate(p)
    return LedgerEntry(c.id, c.statement, float(lhs), rel, float(rhs), bool(_REL[rel](lhs, rhs)))


def _exact_inputs(params: MsaParameters) -> tuple[dict, dict]:
    pf = params.values()
    for k in REAL_FIELDS:
        v = pf[k]
        if v is None or not math.isfinite(float(v)):
            raise MsaError(f"field {k} must be a finite number, got {v!r}")
    for k in INT_FIELDS:
        if int(pf[k]) != pf[k]:
            raise MsaError(f"field {k} must be an integer")
    if pf["d"] < 1:
        raise MsaError("d must be >= 1")
    if not pf["delta"] > 0 or not pf["nu"] > 0:
        raise MsaError("delta and nu must be positive")
    p = {k: (int(v) if k in INT_FIELDS else _q(v)) for k, v in pf.items()}
    return p, pf


def check_msa_parameters(candidate: MsaParameters) -> MsaParameters:
    """Evaluate every constraint; returns a copy carrying the ledger."""
    p, pf = _exact_inputs(candidate)
    ledger = tuple(_evaluate(c, p, pf) for c in CONSTRAINTS)
    zeta_ref = Fraction(13 * p["d"], 2) + 1
    info = {
        "theta0": float(_theta0(p)),
        "zeta_above_13d/2+1": bool(p["zeta"] > zeta_ref),
        "log_L0_min": math.log(4) / (pf["nu"] - 1) if pf["nu"] > 1 else math.inf,
    }
    return replace(candidate, ledger=ledger, info=info)


def _float_margin(cid: str, pf: dict) -> float:
    """Float slack of one constraint (for bisection only; decisions stay exact)."""
    p = dict(pf)
    if cid == "L0_growth":
        if p["L0"] <= 0:
            return -math.inf
        return (p["nu"] - 1) * math.log(p["L0"]) - math.log(4)
    if cid == "independence_rho_lower":
        K = p["N"] - p["S"]
        den = 2 * p["theta"] - p["nu"]
        if K <= 0 or den <= 0:
            return -math.inf
        return p["rho"] - 4 / K * (p["d"] - 1) * (p["nu"] - 1) / den
    lhs, rel, rhs = _BY_ID[cid].evaluate(p)
    return float(lhs - rhs) if rel in (">", ">=") else float(rhs - lhs)


# ---------------------------------------------------------------------------
# boundary perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    target: str
    param: str
    old: float
    new: float
    flipped: tuple[str, ...]

    @property
    def exclusive(self) -> bool:
        return self.flipped == (self.target,)


def _cross_boundary(cid: str, pf: dict, name: str) -> float | None:
    """Value of ``name`` just past the zero of the constraint's slack, or None."""
    x0 = float(pf[name])
    m0 = _float_margin(cid, pf)

    def m(x):
        q = dict(pf)
        q[name] = x
        try:
            return _float_margin(cid, q)
        except (ZeroDivisionError, OverflowError, ValueError):
            return math.nan

    for sign in (-1.0, 1.0):
        step = 1e-6
        lo, far = x0, None
        while step < 700:
            # multiplicative steps keep positive parameters positive
            x = x0 * math.exp(sign * step) if x0 > 0 else x0 + sign * step
            mx = m(x)
            if math.isfinite(mx) and (mx < 0) != (m0 < 0):
                far = x
                break
            if math.isfinite(mx):
                lo = x
            step *= 2
        if far is None:
            continue
        a, b = lo, far  # sign of margin at a equals that at x0
        for _ in range(200):
            mid = (a + b) / 2
            if mid in (a, b):
                break
            if (m(mid) < 0) == (m0 < 0):
                a = mid
            else:
                b = mid
        # step a few ulps past the boundary so the exact check sees the flip
        x = b
        for _ in range(64):
            if (m(x) < 0) != (m0 < 0):
                nudged = x + sign * abs(x) * 1e-12
                return nudged
            x = x + sign * max(abs(x) * 1e-15, 1e-300)
        return b
    return None


def perturbation_study(params: MsaParameters, targets=None) -> dict[str, list[Perturbation]]:
    """Move one parameter at a time across each target constraint and record the flipped entries.

    Real parameters are moved to just past the boundary of the target;
    integer parameters by one unit in the direction that violates it.
    """
    base = params if params.ledger else check_msa_parameters(params)
    before = {e.id: e.passed for e in base.ledger}
    pf = base.values()
    out: dict[str, list[Perturbation]] = {}
    for cid in targets or CONSTRAINT_IDS:
        trials = []
        for name in _BY_ID[cid].params:
            if name in INT_FIELDS:
                cands = [pf[name] - 1, pf[name] + 1]
                new = None
                for c in cands:
                    q = dict(pf)
                    q[name] = c
                    if (_float_margin(cid, q) < 0) != (_float_margin(cid, pf) < 0):
                        new = c
                        break
                if new is None:
                    continue
            else:
                new = _cross_boundary(cid, pf, name)
                if new is None:
                    continue
            moved = check_msa_parameters(base.with_values(**{name: new}))
            flipped = tuple(e.id for e in moved.ledger if e.passed != before[e.id])
            trials.append(Perturbation(cid, name, float(pf[name]), float(new), flipped))
        out[cid] = trials
    return out


def exclusive_flips(study: dict[str, list[Perturbation]]) -> dict[str, Perturbation | None]:
    return {cid: next((t for t in ts if t.exclusive), None) for cid, ts in study.items()}


# Entries that no single-parameter move can flip alone: each is implied by,
# or equivalent to, other entries of the system.
COUPLED_ENTRIES = {
    "nu_lower": "nu <= 1 also breaks L0^(nu-1) >= 4",
    "nu_upper": "implied by r_lower and r_upper: 4 d nu < r < 4d + 1/2",
    "recursion_i": "implied by nu_upper, r_lower and w_upper for N=4, S=2",
    "recursion_ii": "identical to independence_rho_lower when K = N - S and 2 theta > nu",
    "independence_rho_lower": "identical to recursion_ii when K = N - S and 2 theta > nu",
    "N_min": "implied by 2 <= S <= N - 2",
    "S_lower": "S = 1 makes (S - nu) r < 0, breaking recursion_i",
    "S_upper": "S = N - 1 breaks recursion_ii; moving N instead breaks N_min",
}


# ---------------------------------------------------------------------------
# feasibility search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchResult:
    feasible: bool
    params: MsaParameters | None
    min_slack: float
    certificate: dict
    candidates: int

    def to_json(self) -> str:
        out = {"feasible": self.feasible, "min_slack": self.min_slack, "certificate": self.certificate,
               "candidates": self.candidates}
        if self.params is not None:
            out["params"] = json.loads(self.params.to_json())
        return json.dumps(out, sort_keys=True, indent=2)


def _grid_slacks(d, N, S, delta, zeta, nu, r, rho, theta, w) -> dict:
    """Scaled slacks (vectorized floats) of the continuous constraints."""
    K = N - S
    theta0 = nu / 2 + 2 / delta * (d - 1) * (nu - 1)
    den = 2 * theta - nu
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = np.where(den > 0, 4 / max(K, 1) * (d - 1) * (nu - 1) / den, np.inf)
    if K <= 0:
        rc = np.full_like(rc, np.inf)
    pairs = {
        "nu_lower": (nu - 1, 1 / (8 * d)),
        "nu_upper": (1 + 1 / (8 * d) - nu, 1 / (8 * d)),
        "r_lower": (r - 4 * d * nu, 0.5),
        "r_upper": (4 * d + 0.5 - r, 0.5),
        "rho_upper": (0.5 - rho, 0.5),
        "w_upper": (d - 0.25 - w, 1.0),
        "w_lower": (w - (rho + d + 1 - 2 / nu), 1.0),
        "zeta_lower": (zeta - (d / 2 + r + 2 * w + 2 / nu - 1), 1.0),
        "recursion_i": ((S - nu) * r - (nu - 1) * (d - 1) * S - nu * w * (S + 1), S * (4 * d + 0.5)),
        "recursion_ii": ((K * theta - nu) * rho - (nu - 1) * (d - 1) * K, 1.0),
        "independence_rho_lower": (rho - rc, 0.5),
        "independence_rho_upper": (delta / max(K, 1) - rho, 0.5),
        "theta_lower": (theta - np.maximum(0.75, theta0), 0.25),
        "theta_upper": (1 - theta, 0.25),
    }
    shape = np.broadcast(nu, r, rho, theta, w, delta, zeta).shape
    return {k: np.broadcast_to(a / b, shape) for k, (a, b) in pairs.items()}


# For each independently flippable entry: the parameter moved and its boundary value.
_DESIGNATED = {
    "r_lower": ("r", lambda q: 4 * q["d"] * q["nu"]),
    "r_upper": ("r", lambda q: 4 * q["d"] + 0.5),
    "rho_upper": ("rho", lambda q: 0.5),
    "w_upper": ("w", lambda q: q["d"] - 0.25),
    "w_lower": ("w", lambda q: q["rho"] + q["d"] + 1 - 2 / q["nu"]),
    "zeta_lower": ("zeta", lambda q: q["d"] / 2 + q["r"] + 2 * q["w"] + 2 / q["nu"] - 1),
    "independence_rho_upper": ("delta", lambda q: max(q["N"] - q["S"], 1) * q["rho"]),
    "theta_lower": ("theta", lambda q: np.maximum(0.75, q["nu"] / 2 + 2 / q["delta"] * (q["d"] - 1) * (q["nu"] - 1))),
    "theta_upper": ("theta", lambda q: 1.0),
}


def _exclusivity_slack(q: dict) -> np.ndarray:
    """Smallest slack any other entry keeps when one designated parameter sits on its target's boundary."""
    out = None
    for cid, (name, boundary) in _DESIGNATED.items():
        moved = dict(q)
        moved[name] = np.broadcast_to(boundary(q), np.shape(q["nu"]))
        sl = _grid_slacks(q["d"], q["N"], q["S"], moved["delta"], moved["zeta"], moved["nu"], moved["r"],
                          moved["rho"], moved["theta"], moved["w"])
        worst = np.min(np.stack([v for k, v in sl.items() if k != cid]), axis=0)
        out = worst if out is None else np.minimum(out, worst)
    return out


def _l0_for(nu: float) -> float:
    """A power of two with ``L0^(nu-1) >= 8``: comfortably past the growth threshold."""
    e = math.ceil(3.0 / (nu - 1)) + 1
    return math.ldexp(1.0, min(e, 1000))


def search_feasible_parameters(d: int, N: int = 4, S: int = 2, delta: float = 10.0, zeta: float | None = None,
                               n_grid: int = 9, refine: int = 2, L0: float | None = None,
                               require_exclusive: bool = True, max_polish: int = 20) -> SearchResult:
    """Grid-plus-refinement search over ``(nu, r, rho, theta, w)``.

    ``nu``, ``r``, ``rho``, ``theta`` sweep their open intervals and ``w``
    sweeps ``(rho + d + 1 - 2/nu, d - 1/4)``. The objective is the smallest
    scaled slack; with ``require_exclusive`` it also counts the slack every
    other entry keeps when a single parameter is pushed onto one target's
    boundary, so that each independently flippable entry can be flipped
    alone. ``L0`` defaults to a power of two past the growth threshold. The
    best grid points are then checked exactly. With nothing feasible the
    result carries a certificate naming the tightest violated pair.
    """
    if d < 1:
        raise MsaError("d must be >= 1")
    if zeta is None:
        zeta = 13 * d / 2 + 2
    u = (np.arange(n_grid) + 0.5) / n_grid
    keys = "abcef"
    centre = {k: 0.5 for k in keys}
    span = 0.5
    best = None
    for level in range(refine + 1):
        axes = [np.clip(centre[k] + span * (2 * u - 1), 1e-6, 1 - 1e-6) for k in keys]
        A, B, C, E_, F = np.meshgrid(*axes, indexing="ij")
        nu = 1 + A / (8 * d)
        r = 4 * d * nu + B * (4 * d + 0.5 - 4 * d * nu)
        rho = C / 2
        theta = 0.75 + E_ / 4
        wlo = rho + d + 1 - 2 / nu
        w = wlo + F * (d - 0.25 - wlo)
        sl = _grid_slacks(d, N, S, delta, zeta, nu, r, rho, theta, w)
        ids = list(sl)
        slack = np.stack([sl[k] for k in ids])
        objective = slack.min(axis=0)
        if require_exclusive:
            q = dict(d=d, N=N, S=S, delta=np.full_like(nu, delta), zeta=np.full_like(nu, zeta),
                     nu=nu, r=r, rho=rho, theta=theta, w=w)
            objective = np.minimum(objective, _exclusivity_slack(q))
        order = np.argsort(objective, axis=None)[::-1]
        j = np.unravel_index(order[0], objective.shape)
        if best is None or objective[j] >= best[0]:
            best = (float(objective[j]), {k: float(ax[i]) for k, ax, i in zip(keys, axes, j)})
        centre = dict(best[1])
        span /= 3
    tried = 0
    fallback = None
    targets = [cid for cid in CONSTRAINT_IDS if cid not in COUPLED_ENTRIES]
    for flat in order[:max_polish]:
        j = np.unravel_index(flat, objective.shape)
        tried += 1
        pm = check_msa_parameters(MsaParameters(
            d, N, S, float(nu[j]), float(r[j]), float(rho[j]), float(theta[j]), float(w[j]), float(delta),
            float(zeta), float(L0) if L0 is not None else _l0_for(float(nu[j]))))
        if not pm.feasible:
            continue
        if not require_exclusive:
            return SearchResult(True, pm, float(objective[j]), {}, tried)
        ex = exclusive_flips(perturbation_study(pm, targets))
        missing = sorted(k for k, v in ex.items() if v is None)
        if not missing:
            return SearchResult(True, pm, float(objective[j]), {}, tried)
        if fallback is None:
            fallback = (replace(pm, info={**pm.info, "non_exclusive": missing}), float(objective[j]))
    if fallback is not None:
        return SearchResult(True, fallback[0], fallback[1], {}, tried)
    return SearchResult(False, None, best[0], _certificate(ids, slack), tried)


def _certificate(ids, slack) -> dict:
    """Tightest violated pair over the last search grid.

    Among grid points with the fewest violations take the most frequently
    violated entry, then the entry most often violated alongside it (or the
    tightest satisfied one when it is violated alone).
    """
    viol = slack <= 0
    nviol = viol.sum(axis=0)
    m = nviol.min()
    sel = viol[:, nviol == m]
    freq = sel.mean(axis=1)
    first = int(np.argmax(freq))
    rest = sel[:, sel[first]]
    co = rest.mean(axis=1)
    co[first] = -1
    if co.max() > 0:
        second = int(np.argmax(co))
    else:
        tight = np.where(viol, np.inf, slack)[:, nviol == m]
        tight[first] = np.inf
        second = int(np.argmin(tight.min(axis=1)))
    return {
        "violated": ids[first],
        "paired_with": ids[second],
        "min_violations": int(m),
        "violation_frequency": {ids[k]: float(freq[k]) for k in range(len(ids)) if freq[k] > 0},
        "max_slack_of_violated": float(slack[first].max()),
    }


# ---------------------------------------------------------------------------
# event probes
# ---------------------------------------------------------------------------

EVENTS = ("regular", "non-resonant", "frame-regular", "approximation", "gap", "independence")


@dataclass(frozen=True)
class MsaGeometry:
    """Box-family geometry shared by the probes: ``N`` shells and the scale exponent ``nu``."""

    N: int = 4
    nu: float = 1.1

    def family(self, L: float, x) -> BoxFamily:
        return nested_boxes(L, self.N, self.nu, x)

    def subscale(self, L: float) -> float:
        return (L / self.N) ** (1.0 / self.nu)


@dataclass(frozen=True)
class ProbeResult:
    """Outcome of one event probe with the norms it was decided from.

    With ``groups`` set, the outcome means "at least ``required`` groups have
    all their norms within threshold"; otherwise every norm must be.
    """

    event: str
    params: dict
    outcome: bool
    norms: dict
    thresholds: dict
    groups: dict | None = None
    required: int | None = None
    extra: dict = field(default_factory=dict)

    def passes(self, key: str) -> bool:
        return self.norms[key] <= self.thresholds[key]

    def consistent(self) -> bool:
        if any(not (v >= 0) for v in self.norms.values()):
            return False
        if self.groups is None:
            return self.outcome == all(self.passes(k) for k in self.norms)
        good = sum(all(self.passes(k) for k in keys) for keys in self.groups.values())
        return self.outcome == (good >= self.required)

    def to_dict(self) -> dict:
        return {"event": self.event, "params": self.params, "outcome": self.outcome, "norms": self.norms,
                "thresholds": self.thresholds, "groups": self.groups, "required": self.required,
                "extra": self.extra}

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), sort_keys=True)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def write_jsonl(path, results) -> None:
    with open(path, "w") as fh:
        for res in results:
            fh.write(res.to_json() + "\n")


def _centre(op: DiscreteOperator, x):
    return tuple(op.cube.center) if x is None else tuple(float(v) for v in np.atleast_1d(x))


class _OuterSolver:
    """``H`` restricted to one outer box, factorized once per ``eta`` of the policy."""

    def __init__(self, op: DiscreteOperator, outer: Box, E: float, frame_kind: str = "commutator"):
        self.sub = op.restrict_box(outer)
        self.outer = outer
        self.gamma = frame_operator(self.sub, outer, frame_kind)
        self.dist, self.etas = _eta_ladder(self.sub, E, None)
        self.res = [Resolvent(self.sub, complex(E, et)) for et in self.etas]

    def norm(self, inner: Box, kind: str = "indicator") -> tuple[float, float]:
        chi = box_indicator(inner, self.sub.grid, kind)
        best, best_eta = 0.0, self.etas[0]
        for et, res in zip(self.etas, self.res):
            M, _, _ = _reduced_matrix(self.sub, res, self.gamma, chi)
            val = 0.0 if M is None else _svd_norm(M)
            if val >= best:
                best, best_eta = val, et
        return best, best_eta


def regularity_probe(op: DiscreteOperator, geometry: MsaGeometry, r: float, E: float, L: float,
                     x=None) -> ProbeResult:
    """``sup_eta ||R_{B_N, B_0}(v, E + i eta)|| <= L^-r``."""
    x = _centre(op, x)
    fam = geometry.family(L, x)
    res = box_resolvent_norm(op, fam[geometry.N], fam[0], E)
    thr = float(L) ** (-r)
    return ProbeResult("regular", {"r": r, "E": E, "L": L, "x": x, "eta": res.eta, "N": geometry.N,
                                   "nu": geometry.nu},
                       bool(res.value <= thr), {"R_N0": res.value}, {"R_N0": thr},
                       extra={"spectral_distance": res.spectral_distance})


def nonresonance_probe(op: DiscreteOperator, geometry: MsaGeometry, w: float, E: float, L: float,
                       x=None) -> ProbeResult:
    """Both families of intermediate norms against ``L^w``.

    ``R_{B_n, B_0}`` for ``1 <= n <= N-1`` and ``W_{B_n', B_N^ell(y)}`` for
    ``n < n'`` and tiles ``y`` of the frame of ``B_n``, with ``ell`` the
    sub-scale. Tile boxes that fail ``B_N^ell(y) < B_n'`` (possible below the
    large-``L`` regime) are measured all the same and listed in ``extra``.
    """
    x = _centre(op, x)
    N = geometry.N
    fam = geometry.family(L, x)
    ell = fam.subscale
    thr = float(L) ** w
    norms, etas, uncontained = {}, {}, []
    solvers = {n: _OuterSolver(op, fam[n], E) for n in range(1, N + 1)}
    for n in range(1, N):
        norms[f"R_{n}0"], etas[f"R_{n}0"] = solvers[n].norm(fam[0])
    for n in range(1, N):
        tiles = tile_frame(fam, n)
        for i, y in enumerate(tiles.centers):
            tile_box = Box(tuple(y), ell, ell / (4 * N))
            for n2 in range(n + 1, N + 1):
                key = f"W_{n2},{n}:{i}"
                norms[key], etas[key] = solvers[n2].norm(tile_box, "frame")
                if not tile_box < fam[n2]:
                    uncontained.append(key)
    ok = all(v <= thr for v in norms.values())
    return ProbeResult("non-resonant", {"w": w, "E": E, "L": L, "x": x, "N": N, "nu": geometry.nu, "ell": ell},
                       bool(ok), norms, {k: thr for k in norms},
                       extra={"eta": etas, "uncontained_tiles": uncontained})


def frame_regularity_probe(op: DiscreteOperator, geometry: MsaGeometry, r: float, E: float, L: float, S: int,
                           x=None) -> ProbeResult:
    """``(r, E, ell, y)``-regularity for every tile ``y`` of at least ``S`` of the shells ``1..N-1``."""
    x = _centre(op, x)
    N = geometry.N
    if not 1 <= S <= N - 1:
        raise MsaError(f"need 1 <= S <= N-1, got S={S}")
    fam = geometry.family(L, x)
    ell = fam.subscale
    thr = ell ** (-r)
    norms, groups = {}, {}
    for n in range(1, N):
        keys = []
        for i, y in enumerate(tile_frame(fam, n).centers):
            res = regularity_probe(op, geometry, r, E, ell, y)
            key = f"shell{n}:{i}"
            norms[key] = res.norms["R_N0"]
            keys.append(key)
        groups[f"shell{n}"] = keys
    regular_shells = [g for g, keys in groups.items() if all(norms[k] <= thr for k in keys)]
    ok = len(regular_shells) >= S
    return ProbeResult("frame-regular", {"r": r, "E": E, "L": L, "S": S, "x": x, "ell": ell, "N": N,
                                         "nu": geometry.nu},
                       bool(ok), norms, {k: thr for k in norms}, groups, S,
                       extra={"regular_shells": regular_shells, "chosen": regular_shells[:S] if ok else []})


def gap_probe(op: DiscreteOperator, E: float, eps: float) -> ProbeResult:
    """``dist(E, spec H) >= eps``, recorded as ``1/dist <= 1/eps``."""
    dist = spectral_distance(op, E)
    inv = math.inf if dist == 0 else 1.0 / dist
    return ProbeResult("gap", {"E": E, "eps": eps}, bool(inv <= 1.0 / eps), {"inverse_gap": inv},
                       {"inverse_gap": 1.0 / eps})


@dataclass(frozen=True)
class Defect:
    value: float
    eta: float
    diff_sup: float
    outer_norm: float  # ||Gamma_{B_N} (H(v) - z)^-1||
    inner_norm: float  # ||(H(v') - z)^-1 chi_{B_0}||
    frame_bound: float | None  # frame-lemma bound, when E lies below both spectra

    @property
    def product_bound(self) -> float:
        return self.outer_norm * self.diff_sup * self.inner_norm


def approximation_defect(op_v: DiscreteOperator, op_vp: DiscreteOperator, E: float, L: float, x=None,
                         geometry: MsaGeometry = MsaGeometry()) -> Defect:
    """``||R_{B_N,(Lambda,0)}(v) (v - v') (H(v') - z)^-1 chi_{B_0}||`` on ``Lambda = Lambda_L(x)``.

    ``frame_bound`` is the frame-lemma estimate
    ``|v-v'| |(H(v')-E)^-1| (Phi(E-v) |(H(v)-E)^-1| + sqrt2 kappa1/b |(H(v)-E)^-1|^(1/2))``
    with ``b = L/(4N)``, reported when ``E`` lies below both spectra.
    """
    if op_v.grid != op_vp.grid:
        raise MsaError("both potentials must live on the same grid")
    x = _centre(op_v, x)
    fam = geometry.family(L, x)
    outer, inner = fam[geometry.N], fam[0]
    a = op_v.restrict_box(outer)
    b_ = op_vp.restrict_box(outer)
    gamma = frame_operator(a, outer)
    chi = box_indicator(inner, a.grid)
    diff = a.v - b_.v
    diff_sup = float(np.max(np.abs(diff), initial=0.0))
    da, etas_a = _eta_ladder(a, E, None)
    db, etas_b = _eta_ladder(b_, E, None)
    etas = etas_a if len(etas_a) >= len(etas_b) else etas_b
    rows = np.unique(gamma.nonzero()[0])
    cols = np.nonzero(chi)[0]
    best = (0.0, etas[0], 0.0, 0.0)
    for et in etas:
        ra, rb = Resolvent(a, complex(E, et)), Resolvent(b_, complex(E, et))
        rhs = np.zeros((a.size, cols.size), dtype=complex)
        rhs[cols, np.arange(cols.size)] = chi[cols]
        X = rb.solve(rhs)
        Y = ra.solve(diff[:, None] * X)
        val = _svd_norm(np.asarray(gamma[rows] @ Y)) if rows.size and cols.size else 0.0
        # ||Gamma (H - z)^-1|| through the adjoint on the frame rows
        G = np.asarray(gamma[rows].conj().T.toarray())
        outer_norm = _svd_norm(ra.solve_adjoint(G)) if rows.size else 0.0
        inner_norm = _svd_norm(X) if cols.size else 0.0
        if val >= best[0]:
            best = (val, et, outer_norm, inner_norm)
    frame_bound = None
    lo_a, lo_b = full_lowest(a), full_lowest(b_)
    if E < lo_a and E < lo_b:
        from gaussloc.operator import phi_functional as _phi

        fpts = np.nonzero(box_indicator(outer, a.grid, "frame"))[0]
        phi = _phi(outer, (E - a.v)[fpts])
        k1 = reference_kappas(a.d).kappa1
        ra_norm, rb_norm = 1.0 / (lo_a - E), 1.0 / (lo_b - E)
        bw = L / (4 * geometry.N)
        frame_bound = diff_sup * rb_norm * (phi * ra_norm + math.sqrt(2) * k1 / bw * math.sqrt(ra_norm))
    return Defect(best[0], best[1], diff_sup, best[2], best[3], frame_bound)


def full_lowest(op: DiscreteOperator) -> float:
    """Lowest eigenvalue of ``op``."""
    if (op.d == 1 and op.is_real) or op.size <= 4000:
        return float(full_spectrum(op)[0])
    from scipy.sparse.linalg import eigsh

    return float(eigsh(op.matrix, k=1, which="SA", return_eigenvectors=False)[0])


def approximation_probe(op_v: DiscreteOperator, op_vp: DiscreteOperator, r: float, E: float, L: float, x=None,
                        geometry: MsaGeometry = MsaGeometry()) -> ProbeResult:
    dfx = approximation_defect(op_v, op_vp, E, L, x, geometry)
    thr = float(L) ** (-r) / 2
    return ProbeResult("approximation", {"r": r, "E": E, "L": L, "x": _centre(op_v, x), "eta": dfx.eta},
                       bool(dfx.value <= thr), {"D": dfx.value}, {"D": thr},
                       extra={"diff_sup": dfx.diff_sup, "product_bound": dfx.product_bound,
                              "frame_bound": dfx.frame_bound})


# ---------------------------------------------------------------------------
# Monte-Carlo experiments
# ---------------------------------------------------------------------------


def realization(spec, L: float, x, h: float, rng: np.random.Generator, gauge: Gauge | None = None) -> DiscreteOperator:
    """One sample of ``H_{Lambda_L(x)}(V)`` on spacing ``h``."""
    from gaussloc.field import CirculantSampler

    grid = Grid.dirichlet_cube(x, L, h)
    v = CirculantSampler(spec, grid).sample(rng)
    return assemble_on_grid(grid, v, gauge)


@dataclass(frozen=True)
class RegularityEstimate:
    estimate: ProportionEstimate
    target: float | None  # 1 - L^-rho
    outcomes: tuple[bool, ...]
    norms: tuple[float, ...]
    probes: tuple[ProbeResult, ...] = ()

    @property
    def exceeds_target(self) -> bool | None:
        return None if self.target is None else self.estimate.p > self.target

    @property
    def consistent_with_target(self) -> bool | None:
        return None if self.target is None else self.estimate.high >= self.target

    def to_dict(self) -> dict:
        return {"estimate": self.estimate.to_dict(), "target": self.target, "exceeds_target": self.exceeds_target,
                "norms": list(self.norms)}


def estimate_regularity_probability(spec, geometry: MsaGeometry, r: float, E: float, L: float, trials: int,
                                    seed: int, h: float = 0.1, x=None, rho: float | None = None,
                                    gauge: Gauge | None = None, workers: int | None = None) -> RegularityEstimate:
    """Fraction of ``(r, E, L, x)``-regular realizations with a Wilson interval."""
    if trials < 30:
        raise MsaError("need at least 30 trials for the interval to be meaningful")
    x = (0.0,) * spec.d if x is None else tuple(np.atleast_1d(x))
    from gaussloc.field import CirculantSampler

    grid = Grid.dirichlet_cube(x, L, h)
    sampler = CirculantSampler(spec, grid)

    def one(i):
        op = assemble_on_grid(grid, sampler.sample(trial_rng(seed, i)), gauge)
        return regularity_probe(op, geometry, r, E, L, x)

    res = map_trials(one, range(trials), workers)
    outcomes = tuple(p.outcome for p in res)
    target = None if rho is None else 1.0 - float(L) ** (-rho)
    return RegularityEstimate(wilson_interval(sum(outcomes), trials), target, outcomes,
                              tuple(p.norms["R_N0"] for p in res), tuple(res))


@dataclass(frozen=True)
class ImplicationReport:
    trials: int
    premises_held: int
    conclusions_held: int
    premise_rates: dict
    counterexamples: tuple[dict, ...]

    @property
    def occupancy(self) -> float:
        return self.premises_held / self.trials if self.trials else 0.0

    @property
    def vacuous(self) -> bool:
        return self.premises_held == 0

    def to_dict(self) -> dict:
        return {"trials": self.trials, "premises_held": self.premises_held, "occupancy": self.occupancy,
                "conclusions_held": self.conclusions_held, "premise_rates": self.premise_rates,
                "vacuous": self.vacuous, "counterexamples": list(self.counterexamples)}


def deterministic_implication_check(spec, geometry: MsaGeometry, r: float, w: float, S: int, E: float, L: float,
                                    x=None, trials: int = 100, seed: int = 0, h: float = 0.05,
                                    gauge: Gauge | None = None, workers: int | None = None) -> ImplicationReport:
    """Sample pairs ``v = V_0`` (kernel truncated at scale ``L``) and ``v' = V``, and test the implication

    frame-regular(v) and non-resonant(v) and approximation(v of v') => regular(v').
    """
    d, N, nu = spec.d, geometry.N, geometry.nu
    lhs = (S - nu) * r
    rhs = (nu - 1) * (d - 1) * S + nu * w * (S + 1)
    if not lhs > rhs:
        raise MsaError(f"(S - nu) r = {lhs:.6g} must exceed (nu-1)(d-1)S + nu w (S+1) = {rhs:.6g}")
    from gaussloc.field import LadderSampler, truncation_ladder

    x = (0.0,) * d if x is None else tuple(np.atleast_1d(x))
    grid = Grid.dirichlet_cube(x, L, h)
    ladder = truncation_ladder(spec, N, nu, L, 0)
    sampler = LadderSampler(ladder, grid, 0)

    def one(i):
        draw = sampler.sample(trial_rng(seed, i))
        op_v = assemble_on_grid(grid, draw[0], gauge)
        op_vp = assemble_on_grid(grid, draw["infinity"], gauge)
        fr = frame_regularity_probe(op_v, geometry, r, E, L, S, x)
        nr = nonresonance_probe(op_v, geometry, w, E, L, x)
        ap = approximation_probe(op_v, op_vp, r, E, L, x, geometry)
        concl = regularity_probe(op_vp, geometry, r, E, L, x)
        return i, fr, nr, ap, concl

    rows = map_trials(one, range(trials), workers)
    held = concl_count = 0
    rates = {"frame-regular": 0, "non-resonant": 0, "approximation": 0}
    bad = []
    for i, fr, nr, ap, concl in rows:
        rates["frame-regular"] += fr.outcome
        rates["non-resonant"] += nr.outcome
        rates["approximation"] += ap.outcome
        concl_count += concl.outcome
        if fr.outcome and nr.outcome and ap.outcome:
            held += 1
            if not concl.outcome:
                bad.append({"trial": i, "seed": seed, **{p.event: p.to_dict() for p in (fr, nr, ap, concl)}})
    rates = {k: v / trials for k, v in rates.items()}
    return ImplicationReport(trials, held, concl_count, rates, tuple(bad))


@dataclass(frozen=True)
class IndependenceReport:
    K: int
    marginals: tuple[ProportionEstimate, ...]
    marginal_threshold: float  # (L/N)^(-rho/nu)
    marginals_ok: bool
    joint: ProportionEstimate
    threshold: float  # (L/N)^(-K theta rho/nu)
    below_threshold: bool
    product: float
    product_stderr: float
    compact: bool
    product_ok: bool | None  # None: long-range covariance, report only

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("K", "marginal_threshold", "marginals_ok", "threshold",
                                             "below_threshold", "product", "product_stderr", "compact",
                                             "product_ok")}
        out["marginals"] = [m.to_dict() for m in self.marginals]
        out["joint"] = self.joint.to_dict()
        return out


def covariance_support(spec) -> float | None:
    """Sup-norm range beyond which ``C`` vanishes exactly, or None for long-range covariances."""
    if spec.name == "bump":
        return 2 * spec.params["radius"]
    return None


@dataclass(frozen=True)
class ThresholdEvent:
    """``{sup_{Lambda_edge(center)} |V| >= level}``."""

    center: tuple[float, ...]
    edge: float
    level: float


def independence_probe(spec, K: int, L: float, rho: float, theta: float, events, trials: int, seed: int,
                       geometry: MsaGeometry = MsaGeometry(), h: float = 0.1) -> IndependenceReport:
    """Empirical joint frequency of ``K`` separated threshold events against ``(L/N)^(-K theta rho/nu)``."""
    events = [e if isinstance(e, ThresholdEvent) else ThresholdEvent(tuple(np.atleast_1d(e[0])), e[1], e[2])
              for e in events]
    N, nu, d = geometry.N, geometry.nu, spec.d
    if K < 2 or len(events) != K:
        raise MsaError(f"need K >= 2 events, got K={K} and {len(events)} events")
    if trials < 30:
        raise MsaError("need at least 30 trials")
    sep_min = L / (4 * N)
    vol_max = (L / N) ** (d / nu)
    for a, b in itertools.combinations(events, 2):
        gap = np.max(np.abs(np.subtract(a.center, b.center))) - (a.edge + b.edge) / 2
        if gap < sep_min:
            raise MsaError(f"events at {a.center} and {b.center} are {gap:.4g} apart, need >= {sep_min:.4g}")
    for e in events:
        if e.edge**d > vol_max * (1 + 1e-12):
            raise MsaError(f"event box volume {e.edge**d:.4g} exceeds {vol_max:.4g}")
    from gaussloc.field import CirculantSampler

    cs = np.array([e.center for e in events])
    lo = np.min(cs - np.array([e.edge for e in events])[:, None] / 2, axis=0)
    hi = np.max(cs + np.array([e.edge for e in events])[:, None] / 2, axis=0)
    edge = float(np.max(hi - lo)) + 4 * h
    grid = Grid.dirichlet_cube(tuple((lo + hi) / 2), edge, h)
    pts = grid.points()
    masks = [np.all(np.abs(pts - np.asarray(e.center)) <= e.edge / 2, axis=1) for e in events]
    sampler = CirculantSampler(spec, grid)
    hits = np.zeros((trials, K), dtype=bool)
    batch = 64
    rng = trial_rng(seed, 0)
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        vals = sampler.sample_many(m, rng).reshape(m, -1)
        for k, (e, mk) in enumerate(zip(events, masks)):
            hits[done:done + m, k] = np.max(np.abs(vals[:, mk]), axis=1) >= e.level
        done += m
    marg = tuple(wilson_interval(int(hits[:, k].sum()), trials) for k in range(K))
    joint_hits = int(np.all(hits, axis=1).sum())
    joint = wilson_interval(joint_hits, trials)
    mthr = (L / N) ** (-rho / nu)
    thr = (L / N) ** (-K * theta * rho / nu)
    ps = np.array([m.p for m in marg])
    prod = float(np.prod(ps))
    # delta-method stderr of the product of independent marginal estimates
    prod_var = sum((prod / p) ** 2 * p * (1 - p) / trials for p in ps if p > 0)
    se = math.sqrt(joint.p * (1 - joint.p) / trials + prod_var)
    support = covariance_support(spec)
    compact = False
    if support is not None:
        gaps = [np.max(np.abs(np.subtract(a.center, b.center))) - (a.edge + b.edge) / 2
                for a, b in itertools.combinations(events, 2)]
        compact = min(gaps) >= support
    product_ok = bool(abs(joint.p - prod) <= 4 * max(se, 1.0 / trials)) if compact else None
    return IndependenceReport(K, marg, mthr, bool(np.all(ps <= mthr)), joint, thr, bool(joint.p <= thr), prod, se,
                              compact, product_ok)


@dataclass(frozen=True)
class LocalizationReport:
    E: float
    lengths: tuple[float, ...]
    beta: float
    norms: dict  # L -> array over trials
    iprs: dict  # L -> array (trials, states)
    free_iprs: dict  # L -> array (states,)

    def median_norms(self) -> np.ndarray:
        return np.array([np.median(self.norms[L]) for L in self.lengths])

    def median_iprs(self) -> np.ndarray:
        return np.array([np.median(self.iprs[L]) for L in self.lengths])

    def free_median_iprs(self) -> np.ndarray:
        return np.array([np.median(self.free_iprs[L]) for L in self.lengths])

    def ipr_slope(self, free: bool = False) -> float:
        """Slope of log median IPR against log volume (free plane-wave-like states: about -1)."""
        y = np.log(self.free_median_iprs() if free else self.median_iprs())
        return float(np.polyfit(np.log(np.asarray(self.lengths)), y, 1)[0])

    def to_dict(self) -> dict:
        return {"E": self.E, "lengths": list(self.lengths), "beta": self.beta,
                "median_norms": self.median_norms().tolist(), "median_iprs": self.median_iprs().tolist(),
                "free_median_iprs": self.free_median_iprs().tolist(), "ipr_slope": self.ipr_slope(),
                "free_ipr_slope": self.ipr_slope(free=True)}


def decaying_probe(grid: Grid, x, beta: float, phi0: float = 1.0) -> np.ndarray:
    """``phi0 (1 + |y - x|)^-beta`` on the grid points."""
    r = np.linalg.norm(grid.points() - np.asarray(x)[None, :], axis=1)
    return phi0 * (1 + r) ** (-beta)


def ipr(vectors: np.ndarray) -> np.ndarray:
    """``sum |psi|^4 / (sum |psi|^2)^2`` per column."""
    a = np.abs(np.asarray(vectors)) ** 2
    return np.sum(a**2, axis=0) / np.sum(a, axis=0) ** 2


def _lowest_states(op: DiscreteOperator, k: int) -> np.ndarray:
    if op.d == 1 and op.is_real:
        from scipy.linalg import eigh_tridiagonal

        dg = op.matrix.diagonal().real
        off = op.matrix.diagonal(1).real
        _, Q = eigh_tridiagonal(dg, off, select="i", select_range=(0, k - 1))
        return Q
    if op.size <= 4000:
        from scipy.linalg import eigh

        _, Q = eigh(op.dense(), subset_by_index=(0, k - 1))
        return Q
    from scipy.sparse.linalg import eigsh

    _, Q = eigsh(op.matrix, k=k, which="SA")
    return Q


def resolvent_probe_norm(op: DiscreteOperator, E: float, phi: np.ndarray) -> float:
    """``sup_eta ||(H - E - i eta)^-1 phi||`` under the operator module's eta policy."""
    _, etas = _eta_ladder(op, E, None)
    return max(float(np.linalg.norm(Resolvent(op, complex(E, et)).solve(phi.astype(complex)))) for et in etas)


def localization_diagnostic(spec, E: float, lengths, trials: int, seed: int = 0, h: float = 0.1,
                            beta: float | None = None, phi0: float = 1.0, states: int = 4,
                            gauge: Gauge | None = None) -> LocalizationReport:
    """Resolvent-applied-to-decaying-probe norms and low-lying IPRs across a ladder of volumes."""
    d = spec.d
    beta = 2 * d + 1.0 if beta is None else float(beta)
    if not beta > 2 * d + 0.75:
        raise MsaError(f"decay exponent beta={beta} must exceed 2d + 3/4")
    if trials < 1:
        raise MsaError("need at least one trial")
    from gaussloc.field import CirculantSampler

    lengths = tuple(float(L) for L in lengths)
    x = (0.0,) * d
    norms, iprs, free = {}, {}, {}
    for j, L in enumerate(lengths):
        grid = Grid.dirichlet_cube(x, L, h)
        phi = decaying_probe(grid, x, beta, phi0)
        sampler = CirculantSampler(spec, grid)
        nv, iv = [], []
        for t in range(trials):
            op = assemble_on_grid(grid, sampler.sample(trial_rng(seed, 10_000 * j + t)), gauge)
            nv.append(resolvent_probe_norm(op, E, phi))
            iv.append(ipr(_lowest_states(op, states)))
        norms[L], iprs[L] = np.array(nv), np.array(iv)
        free[L] = ipr(_lowest_states(assemble_on_grid(grid, 0.0, gauge), states))
    return LocalizationReport(float(E), lengths, beta, norms, iprs, free)
