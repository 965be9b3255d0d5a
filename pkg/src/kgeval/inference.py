"""Soft-logic MAP inference over an evaluation coupling graph.

Each grounded constraint ``b1 & ... & bm -> h`` is relaxed with the
Lukasiewicz t-norm and scored by the squared hinge

    psi = max(0, b1 + ... + bm - (m - 1) - h) ** 2

The energy is ``sum_j theta_j * psi_j``.  MAP inference minimises it over
``[0, 1]^n`` with crowd evidence clamped; since every term is the square of
a hinge of an affine map the problem is convex and smooth, and we solve it
by projected gradient descent with Barzilai-Borwein step guesses and a
backtracking (sufficient decrease) line search.  scipy's L-BFGS-B is
available as a faster first pass; its output is polished by the same
projected-gradient loop so both paths share one stopping certificate.
Unclamped scores start at the neutral value 0.5.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import optimize

from .rules import ECG, GroundedConstraint

NEUTRAL = 0.5
UNDECIDED = -1
SOLVERS = ("pgd", "lbfgsb")


@dataclass(frozen=True)
class InferenceConfig:
    tau: float = 0.8
    solver_tol: float = 1e-6
    max_iters: int = 10000
    solver: str = "pgd"

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")
        if not 0.5 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0.5, 1], got {self.tau}")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


@dataclass
class InferenceResult:
    scores: np.ndarray
    labels: np.ndarray
    clamp_mask: np.ndarray
    energy: float
    solver_iters: int
    grad_residual: float
    converged: bool
    energy_trace: list[float] | None = field(default=None, repr=False)

    @property
    def inferable(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNDECIDED)

    @property
    def inferable_size(self) -> int:
        return int(np.count_nonzero(self.labels != UNDECIDED))

    def to_json(self) -> dict:
        return {
            "bets": [
                {
                    "id": i,
                    "score": float(s),
                    "label": None if lab == UNDECIDED else int(lab),
                    "inferable": bool(lab != UNDECIDED),
                    "clamped": bool(c),
                }
                for i, (s, lab, c) in enumerate(zip(self.scores, self.labels, self.clamp_mask))
            ],
            "energy": float(self.energy),
            "iters": int(self.solver_iters),
            "residual": float(self.grad_residual),
            "converged": bool(self.converged),
        }


def lukasiewicz_body(values) -> float:
    """Lukasiewicz conjunction of ``values``: ``max(0, sum(v) - (m - 1))``."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("empty conjunction")
    for v in vals:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"truth value {v} outside [0, 1]")
    return max(0.0, sum(vals) - (len(vals) - 1))


def potential(gc: GroundedConstraint, scores) -> float:
    body = lukasiewicz_body(scores[h] for h in gc.body)
    return max(0.0, body - float(scores[gc.head])) ** 2


def _hinges(ecg: ECG, x: np.ndarray) -> np.ndarray:
    return np.maximum(ecg.A @ x + ecg.offsets, 0.0)


def energy(ecg: ECG, x) -> float:
    """Weighted squared-hinge energy of assignment ``x``."""
    if len(ecg) == 0:
        return 0.0
    r = _hinges(ecg, np.asarray(x, dtype=float))
    return float(ecg.weights @ (r * r))


def energy_grad(ecg: ECG, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if len(ecg) == 0:
        return np.zeros_like(x)
    r = _hinges(ecg, x)
    return 2.0 * (ecg.AT @ (ecg.weights * r))


def _value_grad(ecg: ECG, x: np.ndarray):
    r = _hinges(ecg, x)
    wr = ecg.weights * r
    return float(wr @ r), 2.0 * (ecg.AT @ wr)


def check_evidence(ecg: ECG, evidence: Mapping[int, int]) -> None:
    for h, v in evidence.items():
        if not 0 <= int(h) < ecg.n_bets or int(h) != h:
            raise ValueError(f"evidence names unknown BET {h!r}")
        if v not in (0, 1):
            raise ValueError(f"evidence for BET {h} must be 0 or 1, got {v!r}")


def map_solve(ecg: ECG, evidence: Mapping[int, int], cfg: InferenceConfig = InferenceConfig(),
              trace: bool = False) -> InferenceResult:
    """Minimise the energy with ``evidence`` clamped and threshold the result.

    Parameters
    ----------
    ecg : ECG
    evidence : mapping of BET id to 0/1
        Crowd labels; these coordinates never move.
    cfg : InferenceConfig
    trace : bool
        Record the energy after every accepted step in ``energy_trace``.

    Returns
    -------
    InferenceResult
        ``converged`` is False when ``max_iters`` ran out before the
        projected-gradient residual reached ``solver_tol``.
    """
    check_evidence(ecg, evidence)
    n = ecg.n_bets
    x = np.full(n, NEUTRAL)
    clamp = np.zeros(n, dtype=bool)
    for h, v in evidence.items():
        x[int(h)] = float(v)
        clamp[int(h)] = True
    free = ~clamp

    history: list[float] | None = [] if trace else None
    if len(ecg) == 0 or not free.any():
        f = energy(ecg, x)
        if history is not None:
            history.append(f)
        labels, _ = threshold_labels(x, cfg.tau, evidence)
        return InferenceResult(x, labels, clamp, f, 0, 0.0, True, history)

    if history is not None:
        history.append(energy(ecg, x))
    it = 0
    if cfg.solver == "lbfgsb":
        x, it = _lbfgsb(ecg, x, clamp, cfg, history)
    x, f, residual, more = _pgd(ecg, x, clamp, cfg, history, cfg.max_iters - it)
    it += more
    labels, _ = threshold_labels(x, cfg.tau, evidence)
    return InferenceResult(x, labels, clamp, f, it, residual, residual <= cfg.solver_tol, history)


def _residual(x, g) -> float:
    return float(np.max(np.abs(np.clip(x - g, 0.0, 1.0) - x))) if len(x) else 0.0


def _pgd(ecg: ECG, x, clamp, cfg: InferenceConfig, history, budget: int):
    """Projected gradient with Barzilai-Borwein guesses and backtracking."""
    f, g = _value_grad(ecg, x)
    g[clamp] = 0.0
    step = 1.0
    residual = _residual(x, g)
    it = 0
    while residual > cfg.solver_tol and it < budget:
        while True:
            x_new = np.clip(x - step * g, 0.0, 1.0)
            d = x_new - x
            f_new, g_new = _value_grad(ecg, x_new)
            if f_new <= f + g @ d + (d @ d) / (2.0 * step) or step < 1e-14:
                break
            step *= 0.5
        g_new[clamp] = 0.0
        y = g_new - g
        sy = float(d @ y)
        step = float(np.clip((d @ d) / sy, 1e-10, 1e10)) if sy > 0 else min(step * 2.0, 1e10)
        if f_new > f:
            # line search stalled on round-off; keep the better point
            break
        x, f, g = x_new, f_new, g_new
        it += 1
        if history is not None:
            history.append(f)
        residual = _residual(x, g)
    return x, f, residual, it


def _lbfgsb(ecg: ECG, x, clamp, cfg: InferenceConfig, history):
    """Quasi-Newton pass over the free coordinates; the caller polishes with PGD."""
    free = np.flatnonzero(~clamp)
    base = x.copy()

    def fg(z):
        base[free] = z
        f, g = _value_grad(ecg, base)
        return f, g[free]

    def record(z):
        base[free] = z
        history.append(energy(ecg, base))

    res = optimize.minimize(
        fg, x[free], jac=True, method="L-BFGS-B", bounds=optimize.Bounds(0.0, 1.0),
        callback=record if history is not None else None,
        options={"gtol": cfg.solver_tol * 0.1, "ftol": 0.0, "maxiter": cfg.max_iters},
    )
    out = x.copy()
    out[free] = np.clip(res.x, 0.0, 1.0)
    return out, int(res.nit)


def threshold_labels(scores, tau: float, evidence: Mapping[int, int] | None = None):
    """Confident labels from soft scores.

    A BET is labelled 1 when its score is at least ``tau``, 0 when the
    complementary score ``1 - score`` is at least ``tau``, and undecided
    otherwise.  Clamped BETs always carry their evidence label.

    Returns
    -------
    labels : ndarray of int8
        1, 0 or ``UNDECIDED`` (-1) per BET.
    inferable : ndarray of int
        Ids of the decided BETs.
    """
    if not tau > 0.5:
        raise ValueError(f"tau must exceed 0.5 so the label cases cannot overlap, got {tau}")
    s = np.asarray(scores, dtype=float)
    labels = np.full(s.shape, UNDECIDED, dtype=np.int8)
    labels[s >= tau] = 1
    labels[(1.0 - s) >= tau] = 0
    if evidence:
        for h, v in evidence.items():
            labels[int(h)] = int(v)
    return labels, np.flatnonzero(labels != UNDECIDED)


def class_mass_normalize(scores, q1: float, clamp_mask=None) -> np.ndarray:
    """Rescale unclamped scores so class proportions follow ``q1``.

    With ``p(1|h) = score`` and ``p(0|h) = 1 - score``, each unclamped score
    becomes ``(q1/p1) s / ((q1/p1) s + (q0/p0) (1 - s))`` where ``p1`` is the
    mean unclamped score, ``p0 = 1 - p1`` and ``q0 = 1 - q1``.  A class with
    ``q_c = 0`` gets zero weight.
    """
    if not 0.0 <= q1 <= 1.0:
        raise ValueError(f"q1 must lie in [0, 1], got {q1}")
    s = np.array(scores, dtype=float)
    mask = np.zeros(s.shape, dtype=bool) if clamp_mask is None else np.asarray(clamp_mask, dtype=bool)
    free = ~mask
    if not free.any():
        return s
    p1 = float(s[free].mean())
    p0 = 1.0 - p1
    q0 = 1.0 - q1
    for q, p in ((q1, p1), (q0, p0)):
        if q > 0 and p <= 0:
            raise ValueError("degenerate class mass: a class with positive target mass has none in the scores")
    w1 = q1 / p1 if q1 > 0 else 0.0
    w0 = q0 / p0 if q0 > 0 else 0.0
    num = w1 * s[free]
    den = num + w0 * (1.0 - s[free])
    out = s[free].copy()
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    s[free] = np.clip(out, 0.0, 1.0)
    return s
