"""Locate exceptional points in the complex coupling plane.

The primary finder is a recursive monodromy quadtree: a cell whose boundary
circuit permutes branch labels contains branch points, and a single
transposition marks exactly one EP (of the generic square-root kind).
Transposition cells are refined by a Newton iteration on the analytic pair
function s(lambda) = (E_a - E_b)^2, which has a simple zero at the EP, with
4-way monodromy subdivision as the fallback and a final monodromy
verification at the localization tolerance.

A resultant-based discriminant oracle (see discriminant.py, re-exported
here) provides the independent cross-check at small dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .eigentrack import (
    EPOnPathError,
    eigvals,
    eigvals_many,
    monodromy,
    trace_path,
)
from .spinmodels import HamiltonianFamily, evaluate_at

__all__ = [
    "ExceptionalPoint",
    "ScanRegion",
    "ScanResult",
    "UnresolvedCell",
    "CrossingAssignment",
    "RefineError",
    "scan_region",
    "refine_ep",
    "discriminant_eps",
    "assign_avoided_crossing",
    "phase_rigidity",
    "nearest_ep",
    "locate_nearest_ep",
    "eig_with_slopes",
    "pair_newton",
    "disc_newton",
    "log_discriminant",
    "winding_count",
    "hamiltonian_scale",
]

_DEFAULT_TOL = 1e-10
_RESIDUAL_SCALE = 1e-8


class RefineError(RuntimeError):
    """Refinement lost the branch point; carries the offending cell."""

    def __init__(self, message: str, rect=None):
        super().__init__(message)
        self.rect = rect


@dataclass(frozen=True)
class ExceptionalPoint:
    """A localized square-root branch point in the upper half plane.

    ``levels`` holds the 1-based real-axis labels (n, n') of the coalescing
    pair when the perpendicular-path assignment has been made, else None.
    ``residual`` is the minimal pairwise eigenvalue gap at ``lam``.
    """

    lam: complex
    residual: float
    cell_size: float
    method: str
    levels: tuple[int, int] | None = None
    merged_from: int = 1

    def __post_init__(self):
        if not self.lam.imag > 0:
            raise ValueError(f"EP must lie in the upper half plane, got {self.lam}")

    def as_dict(self) -> dict:
        return {
            "re": float(self.lam.real),
            "im": float(self.lam.imag),
            "levels": list(self.levels) if self.levels else None,
            "residual": float(self.residual),
            "method": self.method,
        }


@dataclass(frozen=True)
class ScanRegion:
    """Upper-half-plane rectangle with subdivision limits.

    ``log_im`` switches the quadtree to geometric grading in Im lambda,
    which is what first-order scans spanning many decades need.
    """

    re_min: float
    re_max: float
    im_min: float
    im_max: float
    max_depth: int = 40
    min_cell: float | None = None
    log_im: bool = False

    def __post_init__(self):
        if not self.re_max > self.re_min:
            raise ValueError("need re_max > re_min")
        if not self.im_min > 0:
            raise ValueError("im_min must be positive (the real axis is excluded)")
        if not self.im_max > self.im_min:
            raise ValueError("need im_max > im_min")

    @property
    def diameter(self) -> float:
        return math.hypot(self.re_max - self.re_min, self.im_max - self.im_min)

    @property
    def rect(self) -> tuple[float, float, float, float]:
        return (self.re_min, self.re_max, self.im_min, self.im_max)


@dataclass(frozen=True)
class UnresolvedCell:
    """A cell the scan could not classify within its depth/size limits."""

    rect: tuple[float, float, float, float]
    kind: str                      # "small-gap" | "multi" | "boundary"
    permutation: tuple[int, ...] | None = None


@dataclass
class ScanResult:
    eps: list[ExceptionalPoint]
    unresolved: list[UnresolvedCell]
    region: ScanRegion
    tol: float
    cells_visited: int = 0

    def __iter__(self):
        return iter(self.eps)

    def __len__(self):
        return len(self.eps)


def hamiltonian_scale(family: HamiltonianFamily) -> float:
    """Spectral norm of H0, the reference scale for residual tolerances."""
    return float(np.abs(np.linalg.eigvalsh(family.H0)).max())


# ---------------------------------------------------------------------------
# eigenvalue slopes, pair Newton, discriminant winding


def eig_with_slopes(family: HamiltonianFamily, lam: complex):
    """Eigenvalues and their analytic lambda-derivatives at one point.

    For the complex symmetric H(lambda) the left eigenvectors are the
    transposes of the right ones, so dE_n/dlambda = (v_n^T V v_n)/(v_n^T v_n).
    """
    E, R = np.linalg.eig(evaluate_at(family, complex(lam)))
    num = np.einsum("in,in->n", R, family.V @ R)
    den = np.einsum("in,in->n", R, R)
    with np.errstate(divide="ignore", invalid="ignore"):
        dE = num / den
    return E, dE


def _closest_pair_indices(E: np.ndarray, hints=None) -> tuple[int, int]:
    if hints is not None:
        h1, h2 = hints
        a = int(np.argmin(np.abs(E - h1)))
        b = int(np.argmin(np.abs(E - h2)))
        if a != b:
            return a, b
    D = np.abs(E[:, None] - E[None, :])
    np.fill_diagonal(D, np.inf)
    a, b = np.unravel_index(np.argmin(D), D.shape)
    return int(a), int(b)


def pair_newton(family: HamiltonianFamily, lam0: complex, hints=None,
                max_iter: int = 60, step_cap: float | None = None):
    """Newton iteration on s(lambda) = (E_a - E_b)^2 toward its simple zero.

    Runs to the double-precision noise floor of s (not merely to a position
    tolerance) so the residual gap at the returned point is as small as the
    arithmetic allows.  Returns (lambda, |s|, pair values, iterations).
    """
    lam = complex(lam0)
    best = (np.inf, lam, hints)
    for it in range(max_iter):
        E, dE = eig_with_slopes(family, lam)
        a, b = _closest_pair_indices(E, hints)
        diff = E[a] - E[b]
        s = diff * diff
        if abs(s) < best[0]:
            best = (abs(s), lam, (E[a], E[b]))
        with np.errstate(invalid="ignore"):
            ds = 2.0 * diff * (dE[a] - dE[b])
        if not np.isfinite(ds) or ds == 0:
            break
        step = -s / ds
        if step_cap is not None and abs(step) > step_cap:
            step *= step_cap / abs(step)
        hints = (E[a], E[b])
        lam = lam + step
        if abs(step) <= 5e-16 * max(1.0, abs(lam)):
            break
    return best[1], best[0], best[2], it + 1


def log_discriminant(E: np.ndarray) -> tuple[float, float]:
    """(log magnitude, wrapped phase) of prod_{n<n'} (E_n - E_n')^2."""
    iu = np.triu_indices(len(E), k=1)
    diffs = (E[:, None] - E[None, :])[iu]
    logmag = 2.0 * float(np.log(np.abs(diffs)).sum())
    phase = 2.0 * float(np.angle(diffs).sum())
    return logmag, math.remainder(phase, 2.0 * math.pi)


def disc_newton(family: HamiltonianFamily, lam0: complex,
                max_iter: int = 50, rtol: float = 5e-15,
                step_cap: float | None = None):
    """Newton step on the characteristic discriminant via its log derivative.

    d/dlambda log disc = sum_{n<n'} 2 (dE_n - dE_n')/(E_n - E_n'); the update
    lambda -= 1/(that sum) converges to the nearest zero of disc, i.e. the
    nearest EP.  One eigendecomposition per step.  Returns (lambda, minimal
    pair gap at lambda, iterations) or None when the iteration diverges.
    """
    lam = complex(lam0)
    for it in range(max_iter):
        E, dE = eig_with_slopes(family, lam)
        diffs = E[:, None] - E[None, :]
        np.fill_diagonal(diffs, np.inf)
        g = 2.0 * ((dE[:, None] - dE[None, :]) / diffs)[np.triu_indices(len(E), 1)].sum()
        if g == 0 or not np.isfinite(g):
            return None
        step = -1.0 / g
        if step_cap is not None and abs(step) > step_cap:
            step *= step_cap / abs(step)
        lam = lam + step
        if abs(step) <= rtol * max(1.0, abs(lam)):
            D = np.abs(E[:, None] - E[None, :])
            np.fill_diagonal(D, np.inf)
            return lam, float(D.min()), it + 1
    return None


def _disc_phases(E_arr: np.ndarray) -> np.ndarray:
    """Wrapped phase of prod (E_n - E_n')^2 for stacked spectra."""
    n, d = E_arr.shape
    iu = np.triu_indices(d, k=1)
    diffs = (E_arr[:, :, None] - E_arr[:, None, :])[:, iu[0], iu[1]]
    phase = 2.0 * np.angle(diffs).sum(axis=1)
    return np.remainder(phase + math.pi, 2.0 * math.pi) - math.pi


def winding_count(family: HamiltonianFamily, rect: Sequence[float],
                  init_per_side: int = 48, max_points: int = 200000) -> int:
    """Zeros of the characteristic discriminant inside a rectangle.

    Argument-principle count: the discriminant is a polynomial in lambda, so
    its winding number around the boundary equals the number of enclosed
    zeros.  A generic EP is a simple zero and counts once; an eigenvalue
    coincidence without eigenvector coalescence (possible between symmetry
    sectors of a reducible family) is a double zero and counts twice.
    Phase steps are bisected, batched, until each is below pi/2.
    """
    re0, re1, im0, im1 = map(float, rect)
    corners = np.array([complex(re0, im0), complex(re1, im0),
                        complex(re1, im1), complex(re0, im1),
                        complex(re0, im0)])

    def lam_of(t: np.ndarray) -> np.ndarray:
        k = np.clip(t.astype(int), 0, 3)
        return corners[k] + (t - k) * (corners[k + 1] - corners[k])

    t_arr = np.concatenate([k + np.linspace(0.0, 1.0, init_per_side,
                                            endpoint=False)
                            for k in range(4)] + [np.array([4.0])])
    phases = _disc_phases(eigvals_many(family, lam_of(t_arr)))
    for _ in range(80):
        dphi = np.remainder(np.diff(phases) + math.pi, 2.0 * math.pi) - math.pi
        bad = np.nonzero(np.abs(dphi) > 0.5 * math.pi)[0]
        if bad.size == 0:
            break
        if len(t_arr) + bad.size > max_points:
            raise RefineError("winding refinement exceeded its budget",
                              rect=tuple(rect))
        mid = 0.5 * (t_arr[bad] + t_arr[bad + 1])
        ph_mid = _disc_phases(eigvals_many(family, lam_of(mid)))
        t_arr = np.concatenate([t_arr, mid])
        order = np.argsort(t_arr, kind="stable")
        t_arr = t_arr[order]
        phases = np.concatenate([phases, ph_mid])[order]
    else:
        raise RefineError("winding refinement did not settle", rect=tuple(rect))
    total = float(dphi.sum())
    w = total / (2.0 * math.pi)
    if abs(w - round(w)) > 0.05:
        raise RefineError(f"winding number {w:.3f} is not close to an integer",
                          rect=tuple(rect))
    return int(round(w))


def _safe_winding(family, rect, init_per_side: int = 48) -> int:
    """winding_count with deterministic rectangle perturbation when a zero
    sits (numerically) on the perimeter."""
    re0, re1, im0, im1 = rect
    w, h = re1 - re0, im1 - im0
    # Expansions only: shrinking could push a perimeter zero out of this
    # cell and out of its neighbour at once.  Overlap merely double-finds
    # the point; deduplication merges it.
    tweaks = [
        (0.0, 0.0, 0.0, 0.0),
        (-0.0029 * w, 0.0047 * w, -0.0019 * h, 0.0031 * h),
        (-0.0113 * w, 0.0071 * w, -0.0083 * h, 0.0127 * h),
    ]
    last = None
    for dr0, dr1, di0, di1 in tweaks:
        r = (re0 + dr0, re1 + dr1, max(im0 + di0, 0.25 * im0), im1 + di1)
        try:
            return winding_count(family, r, init_per_side=init_per_side)
        except RefineError as exc:
            last = exc
    raise last


# ---------------------------------------------------------------------------
# monodromy quadtree


def _safe_monodromy(family, rect, initial_points=256):
    """Monodromy with small deterministic perturbations when an EP sits on
    the perimeter."""
    re0, re1, im0, im1 = rect
    w, h = re1 - re0, im1 - im0
    tweaks = [
        (0.0, 0.0, 0.0, 0.0),
        (-0.0031 * w, 0.0043 * w, -0.0017 * h, 0.0029 * h),
        (0.0057 * w, -0.0023 * w, 0.0041 * h, -0.0013 * h),
        (-0.0011 * w, -0.0067 * w, 0.0007 * h, 0.0053 * h),
    ]
    last = None
    for dr0, dr1, di0, di1 in tweaks:
        r = (re0 + dr0, re1 + dr1, max(im0 + di0, 0.25 * im0), im1 + di1)
        try:
            return monodromy(family, r, initial_points=initial_points)
        except EPOnPathError as exc:
            last = exc
    raise last


def _split_cell(rect, log_im: bool):
    re0, re1, im0, im1 = rect
    rm = 0.5 * (re0 + re1)
    im_mid = math.sqrt(im0 * im1) if log_im else 0.5 * (im0 + im1)
    return [
        (re0, rm, im0, im_mid), (rm, re1, im0, im_mid),
        (re0, rm, im_mid, im1), (rm, re1, im_mid, im1),
    ]


def _cell_diameter(rect) -> float:
    return math.hypot(rect[1] - rect[0], rect[3] - rect[2])


def _probe_min_gap(family, rect, n: int = 5) -> float:
    """Minimal pairwise gap on an n x n interior grid of the cell."""
    re0, re1, im0, im1 = rect
    fr = (np.arange(n) + 1.0) / (n + 1.0)
    res = re0 + fr * (re1 - re0)
    ims = im0 * (im1 / im0) ** fr if im0 > 0 and im1 / im0 > 8 else im0 + fr * (im1 - im0)
    lams = (res[:, None] + 1j * ims[None, :]).ravel()
    E = eigvals_many(family, lams)
    D = np.abs(E[:, :, None] - E[:, None, :])
    idx = np.arange(E.shape[1])
    D[:, idx, idx] = np.inf
    return float(D.min())


def _residual_at(family, lam: complex) -> float:
    E = eigvals(evaluate_at(family, complex(lam)))
    D = np.abs(E[:, None] - E[None, :])
    np.fill_diagonal(D, np.inf)
    return float(D.min())


def _verify_transposition(family, lam: complex, tol: float) -> bool:
    h = 0.5 * tol
    im0 = lam.imag - h
    if im0 <= 0:
        im0 = 0.5 * lam.imag
    try:
        m = _safe_monodromy(
            family, (lam.real - h, lam.real + h, im0, lam.imag + h),
            initial_points=64)
    except EPOnPathError:
        return False
    return m.is_transposition


def _mp_polish(family, lam, hints, dps: int = 40):
    """Re-converge an EP with the multiprecision secant engine.

    Double-precision eigensolvers cannot resolve pair gaps below roughly
    sqrt(eps)*norm(H); when the residual tolerance sits under that floor
    the final polish has to run in extended precision.  Returns the double
    rounding of the converged position and the pair gap at it.
    """
    from .highprec import family_mp_matrices, mp_secant_pair
    H0, V = family_mp_matrices(family, dps)
    lam_mp, s_abs, _pair = mp_secant_pair(H0, V, lam, hints or (0.0, 1.0),
                                          dps=dps)
    lam2 = complex(float(lam_mp.real), float(lam_mp.imag))
    return lam2, float(s_abs) ** 0.5


def _polish_point(family, lam, pair, residual_tol):
    """(lam, residual) after enforcing the residual tolerance, mp fallback
    included; None when even extended precision cannot meet it."""
    residual = _residual_at(family, lam)
    if residual <= residual_tol:
        return lam, residual
    lam2, residual2 = _mp_polish(family, lam, pair)
    if residual2 > residual_tol:
        return None
    if abs(lam2 - lam) > 1e-6 * (1.0 + abs(lam)):
        return None   # secant ran away; distrust it
    return lam2, residual2


def _try_newton(family, rect, tol, residual_tol):
    """Newton refinement from the cell center; None when it wanders off."""
    re0, re1, im0, im1 = rect
    center = complex(0.5 * (re0 + re1), 0.5 * (im0 + im1))
    diam = _cell_diameter(rect)
    lam, s_best, pair, _ = pair_newton(family, center, step_cap=2.0 * diam)
    # Strict containment, slack only for a branch point on the cell edge.
    # A generous pad would accept a neighbouring EP just outside and mask
    # the cell's true occupant.
    pad = max(2.0 * tol, 1e-9 * diam)
    inside = (re0 - pad <= lam.real <= re1 + pad and
              max(im0 - pad, 0.0) < lam.imag <= im1 + pad)
    if not inside:
        return None
    polished = _polish_point(family, lam, pair, residual_tol)
    if polished is None:
        return None
    lam, residual = polished
    if not _verify_transposition(family, lam, tol):
        return None
    return ExceptionalPoint(lam=lam, residual=residual, cell_size=tol,
                            method="monodromy")


def _refine_cell(family, rect, tol, residual_tol, log_im, polish, depth=0
                 ) -> list[ExceptionalPoint]:
    """Refine a non-identity cell to one or more EPs."""
    if depth > 120:
        raise RefineError("refinement recursion exceeded its depth cap", rect)
    if polish:
        ep = _try_newton(family, rect, tol, residual_tol)
        if ep is not None:
            return [ep]
    if _cell_diameter(rect) <= tol:
        lam = complex(0.5 * (rect[0] + rect[1]), 0.5 * (rect[2] + rect[3]))
        if not polish:
            # literal subdivision semantics: the residual is the honest
            # cell-center gap, which scales like sqrt(cell size)
            return [ExceptionalPoint(lam=lam, residual=_residual_at(family, lam),
                                     cell_size=_cell_diameter(rect),
                                     method="monodromy")]
        lam2, s_abs, pair, _ = pair_newton(family, lam, step_cap=20.0 * tol)
        if abs(lam2 - lam) > 4.0 * tol:
            lam2, pair = lam, None
        polished = _polish_point(family, lam2, pair, residual_tol)
        if polished is None:
            raise RefineError(
                f"cell converged but the residual tolerance "
                f"{residual_tol:.3e} is unreachable at its center", rect)
        lam2, residual = polished
        return [ExceptionalPoint(lam=lam2, residual=residual,
                                 cell_size=_cell_diameter(rect),
                                 method="monodromy")]
    children = _split_cell(rect, log_im)
    states = []
    for c in children:
        try:
            m = _safe_monodromy(family, c, initial_points=96)
        except EPOnPathError:
            states.append(None)
            continue
        states.append(m)
    nonid = [c for c, m in zip(children, states)
             if m is None or not m.is_identity]
    if not nonid:
        # branch point on an interior subdivision line: overlapping cells
        re0, re1, im0, im1 = rect
        w, h = re1 - re0, im1 - im0
        shifted = [
            (re0 + 0.25 * w, re0 + 0.75 * w, im0 + 0.25 * h, im0 + 0.75 * h),
            (re0 + 0.25 * w, re0 + 0.75 * w, im0, im0 + 0.5 * h),
            (re0 + 0.25 * w, re0 + 0.75 * w, im0 + 0.5 * h, im1),
            (re0, re0 + 0.5 * w, im0 + 0.25 * h, im0 + 0.75 * h),
            (re0 + 0.5 * w, re1, im0 + 0.25 * h, im0 + 0.75 * h),
        ]
        for c in shifted:
            try:
                m = _safe_monodromy(family, c, initial_points=96)
            except EPOnPathError:
                continue
            if not m.is_identity:
                nonid = [c]
                break
        if not nonid:
            raise RefineError("no sub-cell retained the branch point", rect)
    out = []
    failures: list[RefineError] = []
    for c in nonid:
        try:
            out.extend(_refine_cell(family, c, tol, residual_tol, log_im,
                                    polish, depth + 1))
        except RefineError as exc:
            # A perturbed-path monodromy can flag a child that holds no
            # branch point (the EP sits just outside, near a shared edge).
            # Such a child fails its own descent; that is only fatal when
            # every child fails.
            failures.append(exc)
    if not out and failures:
        raise failures[0]
    return _dedup(out, 2.0 * tol)


def refine_ep(family: HamiltonianFamily, cell: Sequence[float],
              tol: float = _DEFAULT_TOL, residual_tol: float | None = None,
              polish: bool = True, log_im: bool = False) -> ExceptionalPoint:
    """Localize the single EP inside a transposition cell to ``tol``.

    Monodromy subdivision isolates the branch point; a Newton polish on the
    pair function replaces the deep subdivision levels when it stays inside
    the cell, and the result is always re-verified by a transposition check
    on a tol-sized loop.

    A transposition monodromy alone does not certify a unique branch point:
    an odd chain of transpositions (three EPs coupling levels a-b, b-c, a-c)
    composes to a single transposition.  The discriminant winding number is
    checked first and must be exactly one.
    """
    if residual_tol is None:
        residual_tol = _RESIDUAL_SCALE * max(1.0, hamiltonian_scale(family))
    rect = tuple(map(float, cell))
    w = _safe_winding(family, rect)
    if w != 1:
        raise RefineError(
            f"cell encloses {w} discriminant zeros, not 1; rescan at finer "
            f"depth", rect)
    eps = _refine_cell(family, rect, tol, residual_tol, log_im, polish)
    if len(eps) != 1:
        raise RefineError(
            f"cell resolved into {len(eps)} branch points; rescan at finer "
            f"depth", rect)
    return eps[0]


def _dedup(eps: list[ExceptionalPoint], radius: float) -> list[ExceptionalPoint]:
    if not eps:
        return []
    eps = sorted(eps, key=lambda e: (e.lam.real, e.lam.imag))
    kept: list[ExceptionalPoint] = []
    for ep in eps:
        for i, other in enumerate(kept):
            if abs(ep.lam - other.lam) <= radius:
                better = ep if ep.residual < other.residual else other
                kept[i] = replace(better,
                                  merged_from=other.merged_from + ep.merged_from)
                break
        else:
            kept.append(ep)
    return kept


def scan_region(family: HamiltonianFamily, region: ScanRegion,
                tol: float = _DEFAULT_TOL, residual_tol: float | None = None,
                polish: bool = True) -> ScanResult:
    """All EPs inside a region by recursive monodromy subdivision.

    Identity cells are discarded only when a 5x5 interior gap probe clears
    the cancellation threshold (two same-pair EPs in one cell also give
    identity monodromy but leave a tiny gap between them) and the
    discriminant winding number over the cell is zero; otherwise they are
    subdivided, and at min_cell reported unresolved.  Transposition cells
    are refined only when the winding number is exactly one; a winding of
    two or more (an odd transposition chain composing to a net
    transposition, or same-pair cancellation) forces subdivision.  Longer
    permutations are subdivided directly.
    """
    if residual_tol is None:
        residual_tol = _RESIDUAL_SCALE * max(1.0, hamiltonian_scale(family))
    cancel_threshold = 10.0 * residual_tol
    min_cell = region.min_cell
    if min_cell is None:
        min_cell = 1e-3 * region.diameter
    eps: list[ExceptionalPoint] = []
    unresolved: list[UnresolvedCell] = []
    stack: list[tuple[tuple, int]] = [(region.rect, 0)]
    visited = 0
    while stack:
        rect, depth = stack.pop()
        visited += 1
        try:
            m = _safe_monodromy(family, rect)
        except EPOnPathError:
            if depth < region.max_depth and _cell_diameter(rect) > min_cell:
                for c in _split_cell(rect, region.log_im):
                    stack.append((c, depth + 1))
            else:
                unresolved.append(UnresolvedCell(rect=rect, kind="boundary"))
            continue
        if m.is_identity:
            if _probe_min_gap(family, rect) > cancel_threshold:
                try:
                    if _safe_winding(family, rect) == 0:
                        continue
                except RefineError:
                    pass  # inconclusive perimeter: treat as occupied
            if depth < region.max_depth and _cell_diameter(rect) > min_cell:
                for c in _split_cell(rect, region.log_im):
                    stack.append((c, depth + 1))
            else:
                unresolved.append(UnresolvedCell(rect=rect, kind="small-gap",
                                                 permutation=m.permutation))
        elif m.is_transposition:
            try:
                w = _safe_winding(family, rect)
            except RefineError:
                w = None
            if w == 1:
                try:
                    found = _refine_cell(family, rect, tol, residual_tol,
                                         region.log_im, polish)
                except RefineError:
                    unresolved.append(UnresolvedCell(rect=rect, kind="multi",
                                                     permutation=m.permutation))
                    continue
                eps.extend(found)
            elif depth < region.max_depth and _cell_diameter(rect) > min_cell:
                for c in _split_cell(rect, region.log_im):
                    stack.append((c, depth + 1))
            else:
                unresolved.append(UnresolvedCell(rect=rect, kind="multi",
                                                 permutation=m.permutation))
        else:
            if depth < region.max_depth and _cell_diameter(rect) > min_cell:
                for c in _split_cell(rect, region.log_im):
                    stack.append((c, depth + 1))
            else:
                unresolved.append(UnresolvedCell(rect=rect, kind="multi",
                                                 permutation=m.permutation))
    eps = [e for e in _dedup(eps, 2.0 * tol)
           if region.re_min - tol <= e.lam.real <= region.re_max + tol
           and region.im_min - tol <= e.lam.imag <= region.im_max + tol]
    eps.sort(key=lambda e: (e.lam.real, e.lam.imag))
    return ScanResult(eps=eps, unresolved=unresolved, region=region, tol=tol,
                      cells_visited=visited)


# ---------------------------------------------------------------------------
# real-axis relations


@dataclass(frozen=True)
class CrossingAssignment:
    """Avoided-crossing data for one EP (perpendicular-path method)."""

    ep: ExceptionalPoint
    assigned: bool
    levels: tuple[int, int] | None = None
    lam_real: float | None = None          # Re lambda_ep
    spacing_location: float | None = None  # argmin of the pair gap
    min_spacing: float | None = None
    F: float | None = None                 # min_spacing / (2 Im lambda_ep)


def assign_avoided_crossing(family: HamiltonianFamily, ep: ExceptionalPoint,
                            window: float | None = None, grid: int = 513
                            ) -> CrossingAssignment:
    """Identify which real-axis levels an EP connects, and its F ratio.

    Traces the vertical path from (Re lambda_ep, 0) toward the EP, stopping
    just short of it; the pair of labels left nearly degenerate at arrival
    is the assignment.  The pair's real-axis gap is then minimized inside a
    window of half-width max(Im lambda_ep, a few grid steps); a missing
    interior minimum (or a failed trace) marks the EP as screened.
    """
    x0, mu = float(ep.lam.real), float(ep.lam.imag)
    try:
        traced = trace_path(family, [complex(x0, 0.0),
                                     complex(x0, mu * (1.0 - 1e-2))],
                            initial_step=mu / 64.0, check_trace=False)
    except EPOnPathError:
        return CrossingAssignment(ep=ep, assigned=False, lam_real=x0)
    E_end = traced.energies[-1]
    D = np.abs(E_end[:, None] - E_end[None, :])
    np.fill_diagonal(D, np.inf)
    a, b = np.unravel_index(np.argmin(D), D.shape)
    # labels are anchored ascending at the real-axis start
    n, npr = sorted((int(a) + 1, int(b) + 1))
    if window is None:
        window = max(mu, 8.0 * abs(x0) / grid, 1e-3)
    lams = np.linspace(x0 - window, x0 + window, grid)
    H = family.H0[None] + lams[:, None, None] * family.V[None]
    Es = np.linalg.eigvalsh(H)
    gaps = Es[:, npr - 1] - Es[:, n - 1]
    k = int(np.argmin(gaps))
    if k == 0 or k == grid - 1:
        return CrossingAssignment(ep=ep, assigned=False, levels=(n, npr),
                                  lam_real=x0)
    # parabolic refinement around the discrete minimum
    y0, y1, y2 = gaps[k - 1], gaps[k], gaps[k + 1]
    denom = y0 - 2.0 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom > 0 else 0.0
    loc = lams[k] + shift * (lams[1] - lams[0])
    spacing = float(y1 - 0.25 * (y0 - y2) * shift) if denom > 0 else float(y1)
    return CrossingAssignment(ep=ep, assigned=True, levels=(n, npr),
                              lam_real=x0, spacing_location=float(loc),
                              min_spacing=spacing,
                              F=spacing / (2.0 * mu))


def phase_rigidity(family: HamiltonianFamily, lam: complex,
                   degeneracy_tol: float | None = None) -> np.ndarray:
    """Per-level rigidity |v^T v| / (v^+ v) with transpose pairing.

    Equals 1 for Hermitian (real lambda) spectra and drops to 0 for the two
    levels coalescing at an EP.  Raises at numerical degeneracy, where the
    eigenvector basis is defective.
    """
    H = evaluate_at(family, complex(lam))
    E, R = np.linalg.eig(H)
    if degeneracy_tol is None:
        degeneracy_tol = 1e-12 * max(1.0, float(np.abs(E).max()))
    D = np.abs(E[:, None] - E[None, :])
    np.fill_diagonal(D, np.inf)
    if D.min() < degeneracy_tol:
        raise RefineError(f"spectrum at degeneracy (gap {D.min():.3e}); "
                          "phase rigidity undefined at an EP")
    num = np.abs(np.einsum("in,in->n", R, R))
    den = np.einsum("in,in->n", np.conj(R), R).real
    return num / den


def nearest_ep(eps: Iterable[ExceptionalPoint], anchor: float
               ) -> ExceptionalPoint:
    """EP minimizing |lambda - anchor|; ties by smaller Im, then Re."""
    eps = list(eps)
    if not eps:
        raise ValueError("empty EP list")
    return min(eps, key=lambda e: (abs(e.lam - anchor), e.lam.imag,
                                   e.lam.real))


# ---------------------------------------------------------------------------
# targeted search used by the scaling studies


def _real_gap_minima(family, center: float, halfwidth: float, levels: int,
                     grid: int = 1024):
    """Locations and values of adjacent-pair gap minima near a real point."""
    lams = np.linspace(center - halfwidth, center + halfwidth, grid)
    H = family.H0[None] + lams[:, None, None] * family.V[None]
    E = np.linalg.eigvalsh(H)
    out = []
    for n in range(min(levels, family.d - 1)):
        gaps = E[:, n + 1] - E[:, n]
        k = int(np.argmin(gaps))
        out.append((n + 1, float(lams[k]), float(gaps[k])))
    out.sort(key=lambda t: t[2])
    return out


def locate_nearest_ep(family: HamiltonianFamily, anchor: float,
                      halfwidth: float | None = None, pairs: int = 4,
                      mp_threshold: float = 1e-12, mp_dps: int = 50,
                      residual_tol: float | None = None
                      ) -> ExceptionalPoint:
    """Nearest EP to a real anchor via avoided-crossing-seeded Newton hunts.

    Each of the lowest few adjacent-pair avoided crossings near the anchor
    seeds a Newton iteration on its pair function; the converged point
    closest to the anchor wins.  When the winning Im lambda falls below
    ``mp_threshold`` the model is rebuilt in mpmath arithmetic and the
    position re-converged by a secant iteration at ``mp_dps`` digits.
    """
    if halfwidth is None:
        halfwidth = 0.5 * (1.0 + abs(anchor))
    if residual_tol is None:
        residual_tol = _RESIDUAL_SCALE * max(1.0, hamiltonian_scale(family))
    candidates = []
    minima = _real_gap_minima(family, anchor, halfwidth, levels=2 * pairs)
    for n, loc, gap in minima[:pairs]:
        if gap < 1e-10:
            # below reliable double resolution: hand straight to mpmath
            candidates.append(("mp", n, loc, gap))
            continue
        seed = complex(loc, gap)
        lam, s_abs, pair_vals, _ = pair_newton(family, seed,
                                               step_cap=0.5 * halfwidth)
        if lam.imag < 0:
            lam = lam.conjugate()
        if lam.imag <= 0 or abs(lam - anchor) > 4.0 * halfwidth:
            continue
        candidates.append(("dp", n, lam, pair_vals))
    best = None
    for kind, n, lam_or_loc, extra in candidates:
        if kind == "dp":
            lam = lam_or_loc
            residual = _residual_at(family, lam)
            if lam.imag < mp_threshold:
                lam, residual = _mp_polish(family, lam, extra, dps=mp_dps)
        else:
            got = _mp_from_real_gap(family, lam_or_loc, n, mp_dps)
            if got is None:
                continue
            lam, residual = got
        if lam.imag <= 0:
            continue
        cand = ExceptionalPoint(
            lam=lam, residual=residual,
            cell_size=float("nan"), method="monodromy", levels=(n, n + 1))
        if best is None or abs(cand.lam - anchor) < abs(best.lam - anchor):
            best = cand
    if best is None:
        raise RefineError(f"no EP located near anchor {anchor}")
    return best


def _mp_from_real_gap(family, loc, n, dps):
    """Bootstrap an EP hunt entirely in mpmath from a real-axis location."""
    from mpmath import mp, mpc
    from .highprec import family_mp_matrices, mp_secant_pair, \
        mp_symmetric_spectrum
    H0, V = family_mp_matrices(family, dps)
    with mp.workdps(dps):
        A = H0 + mp.mpf(loc) * V
        E = mp_symmetric_spectrum(A, dps)
        gap = E[n] - E[n - 1]
        hints = (E[n - 1], E[n])
        seed = mpc(loc, gap)
        lam_mp, s_abs, _ = mp_secant_pair(H0, V, seed, hints, dps=dps)
        lam = complex(lam_mp.real, lam_mp.imag)
        residual = float(s_abs) ** 0.5
    if lam.imag < 0:
        lam = lam.conjugate()
    return (lam, residual) if lam.imag > 0 else None


# re-exported oracle (separate file keeps the mp plumbing out of the way)
from .discriminant import discriminant_eps  # noqa: E402  (module surface)
