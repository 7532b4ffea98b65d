"""Eigenvalue branch continuation and monodromy in the complex coupling plane.

Complex symmetric matrices are not normal, so their eigenvalues carry no
canonical order; continuity along a path is the only meaningful labeling.
``trace_path`` maintains that labeling with adaptive steps small enough that
nearest-value matching is provably unambiguous (each branch moves by less
than a fixed fraction of the smallest pairwise gap), and ``monodromy``
reduces a closed rectangular circuit to the permutation its branches undergo.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .spinmodels import HamiltonianFamily

__all__ = [
    "BranchedSpectrum",
    "Monodromy",
    "TracedPath",
    "EigenvalueError",
    "StepTooLargeError",
    "EPOnPathError",
    "eigvals",
    "eigvals_many",
    "match_branches",
    "trace_path",
    "monodromy",
    "rectangle_perimeter",
]

_TRACE_RTOL = 1e-9

# Memory cap for stacked eigenvalue calls, in matrix elements per chunk.
_BATCH_ELEMENTS = 1 << 22


class EigenvalueError(RuntimeError):
    """Eigenvalue iteration failed; carries whatever the backend produced."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class StepTooLargeError(RuntimeError):
    """Matching is ambiguous at the attempted step; halve it and retry."""

    def __init__(self, message: str, displacement: float, min_gap: float):
        super().__init__(message)
        self.displacement = displacement
        self.min_gap = min_gap


class EPOnPathError(RuntimeError):
    """Step refinement underflowed: a branch point sits on or next to the path."""

    def __init__(self, lam: complex, message: str | None = None):
        super().__init__(message or f"step underflow near lambda = {lam}")
        self.lam = lam


@dataclass(frozen=True)
class BranchedSpectrum:
    """Labeled spectrum at one point of a path.

    ``energies[i]`` is the branch carrying ``labels[i]``; labels are anchored
    at the path start (ascending by (Re, Im) there) and follow the branches,
    so after a closed loop the array order encodes the monodromy.
    """

    lam: complex
    energies: np.ndarray
    labels: tuple[int, ...]

    @property
    def d(self) -> int:
        return len(self.labels)

    def min_gap(self) -> float:
        return _min_pairwise_gap(self.energies)


def _min_pairwise_gap(E: np.ndarray) -> float:
    D = np.abs(E[:, None] - E[None, :])
    np.fill_diagonal(D, np.inf)
    return float(D.min())


def eigvals(M: np.ndarray) -> np.ndarray:
    """Eigenvalues of a dense complex matrix (no ordering contract)."""
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    try:
        return np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:  # iteration cap exceeded in QR
        raise EigenvalueError(f"eigenvalue iteration failed: {exc}") from exc


def eigvals_many(family: HamiltonianFamily, lams: np.ndarray) -> np.ndarray:
    """Stacked eigvals of H(lambda) for an array of couplings (chunked)."""
    lams = np.asarray(lams, dtype=complex)
    d = family.d
    out = np.empty(lams.shape + (d,), dtype=complex)
    chunk = max(1, _BATCH_ELEMENTS // (d * d))
    flat = lams.reshape(-1)
    res = out.reshape(-1, d)
    for k in range(0, flat.size, chunk):
        block = flat[k:k + chunk]
        H = family.H0[None, :, :] + block[:, None, None] * family.V[None, :, :]
        try:
            res[k:k + chunk] = np.linalg.eigvals(H)
        except np.linalg.LinAlgError as exc:
            raise EigenvalueError(f"eigenvalue iteration failed: {exc}") from exc
    return out


def match_branches(prev: BranchedSpectrum, next_energies: np.ndarray,
                   lam: complex | None = None) -> BranchedSpectrum:
    """Continue branch labels onto the next point's eigenvalue multiset.

    Greedy nearest-value matching first; exact optimal assignment (Hungarian
    on squared displacements) when greedy collides or any branch moves by a
    third of the previous minimal gap or more.

    Raises
    ------
    StepTooLargeError
        If even the optimal assignment moves some branch by at least half
        the previous minimal gap; the caller should halve its step.
    """
    E0 = prev.energies
    E1 = np.asarray(next_energies, dtype=complex)
    if E1.shape != E0.shape:
        raise ValueError("dimension mismatch between spectra")
    gap = _min_pairwise_gap(E0)
    D = np.abs(E0[:, None] - E1[None, :])
    cols = D.argmin(axis=1)
    disp = D[np.arange(len(E0)), cols]
    if len(set(cols.tolist())) != len(cols) or disp.max() >= gap / 3.0:
        rows, cols = linear_sum_assignment(D * D)
        disp = D[rows, cols]
    worst = float(disp.max())
    if worst >= gap / 2.0:
        raise StepTooLargeError(
            f"branch displacement {worst:.3e} >= half the minimal gap {gap:.3e}",
            displacement=worst, min_gap=gap)
    return BranchedSpectrum(lam=prev.lam if lam is None else lam,
                            energies=E1[cols], labels=prev.labels)


@dataclass(frozen=True)
class TracedPath:
    """Adaptively sampled labeled spectrum along a polyline."""

    lams: np.ndarray          # (n,) complex, path order
    energies: np.ndarray      # (n, d) complex, label-consistent along axis 0
    labels: tuple[int, ...]
    min_gap_seen: float
    n_evals: int

    @property
    def final(self) -> BranchedSpectrum:
        return BranchedSpectrum(lam=complex(self.lams[-1]),
                                energies=self.energies[-1], labels=self.labels)

    @property
    def initial(self) -> BranchedSpectrum:
        return BranchedSpectrum(lam=complex(self.lams[0]),
                                energies=self.energies[0], labels=self.labels)

    def write_jsonl(self, dest: str | IO[str]) -> None:
        """One JSON object per accepted point."""
        lines = []
        for lam, row in zip(self.lams, self.energies):
            lines.append(json.dumps({
                "re": float(lam.real), "im": float(lam.imag),
                "energies": [[float(e.real), float(e.imag)] for e in row],
                "labels": list(self.labels),
            }))
        text = "\n".join(lines) + "\n"
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w") as fh:
                fh.write(text)


def _check_trace(family: HamiltonianFamily, lam: complex, E: np.ndarray) -> None:
    expected = np.trace(family.H0) + lam * np.trace(family.V)
    denom = max(1.0, float(np.abs(E).sum()))
    if abs(E.sum() - expected) > _TRACE_RTOL * denom:
        raise EigenvalueError(
            f"trace residual {abs(E.sum() - expected):.3e} at lambda={lam} "
            f"exceeds {_TRACE_RTOL:g} relative")


def _check_trace_all(family, lams: np.ndarray, E_arr: np.ndarray) -> None:
    expected = np.trace(family.H0) + lams * np.trace(family.V)
    denom = np.maximum(1.0, np.abs(E_arr).sum(axis=1))
    resid = np.abs(E_arr.sum(axis=1) - expected)
    bad = np.nonzero(resid > _TRACE_RTOL * denom)[0]
    if bad.size:
        k = int(bad[0])
        raise EigenvalueError(
            f"trace residual {resid[k]:.3e} at lambda={complex(lams[k])} "
            f"exceeds {_TRACE_RTOL:g} relative")


def _pair_gaps(E_arr: np.ndarray) -> np.ndarray:
    """Per-point minimal pairwise gap for a stacked (n, d) spectrum array."""
    n, d = E_arr.shape
    out = np.empty(n)
    step = max(1, _BATCH_ELEMENTS // (d * d))
    for k in range(0, n, step):
        blk = E_arr[k:k + step]
        G = np.abs(blk[:, :, None] - blk[:, None, :])
        idx = np.arange(d)
        G[:, idx, idx] = np.inf
        out[k:k + step] = G.min(axis=(1, 2))
    return out


def _greedy_steps(E_arr: np.ndarray):
    """Batched nearest-value matching for all consecutive point pairs.

    Returns (cols, disp, valid): per step the greedy column choice of each
    row, the largest row-min displacement, and whether the choice is a
    permutation.
    """
    n, d = E_arr.shape
    cols = np.empty((n - 1, d), dtype=np.intp)
    disp = np.empty(n - 1)
    valid = np.empty(n - 1, dtype=bool)
    step = max(1, _BATCH_ELEMENTS // (d * d))
    E0, E1 = E_arr[:-1], E_arr[1:]
    for k in range(0, n - 1, step):
        D = np.abs(E0[k:k + step, :, None] - E1[k:k + step, None, :])
        c = D.argmin(axis=2)
        cols[k:k + step] = c
        disp[k:k + step] = np.take_along_axis(D, c[:, :, None], axis=2)[:, :, 0].max(axis=1)
        srt = np.sort(c, axis=1)
        valid[k:k + step] = np.all(srt[:, 1:] != srt[:, :-1], axis=1)
    return cols, disp, valid


def trace_path(family: HamiltonianFamily, path: Sequence[complex],
               initial_step: float | None = None, gap_safety: float = 0.25,
               min_step_frac: float = 1e-13,
               check_trace: bool = True) -> TracedPath:
    """Continue all eigenvalue branches along a polyline of couplings.

    Points are refined until every step moves every branch by at most
    ``gap_safety`` times the local minimal pairwise gap, which makes
    nearest-value matching unambiguous.  Labels start ascending by
    (Re, Im) at the first waypoint.

    Raises
    ------
    EPOnPathError
        If refinement would drop below ``min_step_frac`` times the path
        length: an exceptional point lies on or next to the path.
    """
    if not 0.0 < gap_safety < 0.5:
        raise ValueError("gap_safety must lie in (0, 1/2)")
    waypoints = np.asarray(path, dtype=complex)
    if waypoints.ndim != 1 or waypoints.size < 2:
        raise ValueError("path must contain at least two waypoints")
    seg = np.abs(np.diff(waypoints))
    if not np.all(seg > 0):
        raise ValueError("path has a zero-length segment")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    length = float(cum[-1])
    if initial_step is None:
        initial_step = length / 256.0
    min_step = min_step_frac * length

    def lam_at(t: np.ndarray) -> np.ndarray:
        t = np.clip(t, 0.0, length)
        k = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, len(seg) - 1)
        frac = (t - cum[k]) / seg[k]
        return waypoints[k] + frac * (waypoints[k + 1] - waypoints[k])

    # initial parameterization: waypoints plus uniform filling per segment
    ts = [0.0]
    for a, b in zip(cum[:-1], cum[1:]):
        n = max(1, int(np.ceil((b - a) / initial_step)))
        ts.extend(np.linspace(a, b, n + 1)[1:])
    t_arr = np.asarray(ts)
    E_arr = eigvals_many(family, lam_at(t_arr))
    n_evals = len(t_arr)

    # refinement rounds, fully batched: a step is accepted once the greedy
    # nearest-value matching is a permutation AND no branch moves farther
    # than gap_safety times the local minimal pairwise gap
    for _ in range(200):
        min_gaps = _pair_gaps(E_arr)
        cols, disp, valid = _greedy_steps(E_arr)
        limit = gap_safety * np.minimum(min_gaps[:-1], min_gaps[1:])
        bad = np.nonzero(~valid | (disp > limit))[0]
        if bad.size == 0:
            break
        dt = t_arr[bad + 1] - t_arr[bad]
        if np.any(dt / 2.0 < min_step):
            k = bad[int(np.argmin(dt))]
            raise EPOnPathError(complex(lam_at(np.array([(t_arr[k] + t_arr[k + 1]) / 2]))[0]))
        mid = (t_arr[bad] + t_arr[bad + 1]) / 2.0
        E_mid = eigvals_many(family, lam_at(mid))
        n_evals += len(mid)
        t_arr = np.concatenate([t_arr, mid])
        order = np.argsort(t_arr, kind="stable")
        t_arr = t_arr[order]
        E_arr = np.concatenate([E_arr, E_mid])[order]
    else:
        raise EPOnPathError(complex(waypoints[0]), "refinement cap exceeded")

    # label propagation: compose the per-step column choices
    labels = tuple(range(1, E_arr.shape[1] + 1))
    idx = np.empty((len(t_arr), E_arr.shape[1]), dtype=np.intp)
    idx[0] = np.lexsort((E_arr[0].imag, E_arr[0].real))
    for i in range(len(t_arr) - 1):
        idx[i + 1] = cols[i][idx[i]]
    energies = np.take_along_axis(E_arr, idx, axis=1)
    lams = lam_at(t_arr)
    if check_trace:
        _check_trace_all(family, lams, energies)
    return TracedPath(lams=lams, energies=energies, labels=labels,
                      min_gap_seen=float(min_gaps.min()), n_evals=n_evals)


@dataclass(frozen=True)
class Monodromy:
    """Branch permutation around one counterclockwise rectangular circuit.

    ``permutation[i] = k`` means the branch that started in sorted slot ``i``
    returns to the value that started in slot ``k`` (0-based slots).
    """

    loop: tuple[complex, complex, complex, complex]
    permutation: tuple[int, ...]
    min_gap_seen: float
    steps_used: int

    @property
    def is_identity(self) -> bool:
        return all(p == i for i, p in enumerate(self.permutation))

    def cycles(self) -> list[tuple[int, ...]]:
        """Nontrivial cycles of the permutation (0-based slots)."""
        seen = set()
        out = []
        for start in range(len(self.permutation)):
            if start in seen:
                continue
            cyc = [start]
            seen.add(start)
            k = self.permutation[start]
            while k != start:
                cyc.append(k)
                seen.add(k)
                k = self.permutation[k]
            if len(cyc) > 1:
                out.append(tuple(cyc))
        return out

    @property
    def is_transposition(self) -> bool:
        cyc = self.cycles()
        return len(cyc) == 1 and len(cyc[0]) == 2


def rectangle_perimeter(re0: float, re1: float, im0: float, im1: float
                        ) -> np.ndarray:
    """Counterclockwise closed polyline from the lower-left corner."""
    ll = complex(re0, im0)
    lr = complex(re1, im0)
    ur = complex(re1, im1)
    ul = complex(re0, im1)
    return np.array([ll, lr, ur, ul, ll])


def monodromy(family: HamiltonianFamily, rect: Sequence[float],
              gap_safety: float = 0.25, initial_points: int = 256,
              min_step_frac: float = 1e-13) -> Monodromy:
    """Permutation of eigenvalue branches around a rectangle (ccw, base at
    the lower-left corner).

    ``rect`` is (re_min, re_max, im_min, im_max).  Raises EPOnPathError when
    a branch point sits on the perimeter (the caller should perturb the
    rectangle).
    """
    re0, re1, im0, im1 = map(float, rect)
    if not (re1 > re0 and im1 > im0):
        raise ValueError("rectangle must have positive area")
    path = rectangle_perimeter(re0, re1, im0, im1)
    perimeter = 2.0 * ((re1 - re0) + (im1 - im0))
    traced = trace_path(family, path, initial_step=perimeter / initial_points,
                        gap_safety=gap_safety, min_step_frac=min_step_frac,
                        check_trace=False)
    E_start = traced.energies[0]
    E_end = traced.energies[-1]
    # same lambda, same multiset: nearest matching closes the loop
    D = np.abs(E_end[:, None] - E_start[None, :])
    perm = D.argmin(axis=1)
    if len(set(perm.tolist())) != len(perm):
        rows, perm = linear_sum_assignment(D)
    gap0 = _min_pairwise_gap(E_start)
    if D[np.arange(len(perm)), perm].max() > 0.25 * gap0:
        raise EPOnPathError(complex(path[0]),
                            "loop closure mismatch exceeds a quarter gap")
    return Monodromy(loop=(path[0], path[1], path[2], path[3]),
                     permutation=tuple(int(p) for p in perm),
                     min_gap_seen=traced.min_gap_seen,
                     steps_used=len(traced.lams) - 1)
