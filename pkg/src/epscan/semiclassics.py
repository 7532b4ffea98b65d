"""Semiclassical forms for the critical spectra.

At the critical coupling the two transition families acquire classical
limits: the second-order family flows to a pure quartic well, whose levels
grow like n^(4/3) d^(-1/3), and the first-order family to a symmetric
double well, whose tunneling doublets split like A exp(-B d - C ln d).
Both forms are validated by regression on exactly diagonalized spectra;
the classical action integrals behind the constants are out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .spinmodels import HamiltonianFamily, evaluate_at

__all__ = [
    "CriticalSpectrumModel",
    "QuarticFit",
    "DoubletFit",
    "critical_spectrum",
    "doublet_splittings",
    "quartic_level",
    "fit_quartic_scale",
    "fit_doublet_splittings",
    "quartic_model",
    "doublewell_model",
]

# splittings below this are double-precision noise on O(1) spectra
RESOLVE_FLOOR = 1e-14


def critical_spectrum(family: HamiltonianFamily, lam: float | None = None,
                      extended: bool = False, dps: int = 60) -> np.ndarray:
    """Ascending spectrum of H(lambda) at the (real) critical coupling.

    With ``extended`` the diagonalization runs in ``dps``-digit arithmetic
    and the returned array holds mpmath floats, so that differences of
    near-degenerate levels survive far below double resolution.
    """
    if lam is None:
        lam = family.critical
        if lam is None:
            raise ValueError("family has no critical coupling; pass lam")
    lam = float(lam)
    if extended:
        from mpmath import mp

        from .highprec import family_mp_matrices, mp_symmetric_spectrum
        H0, V = family_mp_matrices(family, dps)
        with mp.workdps(dps):
            M = H0 + mp.mpf(repr(lam)) * V
        E = mp_symmetric_spectrum(M, dps)
        return np.array(E, dtype=object)
    return np.linalg.eigvalsh(evaluate_at(family, lam).real)


def doublet_splittings(spectrum: Sequence) -> np.ndarray:
    """Successive level spacings E_{n+1} - E_n, one per n = 1..d-1.

    Differences are taken elementwise before any float conversion, so a
    spectrum of mpmath floats keeps splittings well below 1e-16.
    """
    E = list(spectrum)
    return np.array([float(E[i + 1] - E[i]) for i in range(len(E) - 1)])


def quartic_level(n, d: int, omega: float = 1.0):
    """Quartic-well level formula omega * n^(4/3) * d^(-1/3)."""
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 1) or np.any(n_arr > d):
        raise ValueError("level index out of range 1..d")
    out = omega * n_arr ** (4.0 / 3.0) * float(d) ** (-1.0 / 3.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class QuarticFit:
    """Least-squares scale of the quartic-well form on one spectrum."""

    omega: float
    offset: float
    window: tuple[int, int]
    rel_dev: np.ndarray      # per level in the window
    rel_dev_all: np.ndarray  # per level over the full spectrum

    def as_dict(self) -> dict:
        return {
            "omega": self.omega,
            "offset": self.offset,
            "window": list(self.window),
            "rel_dev": [float(x) for x in self.rel_dev],
            "max_rel_dev": float(np.abs(self.rel_dev).max()),
        }


def fit_quartic_scale(spectrum: Sequence[float]) -> QuarticFit:
    """Fit E_n ~ E0 + omega n^(4/3) d^(-1/3) over the window 5 <= n <= d/4.

    The offset E0 absorbs the classical floor of the well (the critical
    spectrum does not start at zero); relative deviations are quoted
    against the predicted level height omega n^(4/3) d^(-1/3).

    The least squares runs on the relative residuals and is re-weighted
    (Lawson) toward the uniform-error fit: the quantization integral gives
    levels closer to (n - 1/2)^(4/3), so an absolute-error fit would dump
    the whole form mismatch onto the smallest n of the window.
    """
    E = np.asarray(spectrum, dtype=float)
    d = len(E)
    if d < 24:
        raise ValueError(f"window 5 <= n <= d/4 is empty for d={d}")
    n_all = np.arange(1, d + 1)
    x_all = n_all ** (4.0 / 3.0) * d ** (-1.0 / 3.0)
    lo, hi = 5, d // 4
    sel = slice(lo - 1, hi)
    x, y = x_all[sel], E[sel]
    A = np.stack([x, np.ones(len(x))], axis=1)

    def rel_res(omega, offset):
        return (y - offset - omega * x) / (omega * x)

    w = np.ones(len(x))
    best = None
    for _ in range(60):
        Aw = A * (np.sqrt(w) / x)[:, None]
        yw = y * np.sqrt(w) / x
        (omega, offset), *_ = np.linalg.lstsq(Aw, yw, rcond=None)
        r = np.abs(rel_res(omega, offset))
        if best is None or r.max() < best[0]:
            best = (r.max(), float(omega), float(offset))
        if r.max() < 1e-12:
            break
        w = w * r
        w = w / w.sum()
    _, omega, offset = best
    rel_all = (E - offset - omega * x_all) / (omega * x_all)
    return QuarticFit(omega=omega, offset=offset,
                      window=(lo, hi), rel_dev=rel_all[sel],
                      rel_dev_all=rel_all)


@dataclass(frozen=True)
class DoubletFit:
    """ln-splitting regression for one tunneling doublet.

    ln(E_{n+1} - E_n) = ln A - B d - C ln d over the supplied dimensions.
    """

    n: int
    A: float
    B: float
    C: float
    r2: float
    dims: tuple[int, ...]
    dropped_dims: tuple[int, ...]

    def as_dict(self) -> dict:
        return {"n": self.n, "A": self.A, "B": self.B, "C": self.C,
                "r2": self.r2, "dims": list(self.dims),
                "dropped_dims": list(self.dropped_dims)}


def _regress_log(dims: np.ndarray, values: np.ndarray) -> tuple[float, float, float, float]:
    y = np.log(values)
    X = np.stack([-dims, -np.log(dims), np.ones(len(dims))], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fit = X @ coef
    ss_res = float(((y - fit) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(math.exp(coef[2])), r2


def fit_doublet_splittings(spectra: Mapping[int, Sequence] | Sequence[tuple[int, Sequence]],
                           n_doublets: int = 3,
                           resolve_floor: float = RESOLVE_FLOOR,
                           ) -> list[DoubletFit]:
    """Per-doublet regression of ln splittings on (d, ln d, 1).

    ``spectra`` maps dimension d to the ascending critical spectrum (or is a
    sequence of such pairs).  Splittings at or below ``resolve_floor`` are
    dropped as unresolved; a doublet with fewer than 3 resolvable points is
    skipped entirely.
    """
    items = sorted(spectra.items()) if isinstance(spectra, Mapping) else sorted(spectra)
    if len(items) < 5:
        raise ValueError("need spectra for at least 5 dimensions")
    fits: list[DoubletFit] = []
    for k in range(n_doublets):
        n = 2 * k + 1
        dims, vals, dropped = [], [], []
        for d, E in items:
            E = list(E)
            if len(E) < n + 1:
                continue
            # the floor marks double-precision noise; extended-precision
            # spectra (mpmath elements) resolve splittings far below it
            floor = resolve_floor if isinstance(E[n], float) else 0.0
            s = float(E[n] - E[n - 1])
            if s > floor:
                dims.append(d)
                vals.append(s)
            else:
                dropped.append(d)
        if len(dims) < 3:
            continue
        B, C, A, r2 = _regress_log(np.asarray(dims, float), np.asarray(vals))
        fits.append(DoubletFit(n=n, A=A, B=B, C=C, r2=r2,
                               dims=tuple(dims), dropped_dims=tuple(dropped)))
    return fits


@dataclass(frozen=True)
class CriticalSpectrumModel:
    """Fitted semiclassical model of one critical spectrum."""

    kind: str  # "quartic" | "doublewell"
    omega: float
    doublets: tuple[DoubletFit, ...] = ()

    def __post_init__(self):
        if self.kind not in ("quartic", "doublewell"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        for f in self.doublets:
            if not f.B > 0:
                raise ValueError(f"doublet n={f.n}: B must be positive")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "omega": self.omega,
                "doublets": [f.as_dict() for f in self.doublets]}


def quartic_model(spectrum: Sequence[float]) -> CriticalSpectrumModel:
    fit = fit_quartic_scale(spectrum)
    return CriticalSpectrumModel(kind="quartic", omega=fit.omega)


def doublewell_model(spectra: Mapping[int, Sequence] | Sequence[tuple[int, Sequence]],
                     n_doublets: int = 3) -> CriticalSpectrumModel:
    """Double-well model: omega from even spacings, doublets from regression.

    omega is defined as the mean of the even-n spacings E_{n+1} - E_n,
    n in {2, 4, 6}, of the largest supplied spectrum (these are flat in
    both n and d to leading order, so any average over the first levels
    serves as the energy scale).
    """
    items = sorted(spectra.items()) if isinstance(spectra, Mapping) else sorted(spectra)
    doublets = fit_doublet_splittings(items, n_doublets=n_doublets)
    E = list(items[-1][1])
    spacings = [float(E[n] - E[n - 1]) for n in (2, 4, 6)]
    omega = float(np.mean(spacings))
    return CriticalSpectrumModel(kind="doublewell", omega=omega,
                                 doublets=tuple(doublets))
