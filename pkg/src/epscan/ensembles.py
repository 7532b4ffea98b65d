"""Random-perturbation ensembles and their exceptional-point statistics.

A fixed diagonal H0 (the spectrum of a critical or harmonic model) is
perturbed by random real symmetric V drawn from one of four ensembles:
diagonal with rectangular or normal entries, the full GOE, or the GOE with
its diagonal removed.  The element scale sigma is normalized through the
quadratic spread of the unperturbed spectrum so that the ensemble-averaged
spread slope matches D_E(0) for every kind.

Diagonal kinds keep every degeneracy on the real axis, and the crossing
positions have closed-form densities built from a universal slope kernel F.
Nondiagonal kinds push the degeneracies into the complex plane as EPs;
those are located per sample by Newton iteration on the discriminant's log
derivative, seeded from two-level estimates and certified complete with the
argument-principle winding count of the discriminant.

All sampling is counter-based (Philox) with one substream per sample index,
so results are bit-identical for a given seed at any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.random import Generator, Philox

from .epfinder import RefineError, _safe_winding, disc_newton
from .semiclassics import critical_spectrum
from .spinmodels import HamiltonianFamily, custom_family, family_qpt1, family_qpt2

__all__ = [
    "KINDS",
    "GENERATOR_NAME",
    "EnsembleSpec",
    "SpreadCoefficients",
    "MomentTable",
    "RadialHistogram",
    "PlaneHistogram",
    "EPCollection",
    "NearestEPStats",
    "spectral_mean",
    "quadratic_spread",
    "sigma_for",
    "h0_spectrum",
    "sample_perturbation",
    "spread_coefficients",
    "moment_statistics",
    "F_function",
    "F_general",
    "crossing_density_analytic",
    "crossing_density_integral",
    "crossing_samples_diagonal",
    "collect_eps",
    "ep_histogram",
    "nearest_ep_stats",
]

KINDS = ("diag-rect", "diag-norm", "full", "offd")
GENERATOR_NAME = "philox4x64"


# ---------------------------------------------------------------------------
# spectral moments and sigma normalization


def spectral_mean(spectrum: Sequence[complex]) -> complex:
    """Center of mass M_E of a spectrum."""
    E = np.asarray(spectrum)
    return complex(E.mean())


def quadratic_spread(spectrum: Sequence[complex]) -> float:
    """Quadratic spread D_E = (1/(d-1)) sum |E_n - M_E|^2."""
    E = np.asarray(spectrum)
    if E.size < 2:
        raise ValueError("need at least two levels")
    M = E.mean()
    return float((np.abs(E - M) ** 2).sum() / (E.size - 1))


def _as_spectrum(h0) -> np.ndarray:
    """Accept a 1-D spectrum or a real symmetric matrix."""
    arr = np.asarray(h0)
    if arr.ndim == 2:
        return np.linalg.eigvalsh(arr.astype(float))
    return arr


def sigma_for(h0, kind: str) -> float:
    """Element scale: sigma^2 = D_E(0) (diag), /(d+2) (full), /d (offd).

    The reductions make the ensemble mean of the perturbation spread D_V
    equal D_E(0) for every kind, so the four ensembles perturb the spectrum
    equally hard on average.
    """
    E = _as_spectrum(h0).astype(float)
    d = len(E)
    DE0 = quadratic_spread(E)
    if kind in ("diag-rect", "diag-norm"):
        return math.sqrt(DE0)
    if kind == "full":
        return math.sqrt(DE0 / (d + 2))
    if kind == "offd":
        return math.sqrt(DE0 / d)
    raise ValueError(f"unknown ensemble kind {kind!r}")


def h0_spectrum(name: str, d: int, omega: float = 1.0, a: float = 3.0,
                extended: bool = False, dps: int = 60) -> np.ndarray:
    """Named unperturbed spectra: harmonic ladder and the two critical ones.

    "ho" is the equidistant ladder omega*(1..d); "c1" and "c2" are the
    numerically diagonalized critical spectra of the first- and
    second-order families at dimension d.  ``extended`` switches the c1
    diagonalization to mpmath so that the tunneling doublets stay resolved.
    """
    if name == "ho":
        return omega * np.arange(1, d + 1, dtype=float)
    if name == "c2":
        return critical_spectrum(family_qpt2(d - 1))
    if name == "c1":
        return critical_spectrum(family_qpt1(d - 1, a=a), extended=extended,
                                 dps=dps)
    raise ValueError(f"unknown spectrum name {name!r}")


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class EnsembleSpec:
    """One reproducible ensemble: kind, dimension, scale, seed, size."""

    kind: str
    d: int
    sigma: float
    seed: int
    samples: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.d < 2:
            raise ValueError("d must be at least 2")
        if self.samples < 1:
            raise ValueError("samples must be positive")

    def substream(self, index: int) -> Generator:
        # per-sample substream key: seed XOR sample index
        return Generator(Philox(key=(self.seed ^ index) & (2 ** 64 - 1)))

    def as_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "sigma": self.sigma,
                "seed": self.seed, "samples": self.samples,
                "generator": GENERATOR_NAME}


def sample_perturbation(spec: EnsembleSpec, sample_index: int) -> np.ndarray:
    """The real symmetric V of one sample.

    Draw order is fixed (diagonal first, then the upper triangle row by
    row) so the matrices are reproducible from the substream alone.
    """
    rng = spec.substream(sample_index)
    d, s = spec.d, spec.sigma
    V = np.zeros((d, d))
    if spec.kind == "diag-rect":
        half = math.sqrt(3.0) * s  # variance (2*half)^2/12 = sigma^2
        V[np.diag_indices(d)] = rng.uniform(-half, half, size=d)
        return V
    if spec.kind == "diag-norm":
        V[np.diag_indices(d)] = rng.normal(0.0, s, size=d)
        return V
    iu = np.triu_indices(d, k=1)
    if spec.kind == "full":
        V[np.diag_indices(d)] = rng.normal(0.0, math.sqrt(2.0) * s, size=d)
    V[iu] = rng.normal(0.0, s, size=iu[0].size)
    V.T[iu] = V[iu]
    return V


# ---------------------------------------------------------------------------
# quadratic-spread coefficients


@dataclass(frozen=True)
class SpreadCoefficients:
    """Coefficients of D_E(lambda) = D_E(0) + K lambda + D_V lambda^2.

    The identity is exact for a linear pencil: both sides are trace
    polynomials.  lam0 minimizes the spread; D_min is its value there.
    """

    M_V: float
    D_V: float
    K: float
    DE0: float

    @property
    def lam0(self) -> float:
        return -self.K / (2.0 * self.D_V)

    @property
    def D_min(self) -> float:
        return self.DE0 - self.K ** 2 / (4.0 * self.D_V)

    def spread_at(self, lam: float) -> float:
        return self.DE0 + self.K * lam + self.D_V * lam * lam

    def as_dict(self) -> dict:
        return {"M_V": self.M_V, "D_V": self.D_V, "K": self.K,
                "DE0": self.DE0, "lam0": self.lam0, "D_min": self.D_min}


def _trace_moments(h0_diag: np.ndarray, V: np.ndarray):
    d = len(h0_diag)
    M_E = float(h0_diag.mean())
    M_V = float(np.trace(V)) / d
    tr_V2 = float((V * V).sum())  # symmetric V
    D_V = (tr_V2 - d * M_V * M_V) / (d - 1)
    M_HV = float(h0_diag @ np.diag(V)) / d
    K = (2.0 * d / (d - 1)) * (M_HV - M_E * M_V)
    return M_V, D_V, K


def spread_coefficients(h0, V: np.ndarray) -> SpreadCoefficients:
    """Exact spread coefficients from trace identities (no eigensolve)."""
    E = _as_spectrum(h0).astype(float)
    V = np.asarray(V, dtype=float)
    if V.shape != (len(E), len(E)):
        raise ValueError("V shape does not match h0")
    M_V, D_V, K = _trace_moments(E, V)
    if D_V <= 0:
        raise ValueError("D_V must be positive (V must be nonzero)")
    return SpreadCoefficients(M_V=M_V, D_V=D_V, K=K,
                              DE0=quadratic_spread(E))


# ---------------------------------------------------------------------------
# moment statistics against the leading-order predictions


@dataclass(frozen=True)
class MomentRow:
    name: str
    mean: float
    se_mean: float
    pred_mean: float
    var: float
    se_var: float
    pred_var: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("name", "mean", "se_mean", "pred_mean",
                 "var", "se_var", "pred_var")}


@dataclass(frozen=True)
class MomentTable:
    spec: EnsembleSpec
    DE0: float
    rows: tuple[MomentRow, ...]

    def row(self, name: str) -> MomentRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"spec": self.spec.as_dict(), "DE0": self.DE0,
                "rows": [r.as_dict() for r in self.rows]}


def _predicted_variances(kind: str, DE0: float, d: int) -> dict:
    # leading-order table; kappa = 2 for normal diagonals, 0.8 rectangular
    if kind in ("diag-rect", "diag-norm"):
        kappa = 0.8 if kind == "diag-rect" else 2.0
        return {"M_V": DE0 / d, "D_V": kappa * DE0 ** 2 / d,
                "K": 4.0 * DE0 ** 2 / d}
    if kind == "full":
        return {"M_V": 2.0 * DE0 / d ** 2, "D_V": DE0 ** 2,
                "K": 8.0 * DE0 ** 2 / d ** 2}
    return {"M_V": 0.0, "D_V": 2.0 * DE0 ** 2 / d ** 2, "K": 0.0}


def moment_statistics(spec: EnsembleSpec, h0) -> MomentTable:
    """Monte Carlo moments of (M_V, D_V, K) with analytic predictions.

    Predictions assume spec.sigma = sigma_for(h0, spec.kind); the means are
    (0, D_E(0), 0) and the variances follow the leading-order table.
    Standard errors of the sample variances use the measured fourth
    moments, so the +-3 sigma comparisons stay honest for the skewed D_V.
    """
    E = _as_spectrum(h0).astype(float)
    vals = np.empty((spec.samples, 3))
    for i in range(spec.samples):
        V = sample_perturbation(spec, i)
        vals[i] = _trace_moments(E, V)
    DE0 = quadratic_spread(E)
    n = spec.samples
    pred_mean = {"M_V": 0.0, "D_V": DE0, "K": 0.0}
    pred_var = _predicted_variances(spec.kind, DE0, spec.d)
    rows = []
    for j, name in enumerate(("M_V", "D_V", "K")):
        x = vals[:, j]
        mean = float(x.mean())
        var = float(x.var(ddof=1))
        m2 = float(((x - mean) ** 2).mean())
        m4 = float(((x - mean) ** 4).mean())
        se_var = math.sqrt(max(m4 - (n - 3) / (n - 1) * m2 * m2, 0.0) / n)
        rows.append(MomentRow(name=name, mean=mean,
                              se_mean=math.sqrt(var / n),
                              pred_mean=pred_mean[name],
                              var=var, se_var=se_var,
                              pred_var=pred_var[name]))
    return MomentTable(spec=spec, DE0=DE0, rows=tuple(rows))


# ---------------------------------------------------------------------------
# crossing distributions for the diagonal kinds


def F_function(kind: str, x) -> np.ndarray | float:
    """Universal crossing kernel for one level pair.

    rect: x^-3 (x - 1) for x >= 1, else 0; normal: sqrt(3/pi) x^-2
    exp(-3/x^2).  Both integrate to 1/2 over x in [0, inf).
    """
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    if kind == "rect":
        m = x_arr >= 1.0
        out[m] = (x_arr[m] - 1.0) / x_arr[m] ** 3
    elif kind == "normal":
        m = x_arr > 0.0
        out[m] = math.sqrt(3.0 / math.pi) * np.exp(-3.0 / x_arr[m] ** 2) / x_arr[m] ** 2
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return out if out.ndim else float(out)


def F_general(p: Callable[[float], float], x: float,
              support: tuple[float, float] | None = None) -> float:
    """Crossing kernel for an arbitrary normalized slope density p(v).

    F(x) = (2/x^2) * integral p(v) p(v - 2/x) dv, by adaptive quadrature
    to 1e-10 absolute.  Reduces to the closed forms for the rectangular
    and normal densities.
    """
    from scipy.integrate import quad
    if x <= 0:
        return 0.0
    a = 2.0 / x
    if support is not None:
        lo, hi = support
        left, right = max(lo, lo + a), min(hi, hi + a)
        if left >= right:
            return 0.0
        val, _ = quad(lambda v: p(v) * p(v - a), left, right, epsabs=1e-10)
    else:
        val, _ = quad(lambda v: p(v) * p(v - a), -np.inf, np.inf,
                      epsabs=1e-10)
    return 2.0 / x ** 2 * val


_F_KIND = {"diag-rect": "rect", "diag-norm": "normal",
           "rect": "rect", "normal": "normal"}


def _pair_alphas(h0, sigma: float) -> np.ndarray:
    """alpha_{nn'} = 2 V0 / Delta_{nn'} for all pairs, V0 = sqrt(3) sigma.

    Spacings are differenced in the input's own arithmetic, so an
    extended-precision spectrum keeps near-degenerate doublets meaningful.
    """
    E = list(_as_spectrum(h0))
    d = len(E)
    V0 = math.sqrt(3.0) * sigma
    alphas = []
    for n in range(d):
        for m in range(n + 1, d):
            delta = E[m] - E[n]
            if isinstance(delta, float) and abs(delta) < 1e-13:
                raise ValueError(
                    f"levels {n} and {m} are degenerate at double precision"
                    f" (spacing {abs(delta):.2e}); supply an"
                    f" extended-precision spectrum")
            delta = abs(float(delta))
            if delta == 0.0:
                raise ValueError(f"levels {n} and {m} are exactly degenerate")
            alphas.append(2.0 * V0 / delta)
    return np.asarray(alphas)


def crossing_density_analytic(h0, kind: str, lam,
                              sigma: float | None = None) -> np.ndarray:
    """P(|lambda|) = (2/I) sum_pairs alpha F(alpha |lambda|).

    I is the pair count; each pair contributes a kernel translated by its
    unperturbed spacing, and the total integrates to one over [0, inf).
    """
    fkind = _F_KIND[kind]
    if sigma is None:
        sigma = sigma_for(h0, "diag-rect" if fkind == "rect" else "diag-norm")
    alphas = _pair_alphas(h0, sigma)
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.zeros_like(lam_arr)
    # chunk the pair axis; alpha spans many decades for critical spectra
    for k in range(0, len(alphas), 256):
        a = alphas[k:k + 256, None]
        out += (a * F_function(fkind, a * lam_arr[None, :])).sum(axis=0)
    out *= 2.0 / len(alphas)
    return out if np.ndim(lam) else float(out[0])


def crossing_density_integral(h0, kind: str, sigma: float | None = None) -> float:
    """Numerical integral of the analytic crossing density over [0, inf).

    Each pair term integrates substitution-exactly to (2/I)(1/2); the
    quadrature below checks the kernel normalization rather than assuming
    it.
    """
    from scipy.integrate import quad
    fkind = _F_KIND[kind]
    val, _ = quad(lambda x: F_function(fkind, x), 0.0, np.inf,
                  epsabs=1e-12, limit=200)
    return 2.0 * val


def _density_quantile(h0, kind: str, sigma: float, q: float) -> float:
    """|lambda| below which a fraction q of the analytic density lies."""
    grid = np.geomspace(1e-6, 1e3, 4001)
    P = crossing_density_analytic(h0, kind, grid, sigma=sigma)
    mass = np.cumsum(0.5 * (P[1:] + P[:-1]) * np.diff(grid))
    total = mass[-1]
    idx = int(np.searchsorted(mass, q * total))
    return float(grid[min(idx + 1, len(grid) - 1)])


@dataclass(frozen=True)
class RadialHistogram:
    """Binned radial density, normalized to unit integral over its range."""

    edges: np.ndarray
    counts: np.ndarray
    n_total: int
    meta: dict = field(default_factory=dict)

    @property
    def density(self) -> np.ndarray:
        captured = self.counts.sum()
        if captured == 0:
            return np.zeros_like(self.counts, dtype=float)
        return self.counts / (captured * np.diff(self.edges))

    @property
    def captured_fraction(self) -> float:
        return float(self.counts.sum() / self.n_total) if self.n_total else 0.0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def as_dict(self) -> dict:
        return {"edges": [float(x) for x in self.edges],
                "counts": [int(c) for c in self.counts],
                "n_total": self.n_total,
                "captured_fraction": self.captured_fraction,
                "meta": self.meta}


@dataclass(frozen=True)
class PlaneHistogram:
    """Binned EP positions over a rectangle of the coupling plane."""

    re_edges: np.ndarray
    im_edges: np.ndarray
    counts: np.ndarray  # (n_re, n_im)
    n_total: int
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"re_edges": [float(x) for x in self.re_edges],
                "im_edges": [float(x) for x in self.im_edges],
                "counts": [[int(c) for c in row] for row in self.counts],
                "n_total": self.n_total, "meta": self.meta}


def crossing_samples_diagonal(h0, spec: EnsembleSpec,
                              edges: np.ndarray | None = None,
                              return_values: bool = False):
    """Empirical crossing histogram for a diagonal ensemble.

    A diagonal V shifts each level linearly, so every pair (n, n') crosses
    exactly once at lambda = (E_n' - E_n)/(V_nn - V_n'n'); the histogram
    accumulates |lambda| over all pairs and samples.
    """
    if spec.kind not in ("diag-rect", "diag-norm"):
        raise ValueError("crossing formula applies to diagonal kinds only")
    E = _as_spectrum(h0).astype(float)
    if len(E) != spec.d:
        raise ValueError("spec.d does not match h0")
    iu, ju = np.triu_indices(spec.d, k=1)
    deltas = E[ju] - E[iu]
    if edges is None:
        hi = _density_quantile(h0, spec.kind, spec.sigma, 0.99)
        edges = np.linspace(0.0, hi, 61)
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    n_total = 0
    n_positive = 0
    values = [] if return_values else None
    for i in range(spec.samples):
        diag = np.diag(sample_perturbation(spec, i))
        with np.errstate(divide="ignore"):
            lam = deltas / (diag[iu] - diag[ju])
        lam = lam[np.isfinite(lam)]
        n_total += lam.size
        n_positive += int((lam > 0).sum())
        c, _ = np.histogram(np.abs(lam), bins=edges)
        counts += c
        if return_values:
            values.append(lam)
    hist = RadialHistogram(edges=np.asarray(edges, dtype=float),
                           counts=counts, n_total=n_total,
                           meta={"spec": spec.as_dict(),
                                 "n_positive": n_positive})
    if return_values:
        return hist, np.concatenate(values)
    return hist


# ---------------------------------------------------------------------------
# per-sample EP location (nondiagonal kinds)


def _two_level_seeds(E: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Upper-half two-level EP estimates for every pair.

    Truncating to the pair (n, n') gives a 2x2 pencil whose EPs sit at
    lambda = (E_n' - E_n)/(V_nn - V_n'n' -+ 2i V_nn'); the + root of each
    conjugate pair seeds the Newton iteration.
    """
    iu, ju = np.triu_indices(len(E), k=1)
    delta = E[ju] - E[iu]
    dv = V[iu, iu] - V[ju, ju]
    w = V[iu, ju]
    with np.errstate(divide="ignore", invalid="ignore"):
        seeds = np.concatenate([delta / (dv - 2j * w), delta / (dv + 2j * w)])
    seeds = seeds[np.isfinite(seeds)]
    seeds = np.where(seeds.imag < 0, seeds.conj(), seeds)
    return seeds


def _inside(lam: complex, rect, pad: float = 0.0) -> bool:
    re0, re1, im0, im1 = rect
    return (re0 - pad <= lam.real <= re1 + pad
            and im0 - pad <= lam.imag <= im1 + pad)


def _dedup_points(points: list[complex], radius: float) -> list[complex]:
    out: list[complex] = []
    for z in sorted(points, key=lambda z: (z.real, z.imag)):
        if all(abs(z - w) > radius for w in out):
            out.append(z)
    return out


class CollectionError(RuntimeError):
    """EP collection failed to reach a winding-consistent set."""


def _newton_sweep(family, seeds, rect, gap_tol, dedup_radius) -> list[complex]:
    found: list[complex] = []
    for s in seeds:
        res = disc_newton(family, complex(s), step_cap=4.0 * abs(s) + 1.0)
        if res is None:
            continue
        lam, gap, _ = res
        if lam.imag < 0:
            lam = lam.conjugate()
        if gap <= gap_tol and _inside(lam, rect):
            found.append(lam)
    return _dedup_points(found, dedup_radius)


def _grid_seeds(rect, n: int = 5) -> np.ndarray:
    re0, re1, im0, im1 = rect
    re = np.linspace(re0, re1, n + 2)[1:-1]
    im = np.linspace(im0, im1, n + 2)[1:-1]
    return (re[:, None] + 1j * im[None, :]).ravel()


def collect_eps(family: HamiltonianFamily, rect, gap_tol: float | None = None,
                max_depth: int = 6) -> list[complex]:
    """All upper-half EPs of one sample inside a rectangle.

    Newton on the discriminant log derivative from two-level seeds, then a
    completeness proof: the winding number of the discriminant around the
    rectangle must equal the number of points found.  Cells with a deficit
    are subdivided and reseeded from interior grids.
    """
    rect = tuple(map(float, rect))
    scale = max(1.0, float(np.abs(np.diag(family.H0)).max()))
    if gap_tol is None:
        gap_tol = 1e-6 * scale
    dedup_radius = 1e-7 * max(1.0, max(abs(rect[0]), abs(rect[1]), rect[3]))
    seeds = _two_level_seeds(np.diag(family.H0).real, family.V)
    pad = 0.1 * max(rect[1] - rect[0], rect[3] - rect[2])
    seeds = [s for s in seeds if _inside(s, rect, pad)]
    found = _newton_sweep(family, seeds, rect, gap_tol, dedup_radius)

    def verify(cell, pts, depth) -> list[complex]:
        w = _safe_winding(family, cell)
        if w == len(pts):
            return pts
        if w < len(pts):
            # duplicate survived dedup, or a point sits on the boundary
            merged = _dedup_points(pts, 10.0 * dedup_radius)
            if w == len(merged):
                return merged
            raise CollectionError(
                f"winding {w} below located count {len(pts)} in {cell}")
        extra = _newton_sweep(family, _grid_seeds(cell), cell, gap_tol,
                              dedup_radius)
        pts = _dedup_points(pts + extra, dedup_radius)
        if w == len(pts):
            return pts
        if depth >= max_depth:
            raise CollectionError(
                f"winding {w} vs {len(pts)} EPs in {cell} at depth cap")
        re0, re1, im0, im1 = cell
        rm, im_m = 0.5 * (re0 + re1), 0.5 * (im0 + im1)
        out: list[complex] = []
        for sub in ((re0, rm, im0, im_m), (rm, re1, im0, im_m),
                    (re0, rm, im_m, im1), (rm, re1, im_m, im1)):
            inside = [p for p in pts if _inside(p, sub)]
            out.extend(verify(sub, inside, depth + 1))
        return _dedup_points(out, dedup_radius)

    found = verify(rect, found, 0)
    return sorted(found, key=lambda z: (z.real, z.imag))


@dataclass(frozen=True)
class EPCollection:
    """Accumulated EP positions of an ensemble run."""

    positions: np.ndarray  # complex, upper half plane
    plane: PlaneHistogram
    radial: RadialHistogram
    failures: tuple[int, ...]
    meta: dict

    def as_dict(self) -> dict:
        return {"n_eps": int(len(self.positions)),
                "plane": self.plane.as_dict(),
                "radial": self.radial.as_dict(),
                "failures": list(self.failures), "meta": self.meta}


DEFAULT_EP_REGION = (-3.0, 3.0, 1e-4, 3.0)


def ep_histogram(spec: EnsembleSpec, h0, rect=DEFAULT_EP_REGION,
                 r_edges: np.ndarray | None = None,
                 plane_bins: int = 60,
                 failure_budget: float = 0.01) -> EPCollection:
    """EP positions accumulated over an ensemble, with histograms.

    Nondiagonal kinds only: diagonal perturbations keep all degeneracies on
    the real axis.  Per-sample failures (winding deficits that survive
    reseeding) are excluded and counted; more than ``failure_budget`` of
    the ensemble aborts the run.
    """
    if spec.kind not in ("full", "offd"):
        raise ValueError("ep_histogram needs a nondiagonal kind")
    E = _as_spectrum(h0).astype(float)
    if len(E) != spec.d:
        raise ValueError("spec.d does not match h0")
    H0 = np.diag(E)
    rect = tuple(map(float, rect))
    positions: list[complex] = []
    failures: list[int] = []
    max_failures = max(1, int(failure_budget * spec.samples))
    for i in range(spec.samples):
        V = sample_perturbation(spec, i)
        family = custom_family(H0, V, model="ensemble")
        try:
            positions.extend(collect_eps(family, rect))
        except (CollectionError, RefineError):
            failures.append(i)
            if len(failures) > max_failures:
                raise RuntimeError(
                    f"{len(failures)} of {i + 1} samples failed EP"
                    f" collection; budget is {max_failures}")
    pos = np.asarray(positions, dtype=complex)
    re_edges = np.linspace(rect[0], rect[1], plane_bins + 1)
    im_edges = np.linspace(rect[2], rect[3], plane_bins + 1)
    counts2d, _, _ = np.histogram2d(pos.real, pos.imag,
                                    bins=[re_edges, im_edges])
    if r_edges is None:
        rmax = math.hypot(max(abs(rect[0]), abs(rect[1])), rect[3])
        r_edges = np.linspace(0.0, rmax, 61)
    radii = np.abs(pos)
    r_counts, _ = np.histogram(radii, bins=r_edges)
    meta = {"spec": spec.as_dict(), "rect": list(rect),
            "samples_used": spec.samples - len(failures)}
    plane = PlaneHistogram(re_edges=re_edges, im_edges=im_edges,
                           counts=counts2d.astype(np.int64),
                           n_total=len(pos), meta=meta)
    radial = RadialHistogram(edges=np.asarray(r_edges, dtype=float),
                             counts=r_counts, n_total=len(pos), meta=meta)
    return EPCollection(positions=pos, plane=plane, radial=radial,
                        failures=tuple(failures), meta=meta)


# ---------------------------------------------------------------------------
# nearest-EP statistics


def _nearest_ep_sample(family: HamiltonianFamily, n_seeds: int = 12,
                       reseed_rounds: int = 3) -> complex:
    """Nearest EP to the origin for one sample, winding-certified.

    The candidate is Newton-refined from the smallest two-level seeds; a
    square around the origin through the candidate must then wind exactly
    twice (the candidate and its conjugate), proving nothing sits closer.
    """
    E = np.diag(family.H0).real
    scale = max(1.0, float(np.abs(E).max()))
    seeds = _two_level_seeds(E, family.V)
    seeds = seeds[np.argsort(np.abs(seeds))][:n_seeds]
    cands: list[complex] = []
    for s in seeds:
        res = disc_newton(family, complex(s), step_cap=4.0 * abs(s))
        if res is None:
            continue
        lam, gap, _ = res
        if gap <= 1e-6 * scale and abs(lam) > 0:
            cands.append(lam.conjugate() if lam.imag < 0 else lam)
    if not cands:
        raise CollectionError("no two-level seed converged")
    cand = min(cands, key=abs)
    for _ in range(reseed_rounds):
        s = abs(cand) * (1.0 - 1e-9)
        square = (-s, s, -s, s)
        if max(abs(cand.real), abs(cand.imag)) >= s:
            # candidate hugs an axis; the inscribed square cannot hold it.
            # certify the smaller square is empty instead
            w = _safe_winding(family, square)
            if w == 0:
                return cand
        else:
            w = _safe_winding(family, square)
            if w == 2:
                return cand
        if w == 0:
            return cand
        extra = _newton_sweep(family, _grid_seeds(square, n=6), square,
                              1e-6 * scale, 1e-9 * max(1.0, s))
        closer = [z for z in extra if 0 < abs(z) < abs(cand)]
        if not closer:
            raise CollectionError(
                f"winding {w} around origin but no closer EP found")
        cand = min(closer, key=abs)
    raise CollectionError("nearest-EP certification did not settle")


@dataclass(frozen=True)
class NearestEPStats:
    """Scaling of the nearest-EP distance with dimension."""

    dims: tuple[int, ...]
    mean_abs: tuple[float, ...]   # ensemble mean of |lambda_1| per d
    thr: tuple[float, ...]        # sample-wide minimum per d
    n_samples: tuple[int, ...]
    mean_exponent: float
    thr_exponent: float
    meta: dict

    def as_dict(self) -> dict:
        return {"dims": list(self.dims),
                "mean_abs": list(self.mean_abs), "thr": list(self.thr),
                "n_samples": list(self.n_samples),
                "mean_exponent": self.mean_exponent,
                "thr_exponent": self.thr_exponent, "meta": self.meta}


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    A = np.stack([np.log(x), np.ones(len(x))], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    return float(coef[0])


def nearest_ep_stats(h0_name: str, dims: Sequence[int], kind: str = "full",
                     samples: int = 500, seed: int = 0,
                     omega: float = 1.0, a: float = 3.0,
                     failure_budget: float = 0.01) -> NearestEPStats:
    """Per-dimension nearest-EP distances and their log-log exponents."""
    dims = tuple(int(d) for d in dims)
    means, thrs, ns = [], [], []
    for d in dims:
        E = h0_spectrum(h0_name, d, omega=omega, a=a)
        spec = EnsembleSpec(kind=kind, d=d, sigma=sigma_for(E, kind),
                            seed=seed, samples=samples)
        H0 = np.diag(np.asarray(E, dtype=float))
        vals = []
        failures = 0
        max_failures = max(1, int(failure_budget * samples))
        for i in range(samples):
            family = custom_family(H0, sample_perturbation(spec, i),
                                   model="ensemble")
            try:
                vals.append(abs(_nearest_ep_sample(family)))
            except (CollectionError, RefineError):
                failures += 1
                if failures > max_failures:
                    raise RuntimeError(
                        f"d={d}: {failures} nearest-EP failures exceed the"
                        f" budget {max_failures}")
        means.append(float(np.mean(vals)))
        thrs.append(float(np.min(vals)))
        ns.append(len(vals))
    dims_arr = np.asarray(dims, dtype=float)
    return NearestEPStats(
        dims=dims, mean_abs=tuple(means), thr=tuple(thrs),
        n_samples=tuple(ns),
        mean_exponent=_loglog_slope(dims_arr, np.asarray(means)),
        thr_exponent=_loglog_slope(dims_arr, np.asarray(thrs)),
        meta={"h0": h0_name, "kind": kind, "samples": samples, "seed": seed,
              "generator": GENERATOR_NAME})
