"""Collective spin operators and linearly parameterized Hamiltonian families.

All model families share one shape: a real symmetric ``H0`` plus a real
symmetric perturbation direction ``V``, combined as ``H(lambda) = H0 +
lambda*V``.  For real ``lambda`` this is an ordinary Hermitian spectral
problem; for complex ``lambda`` the matrix is complex symmetric and its
eigenvalue branches carry the exceptional points studied by the rest of the
package.

Spin operators use the standard spin-j convention ([J1, J2] = i J3,
j = N/2, d = N + 1) in the |j, m> basis with m ascending.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

__all__ = [
    "SpinOperators",
    "HamiltonianFamily",
    "GroundStateValue",
    "SweepResult",
    "build_spin_ops",
    "family_qpt1",
    "family_qpt2",
    "family_qpt1p",
    "family_ho",
    "custom_family",
    "evaluate_at",
    "ground_state_observable",
    "real_sweep",
]

# Dense construction only; reject dimensions that could not be diagonalized
# dense anyway.
_MAX_DIMENSION = 1 << 16

_SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class SpinOperators:
    """Spin-j operator matrices in the |j,m> basis, m = -j..+j ascending.

    Attributes
    ----------
    N : int
        Particle count; the represented spin is j = N/2.
    j : float
        Spin quantum number.
    d : int
        Matrix dimension N + 1.
    J1, J2, J3 : ndarray
        Cartesian components; J1 and J3 are real, J2 is purely imaginary.
    Jplus, Jminus : ndarray
        Ladder operators J1 +- i*J2.
    """

    N: int
    j: float
    d: int
    J1: np.ndarray
    J2: np.ndarray
    J3: np.ndarray
    Jplus: np.ndarray
    Jminus: np.ndarray


@dataclass(frozen=True)
class HamiltonianFamily:
    """A linear pencil H(lambda) = H0 + lambda*V with model metadata.

    ``critical`` records the real critical coupling of the underlying phase
    transition when the model has one (qpt1: 0, qpt2: 1, qpt1p: 1/(1+c^2)).
    ``ops`` keeps the spin operators used for construction so observables can
    be evaluated without rebuilding them; it is None for custom families.
    """

    model: str
    H0: np.ndarray
    V: np.ndarray
    params: dict = field(default_factory=dict)
    critical: float | None = None
    ops: SpinOperators | None = None

    @property
    def d(self) -> int:
        return self.H0.shape[0]

    def __post_init__(self):
        _require_real_symmetric(self.H0, "H0")
        _require_real_symmetric(self.V, "V")
        if self.H0.shape != self.V.shape:
            raise ValueError("H0 and V must have the same shape")


@dataclass(frozen=True)
class GroundStateValue:
    """Ground-state expectation value, with degeneracy bookkeeping.

    When the lowest level is degenerate to numerical resolution the two
    branch values are reported and ``degenerate`` is set; ``value`` then
    holds their mean.
    """

    value: float
    degenerate: bool = False
    branch_values: tuple[float, float] | None = None


def _require_real_symmetric(M: np.ndarray, name: str) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if np.iscomplexobj(M):
        if np.abs(M.imag).max(initial=0.0) != 0.0:
            raise ValueError(f"{name} must be real")
    scale = max(np.abs(M).max(initial=0.0), 1.0)
    asym = np.abs(M - M.T).max(initial=0.0)
    if asym > _SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} asymmetry {asym:.3e} exceeds tolerance")


def build_spin_ops(N: int) -> SpinOperators:
    """Construct the spin-j operator set for N spins 1/2 (j = N/2).

    Parameters
    ----------
    N : int
        Particle count, N >= 1.  The fully symmetric subspace has dimension
        d = N + 1.

    Returns
    -------
    SpinOperators
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    d = N + 1
    if d > _MAX_DIMENSION:
        raise ValueError(f"dimension {d} exceeds the dense-matrix limit")
    j = N / 2.0
    m = -j + np.arange(d)
    J3 = np.diag(m)
    # raising coefficients sqrt((j-m)(j+m+1)); both factors are exact
    # integers for any N, so the only rounding is the square root itself
    c = np.sqrt((j - m[:-1]) * (j + m[:-1] + 1.0))
    Jplus = np.diag(c, k=-1)  # maps column m to row m+1
    Jminus = Jplus.T.copy()
    J1 = (Jplus + Jminus) / 2.0
    J2 = (Jplus - Jminus) / 2j
    return SpinOperators(N=N, j=j, d=d, J1=J1, J2=J2, J3=J3,
                         Jplus=Jplus.astype(complex), Jminus=Jminus.astype(complex))


def family_qpt1(N: int, a: float = 3.0) -> HamiltonianFamily:
    """First-order-transition family: H0 = J3 - (a/j) J1^2, critical at 0.

    The perturbation V = -J1 - (1/2j)(J1 J3 + J3 J1) breaks the lambda ->
    -lambda symmetry of H0 only through its sign, so the real spectrum is
    symmetric under lambda -> -lambda.

    Parameters
    ----------
    N : int
        Particle count.
    a : float
        Quadratic coupling, a > 1/2 (first-order regime).
    """
    if not a > 0.5:
        raise ValueError(f"qpt1 requires a > 1/2, got a={a}")
    ops = build_spin_ops(N)
    J1sq = ops.J1 @ ops.J1
    H0 = ops.J3 - (a / ops.j) * J1sq
    anti = ops.J1 @ ops.J3 + ops.J3 @ ops.J1
    V = -ops.J1 - anti / (2.0 * ops.j)
    H0 = (H0 + H0.T) / 2.0
    V = (V + V.T) / 2.0
    return HamiltonianFamily(model="qpt1", H0=H0, V=V,
                             params={"N": N, "a": a}, critical=0.0, ops=ops)


def family_qpt2(N: int) -> HamiltonianFamily:
    """Second-order-transition family: H0 = J3, V = -(1/2j) J1^2."""
    ops = build_spin_ops(N)
    V = -(ops.J1 @ ops.J1) / (2.0 * ops.j)
    V = (V + V.T) / 2.0
    return HamiltonianFamily(model="qpt2", H0=ops.J3.copy(), V=V,
                             params={"N": N}, critical=1.0, ops=ops)


def family_qpt1p(N: int, c: float = 4.0) -> HamiltonianFamily:
    """Asymmetric first-order family: H0 = J3, V = -(1/2j)[J1 + c(J3+j)]^2.

    The critical coupling 1/(1 + c^2) is recorded in the metadata.
    """
    if c == 0:
        raise ValueError("qpt1p requires c != 0 (c = 0 degenerates to qpt2)")
    ops = build_spin_ops(N)
    B = ops.J1 + c * (ops.J3 + ops.j * np.eye(ops.d))
    V = -(B @ B) / (2.0 * ops.j)
    V = (V + V.T) / 2.0
    return HamiltonianFamily(model="qpt1p", H0=ops.J3.copy(), V=V,
                             params={"N": N, "c": c},
                             critical=1.0 / (1.0 + c * c), ops=ops)


def family_ho(d: int, omega: float = 1.0) -> HamiltonianFamily:
    """Equidistant-spectrum family: H0 = diag(omega*1, ..., omega*d), V = 0.

    The zero perturbation is a placeholder; ensemble drivers attach sampled
    perturbations to this H0.
    """
    if d < 2:
        raise ValueError(f"family_ho requires d >= 2, got {d}")
    if not omega > 0:
        raise ValueError(f"family_ho requires omega > 0, got {omega}")
    H0 = np.diag(omega * np.arange(1, d + 1, dtype=float))
    return HamiltonianFamily(model="ho", H0=H0, V=np.zeros((d, d)),
                             params={"d": d, "omega": omega})


def custom_family(H0: np.ndarray, V: np.ndarray, model: str = "custom",
                  params: dict | None = None,
                  critical: float | None = None) -> HamiltonianFamily:
    """Wrap explicit (H0, V) matrices as a family."""
    H0 = np.asarray(H0, dtype=float)
    V = np.asarray(V, dtype=float)
    return HamiltonianFamily(model=model, H0=H0, V=V,
                             params=dict(params or {}), critical=critical)


def evaluate_at(family: HamiltonianFamily, lam: complex) -> np.ndarray:
    """Return H0 + lambda*V; real symmetric for real lambda, else complex symmetric."""
    if np.iscomplexobj(np.asarray(lam)) and np.imag(lam) != 0.0:
        return family.H0 + complex(lam) * family.V
    return family.H0 + float(np.real(lam)) * family.V


def _observable_matrix(family: HamiltonianFamily, obs: str) -> np.ndarray:
    if family.ops is None:
        raise ValueError("observable evaluation needs the spin-operator metadata")
    if obs == "J1":
        return family.ops.J1
    if obs == "I":
        return family.ops.J3 + family.ops.j * np.eye(family.ops.d)
    raise ValueError(f"unknown observable tag {obs!r} (expected 'J1' or 'I')")


def ground_state_observable(family: HamiltonianFamily, lam: float,
                            obs: str = "I",
                            degeneracy_rtol: float = 1e-12) -> GroundStateValue:
    """Ground-state expectation of J1 or I = J3 + j at real coupling lambda.

    A ground level degenerate to ``degeneracy_rtol`` (relative to the
    spectral span) returns both branch expectation values with the
    ``degenerate`` flag set.
    """
    if np.imag(lam) != 0.0:
        raise ValueError("ground_state_observable is defined for real lambda only")
    O = _observable_matrix(family, obs)
    H = evaluate_at(family, float(np.real(lam)))
    E, U = np.linalg.eigh(H)
    span = max(E[-1] - E[0], 1.0)
    if E[1] - E[0] <= degeneracy_rtol * span:
        v0, v1 = U[:, 0], U[:, 1]
        a = float(np.real(v0 @ O @ v0))
        b = float(np.real(v1 @ O @ v1))
        return GroundStateValue(value=(a + b) / 2.0, degenerate=True,
                                branch_values=(a, b))
    v = U[:, 0]
    return GroundStateValue(value=float(np.real(v @ O @ v)))


@dataclass(frozen=True)
class SweepResult:
    """Real-axis spectrum sweep: sorted eigenvalues per coupling."""

    lam: np.ndarray          # (steps,)
    energies: np.ndarray     # (steps, d), ascending along axis 1

    def to_csv(self, dest: str | IO[str]) -> None:
        """Write `lambda,E1,...,Ed` rows with 17 significant digits."""
        d = self.energies.shape[1]
        header = "lambda," + ",".join(f"E{n}" for n in range(1, d + 1))
        lines = [header]
        for x, row in zip(self.lam, self.energies):
            lines.append(",".join(f"{v:.17g}" for v in (x, *row)))
        text = "\n".join(lines) + "\n"
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w") as fh:
                fh.write(text)


def real_sweep(family: HamiltonianFamily, lam_min: float, lam_max: float,
               steps: int) -> SweepResult:
    """Diagonalize H(lambda) on a uniform real grid.

    Returns eigenvalues sorted ascending at each grid point (no branch
    continuity is implied; use eigentrack for labeled branches).
    """
    if not lam_min < lam_max:
        raise ValueError("need lam_min < lam_max")
    if steps < 2:
        raise ValueError("need steps >= 2")
    grid = np.linspace(lam_min, lam_max, steps)
    # one stacked Hermitian solve; eigh returns ascending eigenvalues
    H = family.H0[None, :, :] + grid[:, None, None] * family.V[None, :, :]
    energies = np.linalg.eigvalsh(H)
    return SweepResult(lam=grid, energies=energies)
