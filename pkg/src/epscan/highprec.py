"""Extended-precision spectra for regimes double precision cannot resolve.

Two situations force arbitrary precision: doublet splittings of the
first-order critical Hamiltonian decay exponentially in N and drop below
machine resolution near N ~ 22, and the exceptional points tied to those
doublets have Im lambda of the same size.  Everything here rebuilds the model
matrices from scratch in mpmath arithmetic (the double-precision matrices
already carry 1e-16 entry errors, which is too coarse at those scales).
"""
from __future__ import annotations

import numpy as np
from mpmath import mp, mpf, mpc, matrix as mp_matrix
import mpmath

from .spinmodels import HamiltonianFamily

__all__ = [
    "family_mp_matrices",
    "mp_symmetric_spectrum",
    "mp_complex_eigvals",
    "mp_pair_s",
    "mp_secant_pair",
]


def _mp_spin_j1_j3(N: int):
    """J1 and J3 for spin j = N/2 at the current mp precision."""
    d = N + 1
    J1 = mp.zeros(d, d)
    J3 = mp.zeros(d, d)
    for i in range(d):
        J3[i, i] = mpf(2 * i - N) / 2  # m = -j + i
    for i in range(d - 1):
        c = mp.sqrt(mpf((N - i) * (i + 1))) / 2  # exact integer product
        J1[i + 1, i] = c
        J1[i, i + 1] = c
    return J1, J3


def family_mp_matrices(family: HamiltonianFamily, dps: int):
    """Rebuild (H0, V) of a model family as mpmath matrices at dps digits.

    Spin families are reconstructed from the exact ladder algebra; other
    families convert their float entries (exactly, floats being dyadic).
    """
    with mp.workdps(dps):
        model = family.model
        if model in ("qpt1", "qpt2", "qpt1p"):
            N = int(family.params["N"])
            J1, J3 = _mp_spin_j1_j3(N)
            j = mpf(N) / 2
            if model == "qpt1":
                a = mpf(family.params["a"])
                H0 = J3 - (a / j) * (J1 * J1)
                V = -J1 - (J1 * J3 + J3 * J1) / (2 * j)
            elif model == "qpt2":
                H0 = J3
                V = -(J1 * J1) / (2 * j)
            else:
                c = mpf(family.params["c"])
                d = N + 1
                B = J1 + c * (J3 + j * mp.eye(d))
                H0 = J3
                V = -(B * B) / (2 * j)
            return H0, V
        d = family.d
        H0 = mp_matrix([[mpf(float(x)) for x in row] for row in family.H0])
        V = mp_matrix([[mpf(float(x)) for x in row] for row in family.V])
        return H0, V


def mp_symmetric_spectrum(M, dps: int) -> list:
    """Ascending eigenvalues of a real symmetric mp matrix."""
    with mp.workdps(dps):
        E = mp.eigsy(M, eigvals_only=True)
        return sorted(E[i] for i in range(E.rows))


def mp_complex_eigvals(H0, V, lam, dps: int) -> list:
    """Eigenvalues of H0 + lam*V at dps digits (general complex solver)."""
    with mp.workdps(dps):
        lam = mpc(lam)
        A = H0 + lam * V
        E = mp.eig(A, left=False, right=False)
        return list(E)


def _closest_to_hints(E: list, hints) -> tuple[int, int]:
    h1, h2 = hints
    d1 = [abs(e - h1) for e in E]
    d2 = [abs(e - h2) for e in E]
    a = min(range(len(E)), key=d1.__getitem__)
    b = min(range(len(E)), key=d2.__getitem__)
    if a == b:
        # both hints grabbed the same eigenvalue; give the second hint the
        # best remaining one
        rest = [k for k in range(len(E)) if k != a]
        b = min(rest, key=d2.__getitem__)
    return a, b


def mp_pair_s(H0, V, lam, hints, dps: int):
    """s(lambda) = (E_a - E_b)^2 for the pair nearest the hinted values."""
    E = mp_complex_eigvals(H0, V, lam, dps)
    a, b = _closest_to_hints(E, hints)
    with mp.workdps(dps):
        s = (E[a] - E[b]) ** 2
    return s, (E[a], E[b])


def mp_secant_pair(H0, V, lam0, hints, dps: int = 50, max_iter: int = 40):
    """Secant iteration on the analytic pair function s(lambda).

    s has a simple zero at the exceptional point of the hinted pair, so the
    secant update converges superlinearly from any start inside the local
    analyticity basin.  Returns (lambda_ep, |s| at it, final pair values).
    """
    with mp.workdps(dps):
        x0 = mpc(lam0)
        # second start displaced by a relative nudge in both components
        eps = mpf(10) ** (-8)
        x1 = x0 * (1 + eps) + mpc(0, 1) * eps * (abs(x0) + eps)
        s0, hints = mp_pair_s(H0, V, x0, hints, dps)
        s1, hints = mp_pair_s(H0, V, x1, hints, dps)
        best = (abs(s1), x1, hints)
        target = mpf(10) ** (-(dps - 6))
        for _ in range(max_iter):
            denom = s1 - s0
            if denom == 0:
                break
            x2 = x1 - s1 * (x1 - x0) / denom
            s2, hints = mp_pair_s(H0, V, x2, hints, dps)
            x0, s0, x1, s1 = x1, s1, x2, s2
            if abs(s1) < best[0]:
                best = (abs(s1), x1, hints)
            if abs(x1 - x0) <= abs(x1) * target or abs(s1) == 0:
                break
        return best[1], best[0], best[2]
