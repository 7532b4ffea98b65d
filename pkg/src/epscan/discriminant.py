"""Discriminant-based exceptional point oracle.

Independent of the monodromy machinery: the characteristic discriminant
D(lambda) = Res_E(p, dp/dE) of p(E; lambda) = det(E - H0 - lambda V) is a
polynomial in lambda of degree at most d(d-1) whose upper-half-plane zeros
are exactly the exceptional points.  Its coefficients are recovered by
sampling Sylvester-resultant values on a circle (the characteristic
polynomial itself comes from power traces and Newton's identities, never
from an eigensolver) followed by an inverse DFT; the roots come from a
multiprecision polynomial solver.

Everything runs in mpmath arithmetic because the coefficient spread of
degree ~50 discriminants exhausts double precision immediately.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np
from mpmath import mp, mpc, mpf

__all__ = [
    "DiscriminantError",
    "D_ORACLE_MAX",
    "char_poly_coeffs",
    "discriminant_value",
    "discriminant_coeffs",
    "discriminant_roots",
    "discriminant_eps",
    "rational_similar_family",
    "discriminant_coeffs_exact",
]

D_ORACLE_MAX = 8


class DiscriminantError(RuntimeError):
    pass


def char_poly_coeffs(H) -> list:
    """Monic characteristic polynomial coefficients [1, c1, ..., cd].

    Newton's identities on the power traces p_k = tr(H^k); no eigensolver
    involved, so the result is correct to working precision even at (and
    beyond) spectral degeneracies.
    """
    d = H.rows
    traces = []
    P = H
    for _ in range(d):
        traces.append(sum(P[i, i] for i in range(d)))
        P = P * H
    c = [mpf(1)]
    for k in range(1, d + 1):
        acc = traces[k - 1]
        for i in range(1, k):
            acc += c[i] * traces[k - 1 - i]
        c.append(-acc / k)
    return c


def _sylvester_resultant(p: list, q: list):
    """det of the Sylvester matrix of polynomials p (deg m) and q (deg n)."""
    m = len(p) - 1
    n = len(q) - 1
    size = m + n
    S = mp.zeros(size, size)
    for r in range(n):
        for k, a in enumerate(p):
            S[r, r + k] = a
    for r in range(m):
        for k, b in enumerate(q):
            S[n + r, r + k] = b
    return mp.det(S)


def discriminant_value(H0, V, lam):
    """Res_E(p, p') of the characteristic polynomial of H0 + lam*V."""
    H = H0 + lam * V
    c = char_poly_coeffs(H)
    dc = [c[k] * (len(c) - 1 - k) for k in range(len(c) - 1)]
    return _sylvester_resultant(c, dc)


def discriminant_coeffs(H0, V, precision: int = 100, radius: float = 1.0
                        ) -> list:
    """Real coefficients of D(lambda), constant term first.

    D has degree at most d(d-1); sampling it at d(d-1)+1 roots of unity
    (scaled by ``radius``) and inverting the DFT recovers the coefficients
    exactly up to arithmetic error.  The family is real symmetric, so D is
    real on the real axis and the coefficients must be real; the imaginary
    contamination of the inverse DFT is the accuracy diagnostic.
    """
    d = H0.rows
    deg = d * (d - 1)
    K = deg + 1
    with mp.workdps(precision):
        R = mpf(radius)
        vals = []
        for jj in range(K):
            w = mp.e ** (2j * mp.pi * jj / K)
            vals.append(discriminant_value(H0, V, R * w))
        coeffs = []
        scale_max = mpf(0)
        imag_max = mpf(0)
        for m in range(K):
            acc = mpc(0)
            for jj in range(K):
                acc += vals[jj] * mp.e ** (-2j * mp.pi * jj * m / K)
            acc /= K * R ** m
            coeffs.append(acc.real)
            scale_max = max(scale_max, abs(acc.real))
            imag_max = max(imag_max, abs(acc.imag))
        if scale_max == 0:
            raise DiscriminantError("discriminant vanished identically; the "
                                    "family has a persistent degeneracy")
        if imag_max > scale_max * mpf(10) ** (-precision // 3):
            raise DiscriminantError(
                "inverse DFT left significant imaginary parts; increase "
                "precision")
        return coeffs


def _trim_leading(coeffs: list, precision: int) -> list:
    """Drop (numerically zero) leading coefficients; root count at infinity
    drops with them."""
    top = max(abs(c) for c in coeffs)
    cut = top * mpf(10) ** (-(precision // 2))
    k = len(coeffs)
    while k > 1 and abs(coeffs[k - 1]) < cut:
        k -= 1
    return coeffs[:k]


def discriminant_roots(H0, V, precision: int = 100, radius: float = 1.0
                       ) -> list:
    """All finite zeros of the characteristic discriminant, as mpc values."""
    with mp.workdps(precision):
        coeffs = discriminant_coeffs(H0, V, precision, radius)
        coeffs = _trim_leading(coeffs, precision)
        if len(coeffs) <= 1:
            return []
        desc = list(reversed(coeffs))
        try:
            roots, err = mp.polyroots(desc, maxsteps=200,
                                      extraprec=2 * precision, error=True)
        except mp.NoConvergence as exc:
            raise DiscriminantError(
                "polynomial root refinement did not converge; increase "
                "precision") from exc
        scale = max(mpf(1), max(abs(r) for r in roots))
        if err > scale * mpf(10) ** (-(precision // 3)):
            raise DiscriminantError(
                f"root error estimate {mp.nstr(err, 5)} too large; increase "
                "precision")
        return list(roots)


def discriminant_eps(family, precision: int = 100, radius: float = 1.0,
                     residual_tol: float | None = None) -> list:
    """Upper-half-plane discriminant zeros as ExceptionalPoint records.

    Limited to d <= D_ORACLE_MAX: the sampling degree and coefficient
    spread grow as d(d-1) and the oracle is meant as a small-dimension
    cross-check, not a production finder.  Residuals are validated with a
    multiprecision eigensolver at each root.
    """
    from .epfinder import ExceptionalPoint, hamiltonian_scale
    from .highprec import family_mp_matrices, mp_complex_eigvals

    d = family.d
    if d > D_ORACLE_MAX:
        raise ValueError(
            f"discriminant oracle supports d <= {D_ORACLE_MAX}, got {d}")
    if residual_tol is None:
        residual_tol = 1e-8 * max(1.0, hamiltonian_scale(family))
    H0, V = family_mp_matrices(family, precision)
    roots = discriminant_roots(H0, V, precision, radius)
    im_floor = mpf(10) ** (-(precision // 3))
    out = []
    res_dps = max(30, precision // 2)
    with mp.workdps(precision):
        for r in roots:
            if r.imag <= im_floor:
                continue
            E = mp_complex_eigvals(H0, V, r, res_dps)
            gap = min(abs(E[i] - E[k])
                      for i in range(len(E)) for k in range(i + 1, len(E)))
            residual = float(gap)
            if residual > residual_tol:
                raise DiscriminantError(
                    f"root {complex(r.real, r.imag)} fails the residual "
                    f"check ({residual:.3e}); increase precision")
            out.append(ExceptionalPoint(
                lam=complex(float(r.real), float(r.imag)),
                residual=residual, cell_size=0.0, method="discriminant"))
    out.sort(key=lambda e: (e.lam.real, e.lam.imag))
    return out


# ---------------------------------------------------------------------------
# exact-rational cross-check


def rational_similar_family(model: str, N: int, params: dict):
    """(H0, V) as exact Fraction matrices similar to the spin family.

    A symmetric tridiagonal matrix with off-diagonals b_i is diagonally
    similar to the matrix with 1 above and b_i^2 below the diagonal; the
    squares b_i^2 = (N-i)(i+1)/4 are rational, and the diagonal J3 commutes
    with the rescaling.  Polynomials in (J1, J3) therefore map to rational
    matrices with the same characteristic polynomial, which makes the whole
    discriminant exactly rational.
    """
    d = N + 1
    T = [[Fraction(0)] * d for _ in range(d)]
    for i in range(d - 1):
        T[i][i + 1] = Fraction(1)
        T[i + 1][i] = Fraction((N - i) * (i + 1), 4)
    J3 = [[Fraction(0)] * d for _ in range(d)]
    for i in range(d):
        J3[i][i] = Fraction(2 * i - N, 2)
    j = Fraction(N, 2)

    def matmul(A, B):
        return [[sum(A[r][k] * B[k][c] for k in range(d)) for c in range(d)]
                for r in range(d)]

    def madd(A, B, fa=Fraction(1), fb=Fraction(1)):
        return [[fa * A[r][c] + fb * B[r][c] for c in range(d)]
                for r in range(d)]

    if model == "qpt1":
        a = Fraction(params["a"])
        H0 = madd(J3, matmul(T, T), Fraction(1), -a / j)
        anti = madd(matmul(T, J3), matmul(J3, T))
        V = madd(T, anti, Fraction(-1), Fraction(-1) / (2 * j))
        return H0, V
    if model == "qpt2":
        T2 = matmul(T, T)
        V = [[-T2[r][c] / (2 * j) for c in range(d)] for r in range(d)]
        return J3, V
    if model == "qpt1p":
        c = Fraction(params["c"])
        shifted = madd(T, J3, Fraction(1), c)
        for i in range(d):
            shifted[i][i] += c * j
        sq = matmul(shifted, shifted)
        V = [[-(Fraction(1) / (2 * j)) * sq[r][cc] for cc in range(d)]
             for r in range(d)]
        return J3, V
    raise ValueError(f"no exact rational form for model {model!r}")


def discriminant_coeffs_exact(model: str, N: int, params: dict) -> list:
    """Exact rational discriminant coefficients via a symbolic resultant.

    Slow (symbolic determinant plus subresultants); intended to validate
    the sampled-DFT pipeline at small N, not for production scans.
    """
    import sympy

    H0, V = rational_similar_family(model, N, params)
    d = len(H0)
    lam, En = sympy.symbols("lam En")
    M = sympy.zeros(d, d)
    for r in range(d):
        for c in range(d):
            M[r, c] = -(sympy.Rational(H0[r][c]) +
                        lam * sympy.Rational(V[r][c]))
        M[r, r] += En
    p = M.charpoly(En).as_expr()
    disc = sympy.resultant(p, sympy.diff(p, En), En)
    poly = sympy.Poly(disc, lam)
    coeffs = [Fraction(int(q.p), int(q.q)) for q in poly.all_coeffs()[::-1]]
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    return coeffs


def exact_coeffs_match(coeffs_mp: list, coeffs_exact: list,
                       rtol: float = 1e-30) -> bool:
    """Compare sampled (mp) and exact (Fraction) coefficient lists."""
    top = max(abs(c) for c in coeffs_mp)
    n = max(len(coeffs_mp), len(coeffs_exact))
    for k in range(n):
        a = coeffs_mp[k] if k < len(coeffs_mp) else mpf(0)
        b = coeffs_exact[k] if k < len(coeffs_exact) else Fraction(0)
        if abs(a - mpf(b.numerator) / b.denominator) > rtol * top:
            return False
    return True


def _np_to_fraction_ok(M: np.ndarray) -> bool:
    # exact path is only wired for the named models; generic float matrices
    # would silently lose the exactness it exists to provide
    return False
