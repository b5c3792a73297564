"""Finite-n laboratory: sample covariance matrices, their Moore-Penrose
inverses, and the exact identities relating the centered and non-centered
versions."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

from .spectra import EmpiricalSpectrum, EntryLaw, PopulationSpectrum, TestFunction, as_test_function, mix_seed

log = logging.getLogger(__name__)

__all__ = [
    "DegenerateEnsembleError",
    "SampleEnsemble",
    "PinvPair",
    "build_ensemble",
    "pseudoinverse",
    "penrose_residuals",
    "pinv_rank_one_update",
    "rank_two_form",
    "ybar_unit_form",
    "empirical_stieltjes",
    "relocation_rhs",
    "xi_direct",
    "xi_simplified",
    "xi_oracle",
    "theta_n",
    "theta_n_direct",
    "lss",
    "lss_via_contour",
    "identity_record",
]

COND_LIMIT = 1e12
RESAMPLE_OFFSET = 1_000_003
MAX_RESAMPLES = 10


class DegenerateEnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleEnsemble:
    """Observation matrix ``Y = Sigma^{1/2} X`` and derived covariances.

    ``seed`` is the seed that actually produced ``Y`` (after any degenerate
    resampling); ``requested_seed`` is the one asked for.
    """

    Y: NDArray[np.float64] = field(repr=False)
    seed: int
    requested_seed: int | None = None

    def __post_init__(self) -> None:
        y = np.array(self.Y, dtype=float)
        if y.ndim != 2:
            raise ValueError("Y must be a matrix")
        y.setflags(write=False)
        object.__setattr__(self, "Y", y)
        if self.requested_seed is None:
            object.__setattr__(self, "requested_seed", self.seed)

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    @cached_property
    def ybar(self) -> NDArray[np.float64]:
        return self.Y.mean(axis=1)

    @cached_property
    def S(self) -> NDArray[np.float64]:
        return self.Y @ self.Y.T / self.n

    @cached_property
    def S_tilde(self) -> NDArray[np.float64]:
        yc = self.Y - self.ybar[:, None]
        return yc @ yc.T / self.n

    @cached_property
    def gram(self) -> NDArray[np.float64]:
        """``(1/n) Y'Y``."""
        return self.Y.T @ self.Y / self.n

    @cached_property
    def gram_centered(self) -> NDArray[np.float64]:
        """``Q' (1/n) Y'Y Q`` for an orthonormal basis ``Q`` of the complement of ``1``;
        its eigenvalues are the nonzero eigenvalues of ``S_tilde``."""
        q = _centering_basis(self.n)
        return q.T @ self.gram @ q

    @cached_property
    def pinv(self) -> "PinvPair":
        return PinvPair.from_ensemble(self)

    def pinv_spectrum(self, centered: bool = False) -> EmpiricalSpectrum:
        """Spectrum of ``S^+`` (or ``S_tilde^+``) from the ``n x n`` Gram matrix.

        The nonzero eigenvalues are reciprocals of the Gram eigenvalues; the
        remaining ``p - n`` (``p - n + 1``) are exact zeros.
        """
        g = self.gram_centered if centered else self.gram
        ev = np.linalg.eigvalsh(g)
        if ev[0] <= 0:
            raise DegenerateEnsembleError("singular Gram matrix")
        zeros = np.zeros(self.p - ev.size)
        return EmpiricalSpectrum(np.concatenate([zeros, 1.0 / ev]))


_Q_CACHE: dict[int, NDArray[np.float64]] = {}


def _centering_basis(n: int) -> NDArray[np.float64]:
    q = _Q_CACHE.get(n)
    if q is None:
        a = np.eye(n)[:, : n - 1] - 1.0 / n
        q, _ = np.linalg.qr(a)
        q.setflags(write=False)
        _Q_CACHE[n] = q
    return q


def build_ensemble(law: EntryLaw, H_n: PopulationSpectrum, p: int, n: int, seed: int) -> SampleEnsemble:
    """Draw ``Y = Sigma^{1/2} X`` with ``Sigma = diag(H_n expanded to p)``.

    If ``Y'Y`` has condition number above ``1e12`` the draw is repeated with
    ``seed + k * RESAMPLE_OFFSET`` and the event is logged.
    """
    if not (p > n >= 2):
        raise ValueError(f"need p > n >= 2, got p={p}, n={n}")
    root = np.sqrt(H_n.expand(p))
    for k in range(MAX_RESAMPLES + 1):
        s = int(seed) + k * RESAMPLE_OFFSET
        x = law.sample(p, n, np.random.default_rng(s))
        y = root[:, None] * x
        cond = np.linalg.cond(y.T @ y)
        if np.isfinite(cond) and cond <= COND_LIMIT:
            if k:
                log.warning("degenerate draw for seed %d resampled %d time(s); using seed %d", seed, k, s)
            return SampleEnsemble(y, seed=s, requested_seed=int(seed))
    raise DegenerateEnsembleError(f"seed {seed}: Y'Y singular after {MAX_RESAMPLES} resamples")


# ---------------------------------------------------------------------------
# Moore-Penrose inverses


def _check_symmetric(a: NDArray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    if np.linalg.norm(a - a.T) > 1e-12 * scale:
        raise ValueError("pseudoinverse expects a symmetric matrix")


def pseudoinverse(A, *, return_cutoff: bool = False):
    """Moore-Penrose inverse of a symmetric PSD matrix by eigendecomposition.

    Eigenvalues at or below ``p * eps * lambda_max`` are treated as zero.
    """
    a = np.asarray(A, dtype=float)
    _check_symmetric(a)
    lam, v = np.linalg.eigh((a + a.T) / 2)
    top = max(float(np.max(np.abs(lam))), 0.0) if lam.size else 0.0
    cutoff = a.shape[0] * np.finfo(float).eps * top
    keep = lam > cutoff
    vk = v[:, keep]
    out = (vk / lam[keep]) @ vk.T
    out = (out + out.T) / 2
    return (out, cutoff) if return_cutoff else out


def penrose_residuals(A, A_plus) -> dict[str, float]:
    """Frobenius norms of the four Penrose residuals."""
    a = np.asarray(A, dtype=float)
    ap = np.asarray(A_plus, dtype=float)
    aap = a @ ap
    apa = ap @ a
    return {
        "AXA=A": float(np.linalg.norm(aap @ a - a)),
        "XAX=X": float(np.linalg.norm(apa @ ap - ap)),
        "(AX)'=AX": float(np.linalg.norm(aap.T - aap)),
        "(XA)'=XA": float(np.linalg.norm(apa.T - apa)),
    }


@dataclass(frozen=True)
class PinvPair:
    S_plus: NDArray[np.float64] = field(repr=False)
    S_tilde_plus: NDArray[np.float64] = field(repr=False)
    svd_cutoff: float

    @classmethod
    def from_ensemble(cls, ens: SampleEnsemble) -> "PinvPair":
        sp, c1 = pseudoinverse(ens.S, return_cutoff=True)
        stp, c2 = pseudoinverse(ens.S_tilde, return_cutoff=True)
        return cls(sp, stp, max(c1, c2))

    def difference_singular_values(self) -> NDArray[np.float64]:
        return np.linalg.svd(self.S_plus - self.S_tilde_plus, compute_uv=False)

    def rank_two_ok(self, rel: float = 1e-8) -> bool:
        sv = self.difference_singular_values()
        return sv.size < 3 or sv[2] < rel * sv[0]


def pinv_rank_one_update(S_plus, ybar):
    """``S_tilde^+`` from ``S^+`` and ``ybar`` (rank-one downdate of a pseudoinverse).

    ``S+ - (S+ y y' S+^2 + S+^2 y y' S+)/(y' S+^2 y) + (y' S+^3 y)/(y' S+^2 y)^2 S+ y y' S+``.
    Falls back to a direct pseudoinverse when ``y' S+^2 y`` vanishes.
    """
    sp = np.asarray(S_plus, dtype=float)
    y = np.asarray(ybar, dtype=float)
    u = sp @ y
    v = sp @ u
    uu = u @ u
    scale = np.linalg.norm(sp) ** 2 * (y @ y)
    if not uu > 1e-14 * scale:
        log.warning("rank-one update: ybar is orthogonal to range(S); using a direct pseudoinverse")
        s = pseudoinverse(sp)
        return pseudoinverse(s - np.outer(y, y))
    uv = u @ v
    out = sp - (np.outer(u, v) + np.outer(v, u)) / uu + (uv / uu**2) * np.outer(u, u)
    return (out + out.T) / 2


def rank_two_form(S_plus, ybar) -> tuple[NDArray, NDArray, NDArray, NDArray]:
    """``(u, v, w, D)`` with ``u = S+ y``, ``v = S+^2 y``,
    ``w = sqrt(u'v/u'u) u - sqrt(u'u/u'v) v`` and
    ``D = vv'/(u'v) - ww'/(u'u)``, which equals ``S+ - S_tilde+``."""
    sp = np.asarray(S_plus, dtype=float)
    y = np.asarray(ybar, dtype=float)
    u = sp @ y
    v = sp @ u
    uu, uv = u @ u, u @ v
    w = math.sqrt(uv / uu) * u - math.sqrt(uu / uv) * v
    d = np.outer(v, v) / uv - np.outer(w, w) / uu
    return u, v, w, d


def ybar_unit_form(S_plus, ybar) -> float:
    """``ybar' S^+ ybar`` (identically one when ``p > n`` and ``Y'Y`` is invertible)."""
    y = np.asarray(ybar, dtype=float)
    return float(y @ np.asarray(S_plus, dtype=float) @ y)


# ---------------------------------------------------------------------------
# Stieltjes transforms and the centering correction


def empirical_stieltjes(spec: EmpiricalSpectrum | NDArray, z):
    """``(1/p) sum 1/(lambda_i - z)``."""
    ev = spec.eigenvalues if isinstance(spec, EmpiricalSpectrum) else np.asarray(spec, dtype=float)
    z = np.asarray(z, dtype=complex)
    if np.any((z.imag == 0) & np.isin(z.real, ev)):
        raise ZeroDivisionError("z coincides with an eigenvalue")
    out = np.mean(1.0 / (ev[:, None] - np.atleast_1d(z).ravel()[None, :]), axis=0)
    return complex(out[0]) if z.ndim == 0 else out.reshape(z.shape)


def relocation_rhs(gram_eigenvalues, p: int, z):
    """``-1/z - (n/p) z^{-2} m_{F^{Y'Y/n}}(1/z)`` from the Gram eigenvalues."""
    ev = np.asarray(gram_eigenvalues, dtype=float)
    z = np.asarray(z, dtype=complex)
    m = empirical_stieltjes(ev, 1.0 / z)
    return -1.0 / z - (ev.size / p) * m / z**2


def _resolvent_solver(S_plus, z):
    a = np.asarray(S_plus, dtype=complex) - z * np.eye(S_plus.shape[0])
    lu = sla.lu_factor(a, check_finite=False)
    return lambda b: sla.lu_solve(lu, np.asarray(b, dtype=complex), check_finite=False)


def xi_direct(pair: PinvPair, ybar, z: complex) -> complex:
    """``tr R(z) - tr A^{-1}(z)`` from the rank-two correction, ``A(z) = S^+ - zI``.

    Only linear solves against ``A(z)`` are used; transposes are plain (not
    conjugate) because ``A(z)`` is complex symmetric.
    """
    if complex(z).imag == 0:
        raise ValueError("xi_direct needs Im z != 0")
    u, v, w, _ = rank_two_form(pair.S_plus, ybar)
    solve = _resolvent_solver(pair.S_plus, z)
    av = solve(v)
    aw = solve(w)
    uv, uu = u @ v, u @ u
    d = uv - v @ av
    first = (av @ av) / d
    bw = aw + av * ((av @ w) / d)
    den = uu + w @ aw + (w @ av) ** 2 / d
    return complex(first - (bw @ bw) / den)


def xi_oracle(pair: PinvPair, z) -> complex:
    """``p (m_{F^{S_tilde+}} - m_{F^{S+}})`` from both eigendecompositions."""
    e1 = np.linalg.eigvalsh(pair.S_plus)
    e2 = np.linalg.eigvalsh(pair.S_tilde_plus)
    return complex(np.sum(1.0 / (e2 - z)) - np.sum(1.0 / (e1 - z)))


def _eta(gram, z):
    # eta = (1/n) 1'(M^{-1} - zI)^{-1} 1 and its z-derivative, with
    # (M^{-1} - zI)^{-1} = M (I - zM)^{-1} so M is never inverted
    n = gram.shape[0]
    one = np.ones(n)
    b = sla.solve(np.eye(n) - z * gram, one.astype(complex), assume_a="sym")
    r = gram @ b
    return (one @ r) / n, (r @ r) / n


def theta_n(ensemble: SampleEnsemble, z: complex, *, with_derivative: bool = False):
    """``ybar'(S^+ - zI)^{-1} ybar`` through its ``n x n`` representation
    ``-ybar'ybar/z + (1/z)(1/n) 1'((Y'Y/n)^{-1} - zI)^{-1} 1``."""
    z = complex(z)
    if z.imag == 0:
        raise ValueError("theta_n needs Im z != 0")
    yy = float(ensemble.ybar @ ensemble.ybar)
    eta, deta = _eta(ensemble.gram, z)
    th = -yy / z + eta / z
    if not with_derivative:
        return complex(th)
    dth = yy / z**2 - eta / z**2 + deta / z
    return complex(th), complex(dth)


def theta_n_direct(S_plus, ybar, z: complex, *, with_derivative: bool = False):
    """Quadratic forms ``ybar' A^{-1} ybar`` and ``ybar' A^{-2} ybar`` by linear solves."""
    solve = _resolvent_solver(np.asarray(S_plus, dtype=float), z)
    r = solve(ybar)
    th = complex(np.asarray(ybar) @ r)
    return (th, complex(r @ r)) if with_derivative else th


def xi_simplified(ensemble: SampleEnsemble, z: complex, *, route: str = "gram") -> complex:
    """``-1/z - psi'/psi`` with ``psi = 1 + z ybar'ybar + z^2 theta_n``.

    ``route='gram'`` evaluates ``theta_n`` in ``n x n`` form; ``route='direct'``
    solves against ``S^+ - zI``.
    """
    z = complex(z)
    if z.imag == 0:
        raise ValueError("xi_simplified needs Im z != 0")
    yy = float(ensemble.ybar @ ensemble.ybar)
    if route == "gram":
        th, dth = theta_n(ensemble, z, with_derivative=True)
    elif route == "direct":
        th, dth = theta_n_direct(ensemble.pinv.S_plus, ensemble.ybar, z, with_derivative=True)
    else:
        raise ValueError(f"unknown route {route!r}")
    psi = 1.0 + z * yy + z**2 * th
    dpsi = yy + 2 * z * th + z**2 * dth
    if abs(psi) < 1e-300:
        raise ZeroDivisionError(f"psi vanishes at z={z}")
    return complex(-1.0 / z - dpsi / psi)


# ---------------------------------------------------------------------------


def lss(spec: EmpiricalSpectrum, g: TestFunction) -> float:
    """``(1/p) sum g(lambda_i)``."""
    g = as_test_function(g)
    return float(np.mean(g(spec.eigenvalues)))


def lss_via_contour(spec: EmpiricalSpectrum, g: TestFunction, contour) -> float:
    """``-(1/2 pi i) oint g(z) m_{F^A}(z) dz`` over a contour enclosing the spectrum."""
    g = as_test_function(g)
    ev = spec.eigenvalues
    if not (contour.a < ev[0] and ev[-1] < contour.b):
        raise ValueError("contour does not enclose the spectrum")
    z, dz = contour.nodes()
    m = np.empty(z.size, dtype=complex)
    for s in range(0, z.size, 2048):
        m[s : s + 2048] = np.mean(1.0 / (ev[:, None] - z[None, s : s + 2048]), axis=0)
    return float((-np.sum(g.poly(z) * m * dz) / (2j * math.pi)).real)


def identity_record(check: str, ens: SampleEnsemble | None, z, residual: float, **extra) -> dict:
    """JSON-ready ``{check, p, n, seed, z, residual}`` record."""
    rec = {
        "check": check,
        "p": ens.p if ens is not None else None,
        "n": ens.n if ens is not None else None,
        "seed": ens.seed if ens is not None else None,
        "z": None if z is None else [float(np.real(z)), float(np.imag(z))],
        "residual": float(residual),
    }
    rec.update(extra)
    return rec


def replicate_seeds(master: int, count: int) -> list[int]:
    return [mix_seed(master, i) for i in range(count)]


def dumps_records(records: list[dict]) -> str:
    return json.dumps(records, indent=2, sort_keys=True)
