"""Shared domain types: population and empirical spectra, limit laws,
integration contours, entry laws and polynomial test functions."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "AspectRatio",
    "PopulationSpectrum",
    "EmpiricalSpectrum",
    "SpectralLimit",
    "RectContour",
    "EntryLaw",
    "TestFunction",
    "DimensionMismatchWarning",
    "edf_evaluate",
    "ks_distance",
    "entry_sample",
    "mix_seed",
    "pairwise_sum",
]

_MASK64 = (1 << 64) - 1


class DimensionMismatchWarning(UserWarning):
    """Two spectra of different dimension were compared."""


# ---------------------------------------------------------------------------
# seeding and reductions


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(master_seed: int, index: int) -> int:
    """Per-replicate seed.

    ``mix(s, i) = splitmix64(splitmix64(s mod 2^64) XOR (i mod 2^64))``; the
    result is an unsigned 64-bit integer, independent of scheduling order.
    """
    return _splitmix64(_splitmix64(master_seed & _MASK64) ^ (index & _MASK64))


def pairwise_sum(values: ArrayLike) -> float:
    """Fixed-order pairwise summation of a 1-d sequence."""
    arr = np.asarray(values, dtype=float).ravel()

    def _rec(lo: int, hi: int) -> float:
        if hi - lo <= 8:
            s = 0.0
            for v in arr[lo:hi]:
                s += float(v)
            return s
        mid = (lo + hi) // 2
        return _rec(lo, mid) + _rec(mid, hi)

    return _rec(0, arr.size)


# ---------------------------------------------------------------------------
# dimensions


@dataclass(frozen=True)
class AspectRatio:
    p: int
    n: int

    def __post_init__(self) -> None:
        if self.p < 1 or self.n < 1:
            raise ValueError("p and n must be positive integers")

    @property
    def c(self) -> float:
        return self.p / self.n

    @property
    def rank_deficient(self) -> bool:
        return self.p > self.n


# ---------------------------------------------------------------------------
# population spectrum H / H_n


@dataclass(frozen=True)
class PopulationSpectrum:
    """Discrete population spectral distribution ``sum_j w_j delta_{tau_j}``.

    Atoms are canonicalized on construction: sorted, duplicates merged.
    """

    taus: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        taus = np.asarray(self.taus, dtype=float).ravel()
        wts = np.asarray(self.weights, dtype=float).ravel()
        if taus.size == 0 or taus.size != wts.size:
            raise ValueError("need matching, nonempty eigenvalue and weight lists")
        if np.any(wts < 0) or np.any(wts > 1):
            raise ValueError("weights must lie in [0, 1]")
        if abs(wts.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {wts.sum()!r}, expected 1")
        if np.min(taus) <= 0:
            raise ValueError("population eigenvalues must be strictly positive")
        uniq, inv = np.unique(taus, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, wts)
        object.__setattr__(self, "taus", tuple(float(t) for t in uniq))
        object.__setattr__(self, "weights", tuple(float(w) for w in merged))

    @classmethod
    def isotropic(cls, sigma2: float = 1.0) -> "PopulationSpectrum":
        return cls((float(sigma2),), (1.0,))

    @classmethod
    def from_eigenvalues(cls, eigenvalues: ArrayLike) -> "PopulationSpectrum":
        ev = np.asarray(eigenvalues, dtype=float).ravel()
        uniq, counts = np.unique(ev, return_counts=True)
        wts = counts / ev.size
        # exact renormalisation so the 1e-12 check cannot trip on rounding
        wts[-1] = 1.0 - wts[:-1].sum()
        return cls(tuple(uniq), tuple(wts))

    @property
    def tau_array(self) -> NDArray[np.float64]:
        return np.asarray(self.taus)

    @property
    def weight_array(self) -> NDArray[np.float64]:
        return np.asarray(self.weights)

    @property
    def is_isotropic(self) -> bool:
        return len(self.taus) == 1

    def integrate(self, f) -> complex:
        """``int f(tau) dH(tau)`` for a vectorized ``f``."""
        return np.sum(self.weight_array * f(self.tau_array))

    def expand(self, p: int) -> NDArray[np.float64]:
        """Diagonal of ``Sigma_p``: each ``tau_j`` repeated ``w_j * p`` times."""
        counts = self.weight_array * p
        rounded = np.rint(counts)
        if np.any(np.abs(counts - rounded) > 1e-9) or rounded.sum() != p:
            raise ValueError(f"weights are not multiples of 1/p for p={p}")
        return np.repeat(self.tau_array, rounded.astype(int))

    def to_text(self) -> str:
        lines = ["# tau weight"]
        lines += [f"{float(t)!r} {float(w)!r}" for t, w in zip(self.taus, self.weights)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PopulationSpectrum":
        taus, wts = [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'tau weight', got {raw!r}")
            taus.append(float(parts[0]))
            wts.append(float(parts[1]))
        return cls(tuple(taus), tuple(wts))

    @classmethod
    def read(cls, path: str | Path) -> "PopulationSpectrum":
        return cls.from_text(Path(path).read_text())

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


# ---------------------------------------------------------------------------
# empirical spectrum F^A


@dataclass(frozen=True)
class EmpiricalSpectrum:
    eigenvalues: NDArray[np.float64] = field(repr=False)

    def __post_init__(self) -> None:
        ev = np.sort(np.asarray(self.eigenvalues, dtype=float).ravel())
        if ev.size == 0:
            raise ValueError("empty spectrum")
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    @classmethod
    def from_matrix(cls, a: ArrayLike, *, snap_zeros: bool = True) -> "EmpiricalSpectrum":
        """Spectrum of a symmetric matrix.

        With ``snap_zeros`` eigenvalues below ``p * eps * max|lambda|`` in
        magnitude are set to exactly zero, so that rank-deficient matrices
        carry an exact atom at the origin.
        """
        a = np.asarray(a, dtype=float)
        ev = np.linalg.eigvalsh((a + a.T) / 2)
        if snap_zeros and ev.size:
            cutoff = ev.size * np.finfo(float).eps * np.max(np.abs(ev))
            ev = np.where(np.abs(ev) <= cutoff, 0.0, ev)
        return cls(ev)

    @property
    def p(self) -> int:
        return int(self.eigenvalues.size)

    def counts_le(self, t: ArrayLike) -> NDArray[np.int64]:
        return np.searchsorted(self.eigenvalues, t, side="right")

    def counts_lt(self, t: ArrayLike) -> NDArray[np.int64]:
        return np.searchsorted(self.eigenvalues, t, side="left")

    def edf(self, t: ArrayLike):
        out = self.counts_le(t) / self.p
        return float(out) if np.ndim(out) == 0 else out

    def zero_count(self) -> int:
        return int(np.count_nonzero(self.eigenvalues == 0.0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "eigenvalue"])
        for i, lam in enumerate(self.eigenvalues):
            w.writerow([i, repr(float(lam))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EmpiricalSpectrum":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(np.array([float(r["eigenvalue"]) for r in rows]))


def edf_evaluate(spec: EmpiricalSpectrum, t: float) -> float:
    """``(1/p) #{i : lambda_i <= t}``."""
    return float(spec.counts_le(t)) / spec.p


def ks_distance(s1: EmpiricalSpectrum, s2: EmpiricalSpectrum) -> float:
    """Exact sup-norm distance between two empirical distribution functions.

    Both EDFs are step functions jumping only at the merged eigenvalue set, so
    the supremum is attained at a right value or a left limit of a jump point.
    """
    if s1.p != s2.p:
        warnings.warn(
            f"comparing spectra of dimension {s1.p} and {s2.p}",
            DimensionMismatchWarning,
            stacklevel=2,
        )
    pts = np.union1d(s1.eigenvalues, s2.eigenvalues)
    if s1.p == s2.p:
        # integer counts keep the distance exact for equal dimensions
        right = np.abs(s1.counts_le(pts) - s2.counts_le(pts))
        left = np.abs(s1.counts_lt(pts) - s2.counts_lt(pts))
        return float(max(right.max(), left.max())) / s1.p
    right = np.abs(s1.counts_le(pts) / s1.p - s2.counts_le(pts) / s2.p)
    left = np.abs(s1.counts_lt(pts) / s1.p - s2.counts_lt(pts) / s2.p)
    return float(max(right.max(), left.max()))


# ---------------------------------------------------------------------------
# limit law P / P*_n


@dataclass(frozen=True)
class SpectralLimit:
    """Atom at zero plus a gridded absolutely continuous density."""

    atom_mass: float
    x: NDArray[np.float64] = field(repr=False)
    density: NDArray[np.float64] = field(repr=False)
    support: tuple[float, float]
    mass_tol: float = 1e-3

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        nu = np.asarray(self.density, dtype=float)
        if x.shape != nu.shape or x.ndim != 1 or x.size < 2:
            raise ValueError("grid and density must be matching 1-d arrays")
        if np.any(np.diff(x) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not 0.0 <= self.atom_mass <= 1.0:
            raise ValueError("atom mass must lie in [0, 1]")
        if np.any(nu < 0):
            raise ValueError("density must be nonnegative")
        lo, hi = self.support
        nu = np.where((x < lo) | (x > hi), 0.0, nu)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "density", nu)
        total = self.total_mass()
        if abs(total - 1.0) > self.mass_tol:
            raise ValueError(f"total mass {total:.6f} outside 1 +/- {self.mass_tol}")

    def total_mass(self) -> float:
        return self.atom_mass + float(np.trapezoid(self.density, self.x))

    def functional(self, g) -> float:
        """``atom * g(0) + trapezoid int g(x) nu(x) dx``."""
        g0 = float(np.real(g(0.0)))
        return self.atom_mass * g0 + float(np.trapezoid(np.real(g(self.x)) * self.density, self.x))

    def ac_cdf(self) -> NDArray[np.float64]:
        """Cumulative trapezoid of the density on the grid (no atom)."""
        inc = 0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.x)
        return np.concatenate([[0.0], np.cumsum(inc)])

    def cdf(self, t: ArrayLike):
        t = np.asarray(t, dtype=float)
        ac = np.interp(t, self.x, self.ac_cdf(), left=0.0, right=self.ac_cdf()[-1])
        out = np.where(t >= 0.0, self.atom_mass, 0.0) + ac
        return float(out) if out.ndim == 0 else out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# atom_at_zero={float(self.atom_mass)!r}\n")
        buf.write(f"# support={float(self.support[0])!r},{float(self.support[1])!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "nu"])
        for xi, ni in zip(self.x, self.density):
            w.writerow([repr(float(xi)), repr(float(ni))])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# rectangular contour


@dataclass(frozen=True)
class RectContour:
    """Positively oriented rectangle with corners ``a +/- i y0``, ``b +/- i y0``.

    Each side is split into Gauss-Legendre panels; ``nodes_per_side`` sets the
    average node count, distributed over the four sides in proportion to their
    lengths.
    """

    a: float
    b: float
    y0: float
    nodes_per_side: int = 2048
    panel_order: int = 16

    def __post_init__(self) -> None:
        if not self.a < 0.0 < self.b:
            raise ValueError("need a < 0 < b")
        if self.y0 <= 0:
            raise ValueError("y0 must be positive")
        if self.nodes_per_side < 1:
            raise ValueError("nodes_per_side must be positive")
        if self.panel_order % 2:
            raise ValueError("panel_order must be even (keeps nodes off the real axis)")

    def encloses(self, z: complex) -> bool:
        return self.a < z.real < self.b and abs(z.imag) < self.y0

    def refined(self, factor: int = 2) -> "RectContour":
        return RectContour(self.a, self.b, self.y0, self.nodes_per_side * factor, self.panel_order)

    def nodes(self) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
        """Quadrature nodes ``z_k`` and complex weights ``dz_k``.

        ``sum(f(z) * dz)`` approximates the contour integral of ``f``.
        """
        return _rect_nodes(self.a, self.b, self.y0, self.nodes_per_side, self.panel_order)

    def integrate(self, f) -> complex:
        z, dz = self.nodes()
        return complex(np.sum(f(z) * dz))


_NODE_CACHE: dict[tuple, tuple] = {}


def _rect_nodes(a, b, y0, nodes_per_side, order):
    key = (a, b, y0, nodes_per_side, order)
    hit = _NODE_CACHE.get(key)
    if hit is not None:
        return hit
    corners = [complex(a, -y0), complex(b, -y0), complex(b, y0), complex(a, y0)]
    lengths = np.array([b - a, 2 * y0, b - a, 2 * y0])
    total = 4 * nodes_per_side
    panels = np.maximum(1, np.rint(total * lengths / lengths.sum() / order)).astype(int)
    t, wt = np.polynomial.legendre.leggauss(order)
    zs, ws = [], []
    for k in range(4):
        start, end = corners[k], corners[(k + 1) % 4]
        edges = np.linspace(0.0, 1.0, panels[k] + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            s = lo + (hi - lo) * (t + 1) / 2
            zs.append(start + s * (end - start))
            ws.append(wt * (hi - lo) / 2 * (end - start))
    out = (np.concatenate(zs), np.concatenate(ws))
    for arr in out:
        arr.setflags(write=False)
    if len(_NODE_CACHE) > 64:
        _NODE_CACHE.clear()
    _NODE_CACHE[key] = out
    return out


# ---------------------------------------------------------------------------
# entry laws


_FAMILIES = ("gaussian", "rademacher", "three_point")


@dataclass(frozen=True)
class EntryLaw:
    """Standardized entry distribution (mean 0, variance 1)."""

    family: str = "gaussian"
    q: float | None = None

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown entry law {self.family!r}; choose from {_FAMILIES}")
        if self.family == "three_point":
            if self.q is None or not 0.0 < self.q <= 0.5:
                raise ValueError("three_point needs q in (0, 1/2]")
        elif self.q is not None:
            raise ValueError(f"q is only meaningful for three_point, got family {self.family!r}")

    @property
    def fourth_moment(self) -> float:
        if self.family == "gaussian":
            return 3.0
        if self.family == "rademacher":
            return 1.0
        return 1.0 / (2.0 * self.q)

    @property
    def kurtosis_excess(self) -> float:
        return self.fourth_moment - 3.0

    def sample(self, rows: int, cols: int, rng: np.random.Generator) -> NDArray[np.float64]:
        if rows < 1 or cols < 1:
            raise ValueError("rows and cols must be positive")
        if self.family == "gaussian":
            return rng.standard_normal((rows, cols))
        if self.family == "rademacher":
            return 2.0 * rng.integers(0, 2, size=(rows, cols)).astype(float) - 1.0
        b = 1.0 / math.sqrt(2.0 * self.q)
        u = rng.random((rows, cols))
        return np.where(u < self.q, -b, np.where(u < 2 * self.q, b, 0.0))

    @property
    def label(self) -> str:
        return self.family if self.q is None else f"{self.family}(q={self.q!r})"


def entry_sample(law: EntryLaw, rows: int, cols: int, seed: int) -> NDArray[np.float64]:
    """i.i.d. entries from ``law``; bit-identical for a fixed seed."""
    return law.sample(rows, cols, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """Polynomial test function; coefficients in ascending degree."""

    __test__ = False  # not a pytest class

    coefficients: tuple[float, ...]

    def __post_init__(self) -> None:
        coef = tuple(float(v) for v in self.coefficients)
        if not coef:
            coef = (0.0,)
        if not all(math.isfinite(v) for v in coef):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coef)

    @property
    def kind(self) -> str:
        return "polynomial"

    @classmethod
    def monomial(cls, k: int) -> "TestFunction":
        return cls(tuple([0.0] * k + [1.0]))

    @classmethod
    def parse(cls, text: str) -> "TestFunction":
        return cls(tuple(float(v) for v in text.split(",") if v.strip()))

    @property
    def poly(self) -> Polynomial:
        return Polynomial(self.coefficients)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.coefficients)

    def __call__(self, x):
        return self.poly(x)

    def derivative(self) -> "TestFunction":
        return TestFunction(tuple(self.poly.deriv().coef))

    @property
    def label(self) -> str:
        return ",".join(repr(v) for v in self.coefficients)


def as_test_function(g: TestFunction | Sequence[float]) -> TestFunction:
    return g if isinstance(g, TestFunction) else TestFunction(tuple(g))
