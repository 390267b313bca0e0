"""Annular negative-index configurations: nested radii, regions, material fields.

The geometry is a disk of radius ``R`` containing three concentric circles
``r1 < r2 < r3`` with ``r3 = r2**2 / r1``.  The ring ``r1 < |x| < r2`` (the
shell) carries the negative coefficient ``-1 + i*delta``; everywhere else the
coefficient is ``+1``.  Material fields are arbitrary callables subject to
uniform ellipticity, validated by sampling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

__all__ = [
    "Region",
    "RadialLayout",
    "LossCoefficient",
    "MediaSpec",
    "RingSource",
    "SourceSpec",
    "build_radial_layout",
    "eval_s_delta",
    "s_delta_of_radius",
    "s0_of_radius",
    "classify_region",
    "isotropic_media",
    "region_table_media",
]

# Points closer than INTERFACE_RTOL * R to an interface circle are treated as
# lying on it: coefficient values are two-sided there and must not be averaged.
INTERFACE_RTOL = 1e-12


class Region(enum.Enum):
    """Open regions of the layout, bounded by the interface circles."""

    CORE = "core"      # |x| < r1
    SHELL = "shell"    # r1 < |x| < r2, the negative-index ring
    IMAGE = "image"    # r2 < |x| < r3, optically canceled by the shell
    OUTER = "outer"    # r3 < |x| < R


@dataclass(frozen=True)
class RadialLayout:
    """Nested radii r1 < r2 < r3 < R with r3 = r2**2 / r1."""

    r1: float
    r2: float
    r3: float
    R: float

    def __post_init__(self):
        if not (0.0 < self.r1 < self.r2 < self.r3 < self.R):
            raise ValueError(
                f"radii must satisfy 0 < r1 < r2 < r3 < R, got "
                f"({self.r1}, {self.r2}, {self.r3}, {self.R})"
            )
        expected = self.r2 * self.r2 / self.r1
        if abs(self.r3 - expected) > 1e-12 * expected:
            raise ValueError(
                f"r3 must equal r2**2/r1 = {expected!r}, got {self.r3!r}"
            )

    @property
    def interfaces(self) -> tuple[float, float, float]:
        return (self.r1, self.r2, self.r3)

    @property
    def interface_tol(self) -> float:
        return INTERFACE_RTOL * self.R


def build_radial_layout(r1: float, r2: float, R: float) -> RadialLayout:
    """Construct the layout from the two inner radii and the domain radius.

    The third radius is fixed by the cancellation relation r3 = r2**2/r1.
    Rejects non-increasing radii and R <= r3 (the outer boundary must
    enclose the image annulus).
    """
    if not (0.0 < r1 < r2):
        raise ValueError(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    r3 = r2 * r2 / r1
    if not (R > r3):
        raise ValueError(f"need R > r3 = r2**2/r1 = {r3}, got R={R}")
    return RadialLayout(r1=r1, r2=r2, r3=r3, R=R)


def _radius_of(x) -> float:
    p = np.asarray(x, dtype=float)
    if p.shape != (2,):
        raise ValueError(f"expected a single 2D point, got shape {p.shape}")
    return float(np.hypot(p[0], p[1]))


def s_delta_of_radius(layout: RadialLayout, delta: float, r) -> np.ndarray:
    """Vectorized coefficient profile: -1+i*delta in the shell, 1 elsewhere.

    No interface checking; callers must keep sample radii off r1 and r2.
    """
    r = np.asarray(r, dtype=float)
    out = np.ones(r.shape, dtype=complex)
    shell = (r > layout.r1) & (r < layout.r2)
    out[shell] = -1.0 + 1j * delta
    return out


def s0_of_radius(layout: RadialLayout, r) -> np.ndarray:
    """Sign profile at zero loss: -1 in the shell, +1 elsewhere."""
    r = np.asarray(r, dtype=float)
    out = np.ones(r.shape, dtype=float)
    out[(r > layout.r1) & (r < layout.r2)] = -1.0
    return out


def eval_s_delta(layout: RadialLayout, delta: float, x) -> complex:
    """Coefficient at a single point: -1+i*delta inside the shell, 1 outside.

    Raises ValueError for points on (or within tolerance of) the material
    interfaces r1 and r2, where the value is two-sided.
    """
    if delta < 0:
        raise ValueError(f"loss delta must be nonnegative, got {delta}")
    r = _radius_of(x)
    if r >= layout.R:
        raise ValueError(f"point at radius {r} lies outside the domain R={layout.R}")
    tol = layout.interface_tol
    if abs(r - layout.r1) <= tol or abs(r - layout.r2) <= tol:
        raise ValueError(
            f"point at radius {r} lies on a material interface; "
            "the coefficient is two-sided there"
        )
    if layout.r1 < r < layout.r2:
        return complex(-1.0, delta)
    return complex(1.0, 0.0)


def classify_region(layout: RadialLayout, x) -> Region:
    """Region tag of a point, rejecting points within tolerance of any interface."""
    r = _radius_of(x)
    if r >= layout.R:
        raise ValueError(f"point at radius {r} lies outside the domain R={layout.R}")
    tol = layout.interface_tol
    for ri in layout.interfaces:
        if abs(r - ri) <= tol:
            raise ValueError(
                f"point at radius {r} is within tolerance {tol} of interface {ri}"
            )
    if r < layout.r1:
        return Region.CORE
    if r < layout.r2:
        return Region.SHELL
    if r < layout.r3:
        return Region.IMAGE
    return Region.OUTER


@dataclass(frozen=True)
class LossCoefficient:
    """Dissipation parameter delta >= 0 of the shell coefficient -1 + i*delta."""

    delta: float

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"loss delta must be nonnegative, got {self.delta}")

    @property
    def shell_value(self) -> complex:
        return complex(-1.0, self.delta)

    def evaluate(self, layout: RadialLayout, x) -> complex:
        return eval_s_delta(layout, self.delta, x)


MatrixField = Callable[[np.ndarray], np.ndarray]
ScalarField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MediaSpec:
    """Material pair (A, Sigma) on the disk with a declared ellipticity bound.

    ``a`` maps points of shape (N, 2) to symmetric matrices (N, 2, 2);
    ``sigma`` maps (N, 2) to positive reals (N,).  The sign structure of the
    problem lives in the loss coefficient, not here: Sigma stays positive and
    the eigenvalues of A stay within [1/ellipticity, ellipticity].
    """

    a: MatrixField
    sigma: ScalarField
    ellipticity: float
    layout: RadialLayout

    def __post_init__(self):
        if self.ellipticity < 1.0:
            raise ValueError(
                f"ellipticity bound must be >= 1, got {self.ellipticity}"
            )

    def sample_points(self, n_samples: int = 10_000, seed: int = 0) -> np.ndarray:
        """Quasi-random points in the disk, uniform in area, off the interfaces."""
        eng = qmc.Halton(d=2, scramble=True, seed=seed)
        u = eng.random(n_samples)
        r = self.layout.R * np.sqrt(u[:, 0])
        th = 2.0 * np.pi * u[:, 1]
        # Nudge samples off the interface circles so region-wise fields are
        # single-valued at every point.
        tol = 16 * self.layout.interface_tol
        for ri in self.layout.interfaces:
            near = np.abs(r - ri) <= tol
            r[near] = ri + 2 * tol
        return np.column_stack([r * np.cos(th), r * np.sin(th)])

    def validate(self, n_samples: int = 10_000, seed: int = 0) -> None:
        """Check ellipticity and Sigma bounds on a quasi-random sample set.

        Raises ValueError naming the worst offender when any sampled
        eigenvalue of A leaves [1/ellipticity, ellipticity], when A is not
        symmetric, or when Sigma is not positive and bounded.
        """
        pts = self.sample_points(n_samples, seed)
        mats = np.asarray(self.a(pts), dtype=float)
        if mats.shape != (len(pts), 2, 2):
            raise ValueError(f"matrix field returned shape {mats.shape}")
        asym = np.max(np.abs(mats[:, 0, 1] - mats[:, 1, 0]))
        if asym > 1e-10:
            raise ValueError(f"matrix field is not symmetric: max |a12-a21| = {asym}")
        # closed-form eigenvalues of a symmetric 2x2
        half_tr = 0.5 * (mats[:, 0, 0] + mats[:, 1, 1])
        disc = np.sqrt(
            (0.5 * (mats[:, 0, 0] - mats[:, 1, 1])) ** 2 + mats[:, 0, 1] ** 2
        )
        lo, hi = half_tr - disc, half_tr + disc
        bound_lo, bound_hi = 1.0 / self.ellipticity, self.ellipticity
        slack = 1e-12 * self.ellipticity
        if np.min(lo) < bound_lo - slack or np.max(hi) > bound_hi + slack:
            i = int(np.argmin(lo)) if np.min(lo) < bound_lo - slack else int(np.argmax(hi))
            raise ValueError(
                f"eigenvalues of A leave [{bound_lo}, {bound_hi}] at "
                f"x={pts[i]} (eigs [{lo[i]}, {hi[i]}])"
            )
        sig = np.asarray(self.sigma(pts), dtype=float)
        if sig.shape != (len(pts),):
            raise ValueError(f"scalar field returned shape {sig.shape}")
        if not np.all(np.isfinite(sig)) or np.min(sig) <= 0:
            raise ValueError(
                f"Sigma must be positive and finite; sampled range "
                f"[{np.min(sig)}, {np.max(sig)}]"
            )


def isotropic_media(layout: RadialLayout, sigma: float = 1.0) -> MediaSpec:
    """The baseline medium A = I, Sigma = const."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")

    def a_field(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros((len(pts), 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0
        return out

    def sigma_field(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.full(len(pts), float(sigma))

    return MediaSpec(a=a_field, sigma=sigma_field, ellipticity=1.0, layout=layout)


def region_table_media(
    layout: RadialLayout,
    table: dict[Region, tuple[np.ndarray, float]],
    ellipticity: float | None = None,
) -> MediaSpec:
    """Region-wise constant medium from a {Region: (matrix, sigma)} table."""
    mats = {}
    sigs = {}
    for reg in Region:
        m, s = table.get(reg, (np.eye(2), 1.0))
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2):
            raise ValueError(f"{reg.value}: matrix must be 2x2, got {m.shape}")
        if abs(m[0, 1] - m[1, 0]) > 1e-14 * max(1.0, np.max(np.abs(m))):
            raise ValueError(f"{reg.value}: matrix must be symmetric")
        if s <= 0:
            raise ValueError(f"{reg.value}: sigma must be positive, got {s}")
        mats[reg] = m
        sigs[reg] = float(s)

    if ellipticity is None:
        eigs = np.concatenate([np.linalg.eigvalsh(m) for m in mats.values()])
        if np.min(eigs) <= 0:
            raise ValueError("all region matrices must be positive definite")
        ellipticity = float(max(np.max(eigs), 1.0 / np.min(eigs)))

    edges = np.array([layout.r1, layout.r2, layout.r3])
    order = [Region.CORE, Region.SHELL, Region.IMAGE, Region.OUTER]
    mat_arr = np.stack([mats[reg] for reg in order])
    sig_arr = np.array([sigs[reg] for reg in order])

    def a_field(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.searchsorted(edges, np.hypot(pts[:, 0], pts[:, 1]))
        return mat_arr[idx]

    def sigma_field(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.searchsorted(edges, np.hypot(pts[:, 0], pts[:, 1]))
        return sig_arr[idx]

    return MediaSpec(a=a_field, sigma=sigma_field, ellipticity=ellipticity, layout=layout)


@dataclass(frozen=True)
class RingSource:
    """One angular-mode ring source: amplitude * delta(r - r0)/r * exp(i n theta).

    The distribution acts on a test function phi through
    ``amplitude * integral exp(i n theta) phi(r0, theta) dtheta``; crossing the
    ring jumps the radial derivative of the mode profile by
    ``amplitude / r0`` per unit leading coefficient of the equation.
    """

    n: int
    amplitude: complex
    r0: float

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"mode index must be >= 0, got {self.n}")
        if not np.isfinite(self.r0) or self.r0 <= 0:
            raise ValueError(f"ring radius must be positive, got {self.r0}")
        if not np.isfinite(complex(self.amplitude)):
            raise ValueError(f"amplitude must be finite, got {self.amplitude}")


@dataclass(frozen=True)
class SourceSpec:
    """A finite collection of ring sources, plus an optional nodal density.

    The nodal density, when present, is a callable (N, 2) -> complex (N,)
    used only by the finite element path as an L2 volume load.
    """

    rings: tuple[RingSource, ...]
    density: Callable[[np.ndarray], np.ndarray] | None = None

    def validate(self, layout: RadialLayout) -> None:
        tol = layout.interface_tol
        for ring in self.rings:
            if not (0.0 < ring.r0 < layout.R):
                raise ValueError(
                    f"ring at r0={ring.r0} must lie strictly inside the domain"
                )
            for ri in (layout.r1, layout.r2):
                if abs(ring.r0 - ri) <= tol:
                    raise ValueError(
                        f"ring at r0={ring.r0} sits on the material interface {ri}"
                    )

    @property
    def max_mode(self) -> int:
        return max((ring.n for ring in self.rings), default=0)

    def rings_of_mode(self, n: int) -> tuple[RingSource, ...]:
        return tuple(r for r in self.rings if r.n == n)

    def modes(self) -> tuple[int, ...]:
        return tuple(sorted({r.n for r in self.rings}))
