import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable

import numpy as np
from scipy import integrate, optimize, special

from .errors import BasisError, PotentialFitError
from .numerics import eigTridiagonal

logger = logging.getLogger(__name__)


MAX_HERMITE_ORDER = 64
MIN_GRID_POINTS = 64
DEFAULT_GRID_POINTS = 2000
DOMAIN_HALF_WIDTH = 12  # in units of the oscillator length k^(-1/4)
QUADRATURE_POINTS = 4001
SCAN_POINTS_PER_ASSET = 20
DEGENERATE_SPREAD = 1e-12

EigenFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, kw_only=True, eq=False)
class PotentialFit:
    """Harmonic potential V(x) = ½kx² fitted so that V at an asset's grid
    coordinate x0 + j·dx approximates the asset's variance.
    """

    k: float
    x0: float
    dx: float = 1.0
    assignment: np.ndarray  # asset index -> grid index
    residual: float
    degenerate: bool = False

    def __post_init__(self) -> None:
        assert self.k > 0
        assert self.x0 >= 0
        assignment = np.asarray(self.assignment, dtype=int)
        assert sorted(assignment.tolist()) == list(range(len(assignment)))
        assignment.setflags(write=False)
        object.__setattr__(self, "assignment", assignment)

    @property
    def numAssets(self) -> int:
        return len(self.assignment)

    @property
    def coordinates(self) -> np.ndarray:
        # asset order
        return self.x0 + self.assignment * self.dx

    @property
    def oscillatorLength(self) -> float:
        return self.k**-0.25

    def potential(self, x):
        return 0.5 * self.k * np.asarray(x, dtype=float) ** 2

    def toJSON(self) -> dict[str, Any]:
        return {
            "k": float(self.k),
            "x0": float(self.x0),
            "dx": float(self.dx),
            "assignment": self.assignment.tolist(),
            "residual": float(self.residual),
            "degenerate": bool(self.degenerate),
        }


@dataclass(frozen=True, kw_only=True, eq=False)
class EigenBasis:
    energies: np.ndarray  # ascending
    functions: tuple[EigenFunction, ...]
    domain: tuple[float, float] | None = None
    grid: np.ndarray | None = field(default=None, repr=False)
    method: str = "analytic"

    def __post_init__(self) -> None:
        assert len(self.energies) == len(self.functions)

    @property
    def order(self) -> int:
        return len(self.energies)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([function(x) for function in self.functions])


@dataclass(frozen=True, kw_only=True, eq=False)
class SampledBasis:
    psi: np.ndarray  # L×N, psi[l, i] = ψ_l(x_i)
    coordinates: np.ndarray
    energies: np.ndarray


def fitHarmonicPotential(variances) -> PotentialFit:
    """Arrange assets by ascending variance on the grid x_j = x0 + j and fit
    ½k·x_j² to the sorted variances by least squares, k > 0 and x0 >= 0.

    The outer search over x0 scans [0, 10N] and refines the best bracket; the
    inner fit of k is closed-form. A final joint least-squares polish removes
    the bounded scalar search's tolerance floor.
    """
    variances = np.asarray(variances, dtype=float)
    if variances.ndim != 1 or len(variances) < 2:
        raise PotentialFitError("potential fit needs at least 2 variances")
    if not np.isfinite(variances).all() or (variances <= 0).any():
        raise PotentialFitError("variances must be finite and positive")

    numAssets = len(variances)
    ordering = np.argsort(variances, kind="stable")
    assignment = np.empty(numAssets, dtype=int)
    assignment[ordering] = np.arange(numAssets)
    sortedVariances = variances[ordering]
    gridIndices = np.arange(numAssets, dtype=float)
    upper = 10.0 * numAssets

    def curvatureFor(x0: float) -> float:
        u = 0.5 * (x0 + gridIndices) ** 2
        return float(u @ sortedVariances / (u @ u))

    def squaredError(x0: float, k: float | None = None) -> float:
        if k is None:
            k = curvatureFor(x0)
        residuals = 0.5 * k * (x0 + gridIndices) ** 2 - sortedVariances
        return float(residuals @ residuals)

    scan = np.linspace(0.0, upper, SCAN_POINTS_PER_ASSET * numAssets + 1)
    scanErrors = np.array([squaredError(x0) for x0 in scan])
    best = int(np.argmin(scanErrors))
    bestX0 = float(scan[best])
    bestError = float(scanErrors[best])

    refined = optimize.minimize_scalar(
        squaredError,
        bounds=(scan[max(best - 1, 0)], scan[min(best + 1, len(scan) - 1)]),
        method="bounded",
        options={"xatol": 1e-12},
    )
    if refined.fun < bestError:
        bestX0, bestError = float(refined.x), float(refined.fun)
    bestK = curvatureFor(bestX0)

    degenerate = np.ptp(variances) <= DEGENERATE_SPREAD * variances.max()
    if not degenerate:
        polished = optimize.least_squares(
            lambda p: 0.5 * p[0] * (p[1] + gridIndices) ** 2 - sortedVariances,
            x0=[bestK, bestX0],
            bounds=([0.0, 0.0], [np.inf, upper]),
            method="trf",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
        )
        k, x0 = (float(v) for v in polished.x)
        if k > 0 and squaredError(x0, k) < bestError:
            bestK, bestX0, bestError = k, x0, squaredError(x0, k)
    else:
        logger.warning(
            "all variances are equal; the harmonic potential is degenerate "
            f"(k={bestK:.6g}, x0={bestX0:.6g})"
        )

    return PotentialFit(
        k=bestK,
        x0=bestX0,
        assignment=assignment,
        residual=math.sqrt(bestError / numAssets),
        degenerate=bool(degenerate),
    )


def hermite(l: int, y):
    """Physicists' Hermite polynomial H_l(y)."""
    if int(l) != l or l < 0:
        raise BasisError(f"Hermite order must be a nonnegative integer, got {l}")
    if l > MAX_HERMITE_ORDER:
        raise BasisError(f"Hermite order {l} exceeds {MAX_HERMITE_ORDER}")
    return special.eval_hermite(int(l), y)


def harmonicEigenfunction(n: int, k: float, x) -> np.ndarray:
    # k^(1/8)·h_n(k^(1/4)·x), h_n the L²-normalized Hermite function
    y = k**0.25 * np.asarray(x, dtype=float)
    logNorm = -0.5 * (n * math.log(2) + math.lgamma(n + 1)) - 0.25 * math.log(math.pi)
    with np.errstate(over="ignore", invalid="ignore"):
        values = math.exp(logNorm) * hermite(n, y) * np.exp(-(y**2) / 2)
    values = np.where(np.abs(y) > 40, 0.0, values)
    return k**0.125 * values


def analyticEigenbasis(fit: PotentialFit, L: int) -> EigenBasis:
    """Bound states of V(x) = ½kx²: E_l = √k·(l − ½) for l = 1..L, with
    eigenfunctions built from the Hermite polynomial of order l − 1.
    """
    if L < 1:
        raise BasisError(f"censoring order must be at least 1, got {L}")
    if L - 1 > MAX_HERMITE_ORDER:
        raise BasisError(f"censoring order {L} exceeds {MAX_HERMITE_ORDER + 1}")
    if fit.degenerate:
        raise PotentialFitError("cannot build an eigenbasis from a degenerate fit")
    k = fit.k
    halfWidth = DOMAIN_HALF_WIDTH * k**-0.25
    return EigenBasis(
        energies=math.sqrt(k) * (np.arange(1, L + 1) - 0.5),
        functions=tuple(partial(harmonicEigenfunction, n, k) for n in range(L)),
        grid=np.linspace(-halfWidth, halfWidth, QUADRATURE_POINTS),
        method="analytic",
    )


def numericEigenbasis(
    potential: Callable[[np.ndarray], Any],
    domain: tuple[float, float],
    gridPoints: int = DEFAULT_GRID_POINTS,
    L: int = 1,
) -> EigenBasis:
    """Solve −½ψ″ + Vψ = Eψ on [a, b] with Dirichlet ends by central second
    differences on a uniform grid, returning the lowest L eigenpairs.
    """
    a, b = (float(v) for v in domain)
    if not b > a:
        raise BasisError(f"invalid domain [{a}, {b}]")
    if gridPoints < MIN_GRID_POINTS:
        raise BasisError(f"need at least {MIN_GRID_POINTS} grid points")
    if not (1 <= L < gridPoints - 1):
        raise BasisError(f"censoring order {L} must lie in [1, {gridPoints - 2}]")

    grid = np.linspace(a, b, gridPoints)
    h = grid[1] - grid[0]
    interior = grid[1:-1]
    values = np.broadcast_to(
        np.asarray(potential(interior), dtype=float), interior.shape
    )
    if not np.isfinite(values).all():
        raise BasisError("potential is not finite on the domain")

    diagonal = 1 / h**2 + values
    offDiagonal = np.full(len(interior) - 1, -0.5 / h**2)
    energies, vectors = eigTridiagonal(diagonal, offDiagonal, L)

    functions = []
    for l in range(L):
        psi = np.zeros(gridPoints)
        # Dirichlet ends stay zero; Σψ²h = 1 is the trapezoidal norm
        psi[1:-1] = vectors[:, l] / math.sqrt(h)
        psi = orientRightTail(psi)
        psi.setflags(write=False)
        functions.append(partial(interpolatedEigenfunction, grid, psi))

    grid.setflags(write=False)
    return EigenBasis(
        energies=np.asarray(energies),
        functions=tuple(functions),
        domain=(a, b),
        grid=grid,
        method="numeric",
    )


def orientRightTail(psi: np.ndarray) -> np.ndarray:
    # same orientation as the analytic solutions: positive towards +∞
    significant = np.nonzero(np.abs(psi) > 1e-3 * np.abs(psi).max())[0]
    if len(significant) and psi[significant[-1]] < 0:
        return -psi
    return psi


def interpolatedEigenfunction(grid: np.ndarray, psi: np.ndarray, x) -> np.ndarray:
    return np.interp(np.asarray(x, dtype=float), grid, psi, left=0.0, right=0.0)


def numericDomainFor(fit: PotentialFit) -> tuple[float, float]:
    halfWidth = max(
        DOMAIN_HALF_WIDTH * fit.oscillatorLength,
        float(np.abs(fit.coordinates).max()) + fit.oscillatorLength,
    )
    return (-halfWidth, halfWidth)


def sampleBasis(basis: EigenBasis, fit: PotentialFit) -> SampledBasis:
    coordinates = fit.coordinates
    if basis.domain is not None:
        a, b = basis.domain
        outside = (coordinates < a) | (coordinates > b)
        if outside.any():
            raise BasisError(
                f"asset coordinates {coordinates[outside].tolist()} lie outside "
                f"the basis domain [{a}, {b}]"
            )
    psi = basis.evaluate(coordinates)
    if not np.isfinite(psi).all():
        raise BasisError("sampled eigenfunctions are not finite")
    return SampledBasis(
        psi=psi, coordinates=coordinates, energies=np.asarray(basis.energies)
    )


def quadratureGram(basis: EigenBasis, grid: np.ndarray | None = None) -> np.ndarray:
    if grid is None:
        grid = basis.grid
    if grid is None:
        raise BasisError("no quadrature grid given for the basis")
    values = basis.evaluate(grid)
    return integrate.trapezoid(values[:, None, :] * values[None, :, :], grid, axis=-1)
