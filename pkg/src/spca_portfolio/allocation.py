import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .errors import AllocationError, PotentialFitError
from .market_data import ReturnPanel, describe
from .numerics import analyticSignal, covariance, eigHermitian, eigSymmetric
from .schrodinger import (
    DEFAULT_GRID_POINTS,
    PotentialFit,
    analyticEigenbasis,
    fitHarmonicPotential,
    numericDomainFor,
    numericEigenbasis,
    sampleBasis,
)

logger = logging.getLogger(__name__)


FACTOR_METHODS = ("PCA", "HPCA", "SPCA")
EIGEN_SOLVERS = ("analytic", "numeric")
RELATIVE_SCALE_FLOOR = 1e-12
WEIGHT_SUM_TOLERANCE = 1e-10
ENTROPY_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True, kw_only=True, eq=False)
class FactorModel:
    method: str
    loadings: np.ndarray  # L×N, exposures = loadings @ w
    scales: np.ndarray
    fit: PotentialFit | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        assert self.method in FACTOR_METHODS
        assert self.loadings.ndim == 2
        assert self.loadings.shape[0] == len(self.scales)
        assert self.loadings.shape[0] <= self.loadings.shape[1]
        assert (self.scales > 0).all()

    @property
    def numFactors(self) -> int:
        return self.loadings.shape[0]

    @property
    def numAssets(self) -> int:
        return self.loadings.shape[1]


@dataclass(kw_only=True)
class OptimizerOptions:
    restarts: int = 16
    seed: int = 0
    tolerance: float = 1e-8
    maxIterations: int = 5000
    longOnly: bool = True


@dataclass(frozen=True, kw_only=True, eq=False)
class OptimizationResult:
    weights: np.ndarray
    entropy: float
    converged: bool
    bestRestart: int
    startEntropies: tuple[float, ...] = field(default=(), repr=False)


def makeFactorModel(
    method: str,
    loadings: np.ndarray,
    scales: np.ndarray,
    fit: PotentialFit | None = None,
    notes: tuple[str, ...] = (),
) -> FactorModel:
    """Build a FactorModel, dropping factors whose scale is not meaningfully
    positive (at most 1e-12 of the largest scale).
    """
    scales = np.asarray(scales, dtype=float)
    largest = scales.max(initial=0.0)
    if largest <= 0:
        raise AllocationError(f"{method} model has no positive factor scales")
    keep = scales > RELATIVE_SCALE_FLOOR * largest
    if not keep.all():
        dropped = int((~keep).sum())
        message = f"{method}: dropped {dropped} factor(s) with non-positive scale"
        logger.warning(message)
        notes = notes + (message,)
    return FactorModel(
        method=method,
        loadings=np.asarray(loadings)[keep],
        scales=scales[keep],
        fit=fit,
        notes=notes,
    )


def checkModelInputs(window: ReturnPanel, L: int) -> None:
    if window.numPeriods < window.numAssets:
        raise AllocationError(
            f"window has {window.numPeriods} periods for {window.numAssets} assets; "
            "need at least as many periods as assets"
        )
    if not (1 <= L <= window.numAssets):
        raise AllocationError(
            f"number of factors must lie in [1, {window.numAssets}], got {L}"
        )


def modelPCA(
    window: ReturnPanel, L: int, diagonalLoading: float = 0.0
) -> FactorModel:
    checkModelInputs(window, L)
    decomposition = eigSymmetric(covariance(window, diagonalLoading=diagonalLoading))
    return makeFactorModel(
        "PCA",
        decomposition.eigenvectors[:, :L].T,
        decomposition.eigenvalues[:L],
    )


def hilbertCovariance(window: ReturnPanel, diagonalLoading: float = 0.0) -> np.ndarray:
    # demean first, then take the analytic signal of every column
    values = window.values - window.values.mean(axis=0)
    analytic = analyticSignal(values, axis=0)
    cov = analytic.conj().T @ analytic / (window.numPeriods - 1)
    cov = (cov + cov.conj().T) / 2
    if diagonalLoading:
        cov = cov + diagonalLoading * np.eye(cov.shape[0])
    return cov


def modelHPCA(
    window: ReturnPanel, L: int, diagonalLoading: float = 0.0
) -> FactorModel:
    checkModelInputs(window, L)
    decomposition = eigHermitian(hilbertCovariance(window, diagonalLoading))
    return makeFactorModel(
        "HPCA",
        decomposition.eigenvectors[:, :L].conj().T,
        decomposition.eigenvalues[:L],
    )


def modelSPCA(
    window: ReturnPanel,
    L: int,
    eigenSolver: str = "analytic",
    gridPoints: int = DEFAULT_GRID_POINTS,
    renormalizeRows: bool = False,
) -> FactorModel:
    """Schrödinger factor model: asset variances define a harmonic potential,
    whose eigenfunctions sampled at the asset coordinates are the loadings and
    whose energies are the factor scales. Falls back to PCA when the potential
    fit is degenerate.
    """
    checkModelInputs(window, L)
    if eigenSolver not in EIGEN_SOLVERS:
        raise AllocationError(f"unknown eigen solver {eigenSolver!r}")

    fit = fitHarmonicPotential(describe(window).variance)
    if fit.degenerate:
        message = "SPCA: degenerate potential fit, falling back to PCA"
        logger.warning(message)
        model = modelPCA(window, L)
        return makeFactorModel(
            "PCA", model.loadings, model.scales, fit=fit, notes=model.notes + (message,)
        )

    if eigenSolver == "analytic":
        basis = analyticEigenbasis(fit, L)
    else:
        basis = numericEigenbasis(
            fit.potential, numericDomainFor(fit), gridPoints=gridPoints, L=L
        )
    sampled = sampleBasis(basis, fit)
    loadings = sampled.psi
    if renormalizeRows:
        norms = np.linalg.norm(loadings, axis=1, keepdims=True)
        if (norms == 0).any():
            raise PotentialFitError("cannot renormalize an all-zero eigenfunction row")
        loadings = loadings / norms
    return makeFactorModel("SPCA", loadings, sampled.energies, fit=fit)


def buildModel(method: str, window: ReturnPanel, L: int, **kwargs) -> FactorModel:
    if method == "PCA":
        return modelPCA(window, L, **kwargs)
    elif method == "HPCA":
        return modelHPCA(window, L, **kwargs)
    elif method == "SPCA":
        return modelSPCA(window, L, **kwargs)
    raise AllocationError(f"unknown factor method {method!r}")


def riskContributions(model: FactorModel, weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (model.numAssets,):
        raise AllocationError(
            f"expected {model.numAssets} weights, got shape {weights.shape}"
        )
    exposures = model.loadings @ weights
    contributions = model.scales * np.abs(exposures) ** 2
    total = contributions.sum()
    if not total > 0:
        raise AllocationError("weights are orthogonal to every factor")
    return contributions / total


def entropy(contributions) -> float:
    # entr(0) == 0, so 0·log 0 contributes nothing
    return float(special.entr(np.asarray(contributions, dtype=float)).sum())


def equalWeights(numAssets: int) -> np.ndarray:
    if numAssets < 1:
        raise AllocationError(f"need at least one asset, got {numAssets}")
    return np.full(numAssets, 1.0 / numAssets)


def checkWeights(weights, longOnly: bool = True) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 1 or not np.isfinite(weights).all():
        raise AllocationError("weights must be a finite vector")
    if longOnly and (weights < 0).any():
        raise AllocationError("long-only weights must be nonnegative")
    if abs(weights.sum() - 1) > WEIGHT_SUM_TOLERANCE:
        raise AllocationError(f"weights sum to {weights.sum()!r}, not 1")
    return weights


def entropyAndGradient(
    weights: np.ndarray, loadings: np.ndarray, scales: np.ndarray
) -> tuple[float, np.ndarray]:
    """Entropy of the factor risk contributions and its gradient with respect
    to the weights, for real or complex loadings.
    """
    exposures = loadings @ weights
    contributions = scales * np.abs(exposures) ** 2
    total = contributions.sum()
    if not total > 0:
        return 0.0, np.zeros_like(weights)
    shares = contributions / total
    value = float(special.entr(shares).sum())
    logShares = np.log(np.maximum(shares, np.finfo(float).tiny))
    dContribution = -(logShares + value) / total
    gradient = 2 * np.real((dContribution * scales * np.conj(exposures)) @ loadings)
    return value, gradient


def startingPoints(numAssets: int, options: OptimizerOptions) -> list[np.ndarray]:
    # equal weights first, then seeded Dirichlet draws
    rng = np.random.default_rng(options.seed)
    starts = [equalWeights(numAssets)]
    for _ in range(max(options.restarts, 1) - 1):
        starts.append(rng.dirichlet(np.ones(numAssets)))
    return starts


def maximizeEntropy(
    model: FactorModel, options: OptimizerOptions | None = None
) -> OptimizationResult:
    """Maximize the entropy of the factor risk contributions over the weights.

    Long-only weights are parameterized through the softmax map and optimized
    with L-BFGS-B; with short sales allowed the weights live on the Σw = 1
    hyperplane within the box [-1, 1] and SLSQP handles the constraint. Every
    restart keeps its starting point if the optimizer fails to improve on it;
    the best restart wins, ties going to the lowest restart index.
    """
    if options is None:
        options = OptimizerOptions()
    loadings, scales = model.loadings, model.scales

    bestWeights: np.ndarray | None = None
    bestEntropy = -np.inf
    bestRestart = -1
    converged = False
    startEntropies = []

    for restart, start in enumerate(startingPoints(model.numAssets, options)):
        startEntropy, _ = entropyAndGradient(start, loadings, scales)
        startEntropies.append(startEntropy)
        if options.longOnly:
            weights, success = maximizeOnSimplex(start, loadings, scales, options)
        else:
            weights, success = maximizeOnHyperplane(start, loadings, scales, options)
        value, _ = entropyAndGradient(weights, loadings, scales)
        if value < startEntropy:
            weights, value = start, startEntropy
        converged = converged or success
        if value > bestEntropy + ENTROPY_TIE_TOLERANCE:
            bestWeights, bestEntropy, bestRestart = weights, value, restart

    assert bestWeights is not None
    if not converged:
        logger.warning(
            f"{model.method}: entropy maximization did not converge in any of "
            f"{len(startEntropies)} restart(s); returning the best iterate"
        )
    return OptimizationResult(
        weights=bestWeights,
        entropy=bestEntropy,
        converged=converged,
        bestRestart=bestRestart,
        startEntropies=tuple(startEntropies),
    )


def maximizeOnSimplex(
    start: np.ndarray,
    loadings: np.ndarray,
    scales: np.ndarray,
    options: OptimizerOptions,
) -> tuple[np.ndarray, bool]:
    def objective(z):
        weights = special.softmax(z)
        value, gradient = entropyAndGradient(weights, loadings, scales)
        gradientZ = weights * (gradient - weights @ gradient)
        return -value, -gradientZ

    z0 = np.log(np.maximum(start, np.finfo(float).tiny))
    z0 -= z0.mean()
    result = optimize.minimize(
        objective,
        z0,
        jac=True,
        method="L-BFGS-B",
        options={"gtol": options.tolerance, "maxiter": options.maxIterations},
    )
    weights = special.softmax(result.x)
    return weights / weights.sum(), bool(result.success)


def maximizeOnHyperplane(
    start: np.ndarray,
    loadings: np.ndarray,
    scales: np.ndarray,
    options: OptimizerOptions,
) -> tuple[np.ndarray, bool]:
    def objective(weights):
        value, gradient = entropyAndGradient(weights, loadings, scales)
        return -value, -gradient

    result = optimize.minimize(
        objective,
        start,
        jac=True,
        method="SLSQP",
        bounds=[(-1.0, 1.0)] * len(start),
        constraints=[
            {
                "type": "eq",
                "fun": lambda w: w.sum() - 1.0,
                "jac": lambda w: np.ones_like(w),
            }
        ],
        options={"ftol": options.tolerance, "maxiter": options.maxIterations},
    )
    weights = np.clip(result.x, -1.0, 1.0)
    return weights / weights.sum(), bool(result.success)
