from dataclasses import dataclass, field
from typing import Any, ClassVar, Protocol

import numpy as np

from .allocation import (
    FactorModel,
    OptimizerOptions,
    buildModel,
    equalWeights,
    maximizeEntropy,
    riskContributions,
)
from .errors import ConfigError
from .market_data import ReturnPanel
from .schrodinger import DEFAULT_GRID_POINTS


class UnknownStrategyError(ConfigError, KeyError):
    pass


@dataclass(frozen=True, kw_only=True, eq=False)
class Allocation:
    weights: np.ndarray
    model: FactorModel | None = None
    entropy: float | None = None
    contributions: np.ndarray | None = None
    converged: bool = True
    notes: tuple[str, ...] = ()


class StrategyProtocol(Protocol):
    strategyName: str

    def computeWeights(self, window: ReturnPanel) -> Allocation:
        pass


_strategyClasses: dict[str, type] = {}


def registerStrategy(name: str):
    def wrapper(cls):
        assert name not in _strategyClasses, name
        cls.strategyName = name
        _strategyClasses[name] = cls
        return cls

    return wrapper


def getStrategyClass(name: str) -> type:
    strategyClass = _strategyClasses.get(name)
    if strategyClass is None:
        raise UnknownStrategyError(
            f"unknown strategy {name!r}, expected one of {strategyNames()}"
        )
    return strategyClass


def strategyNames() -> list[str]:
    return list(_strategyClasses)


def makeStrategy(name: str, **options: Any) -> StrategyProtocol:
    strategyClass = getStrategyClass(name)
    fieldNames = set(strategyClass.__dataclass_fields__)
    return strategyClass(**{k: v for k, v in options.items() if k in fieldNames})


@registerStrategy("EW")
@dataclass(kw_only=True)
class EqualWeightStrategy:
    def computeWeights(self, window: ReturnPanel) -> Allocation:
        return Allocation(weights=equalWeights(window.numAssets))


@registerStrategy("PCA")
@dataclass(kw_only=True)
class PCAStrategy:
    strategyName: ClassVar[str]

    factors: int | None = None
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    diagonalLoading: float = 0.0

    def numFactors(self, window: ReturnPanel) -> int:
        return window.numAssets if self.factors is None else self.factors

    def modelOptions(self) -> dict[str, Any]:
        return dict(diagonalLoading=self.diagonalLoading)

    def buildModel(self, window: ReturnPanel) -> FactorModel:
        return buildModel(
            self.strategyName, window, self.numFactors(window), **self.modelOptions()
        )

    def computeWeights(self, window: ReturnPanel) -> Allocation:
        model = self.buildModel(window)
        result = maximizeEntropy(model, self.optimizer)
        notes = model.notes
        if not result.converged:
            notes += (f"{model.method}: entropy maximization did not converge",)
        return Allocation(
            weights=result.weights,
            model=model,
            entropy=result.entropy,
            contributions=riskContributions(model, result.weights),
            converged=result.converged,
            notes=notes,
        )


@registerStrategy("HPCA")
@dataclass(kw_only=True)
class HPCAStrategy(PCAStrategy):
    # same options as PCA; the registered name selects the Hilbert model
    pass


@registerStrategy("SPCA")
@dataclass(kw_only=True)
class SPCAStrategy(PCAStrategy):
    eigenSolver: str = "analytic"
    gridPoints: int = DEFAULT_GRID_POINTS
    renormalizeRows: bool = False

    def modelOptions(self) -> dict[str, Any]:
        return dict(
            eigenSolver=self.eigenSolver,
            gridPoints=self.gridPoints,
            renormalizeRows=self.renormalizeRows,
        )
