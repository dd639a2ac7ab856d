import json
import logging
import math
import os
import pathlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from .allocation import OptimizerOptions, checkWeights, equalWeights
from .errors import BacktestError, SpcaPortfolioError
from .market_data import ReturnPanel, window
from .schrodinger import DEFAULT_GRID_POINTS
from .strategies import Allocation, StrategyProtocol, makeStrategy

logger = logging.getLogger(__name__)


PERIODS_PER_YEAR = 250
ASSET_TYPES = ("Bond", "Equity")


@dataclass(kw_only=True)
class BacktestConfig:
    window: int = 250
    rebalance: int = 20
    strategy: str = "EW"
    factors: int | None = None
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    diagonalLoading: float = 0.0
    eigenSolver: str = "analytic"
    gridPoints: int = DEFAULT_GRID_POINTS
    renormalizeRows: bool = False
    wealthSum: bool = False
    dumpFits: bool = False
    workers: int = 1

    def validate(self, panel: ReturnPanel) -> None:
        if self.window < 2:
            raise BacktestError(f"window must be at least 2, got {self.window}")
        if self.rebalance < 1:
            raise BacktestError(f"rebalance must be at least 1, got {self.rebalance}")
        if self.window + self.rebalance > panel.numPeriods:
            raise BacktestError(
                f"window ({self.window}) + rebalance ({self.rebalance}) exceeds "
                f"the {panel.numPeriods} available periods"
            )
        if panel.numPeriods - self.window < 2:
            raise BacktestError(
                f"window ({self.window}) leaves {panel.numPeriods - self.window} "
                f"return(s) of {panel.numPeriods} periods, performance needs at least 2"
            )
        if self.workers < 1:
            raise BacktestError(f"workers must be at least 1, got {self.workers}")

    def strategyOptions(self) -> dict[str, Any]:
        return dict(
            factors=self.factors,
            optimizer=self.optimizer,
            diagonalLoading=self.diagonalLoading,
            eigenSolver=self.eigenSolver,
            gridPoints=self.gridPoints,
            renormalizeRows=self.renormalizeRows,
        )

    def toJSON(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, kw_only=True, eq=False)
class WeightSeries:
    dates: pd.DatetimeIndex
    assets: tuple[str, ...]
    weights: np.ndarray  # one row per rebalance date

    def __post_init__(self) -> None:
        assert self.weights.shape == (len(self.dates), len(self.assets))
        assert self.dates.is_monotonic_increasing and self.dates.is_unique

    def __len__(self) -> int:
        return len(self.dates)

    def toFrame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.weights, index=self.dates, columns=list(self.assets))
        frame.index.name = "date"
        return frame


@dataclass(frozen=True, kw_only=True)
class PerformanceMetrics:
    annualReturn: float
    risk: float
    returnRisk: float | None
    maxDrawdown: float

    def toJSON(self) -> dict[str, float | None]:
        return {
            "AR": self.annualReturn,
            "RISK": self.risk,
            "RR": self.returnRisk,
            "MaxDD": self.maxDrawdown,
        }


@dataclass(frozen=True, kw_only=True, eq=False)
class BacktestReport:
    strategy: str
    config: BacktestConfig
    dates: pd.DatetimeIndex
    returns: np.ndarray
    wealth: np.ndarray
    weightSeries: WeightSeries
    metrics: PerformanceMetrics
    averageWeights: dict[str, float]
    typeWeights: dict[str, float] | None = None
    warnings: tuple[str, ...] = ()
    fits: tuple[dict[str, Any], ...] = ()

    def toJSON(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "config": self.config.toJSON(),
            "periods": len(self.returns),
            "rebalances": len(self.weightSeries),
            "metrics": self.metrics.toJSON(),
            "averageWeights": self.averageWeights,
            "typeWeights": self.typeWeights,
            "warnings": list(self.warnings),
        }


@dataclass(kw_only=True)
class Backtester:
    panel: ReturnPanel
    config: BacktestConfig
    assetTypes: dict[str, str] | None = None

    def setup(self) -> None:
        self.config.validate(self.panel)
        self.strategy: StrategyProtocol = makeStrategy(
            self.config.strategy, **self.config.strategyOptions()
        )
        self.rebalanceIndices = list(
            range(self.config.window, self.panel.numPeriods, self.config.rebalance)
        )
        self.warnings: list[str] = []

    def run(self) -> BacktestReport:
        allocations = self.fitAllocations()
        weights = self.foldWeights(allocations)
        returns = self.portfolioReturns(weights)
        metrics = evaluate(returns, wealthSum=self.config.wealthSum)

        weightSeries = WeightSeries(
            dates=self.panel.dates[self.rebalanceIndices],
            assets=self.panel.assets,
            weights=weights,
        )
        perAsset, perType = averageWeights(weightSeries, self.assetTypes)
        fits = ()
        if self.config.dumpFits:
            fits = tuple(
                fitRecord(self.panel.dates[index], allocation)
                for index, allocation in zip(self.rebalanceIndices, allocations)
                if isinstance(allocation, Allocation)
            )

        return BacktestReport(
            strategy=self.config.strategy,
            config=self.config,
            dates=self.panel.dates[self.config.window :],
            returns=returns,
            wealth=wealthSeries(returns, wealthSum=self.config.wealthSum),
            weightSeries=weightSeries,
            metrics=metrics,
            averageWeights=perAsset,
            typeWeights=perType,
            warnings=tuple(self.warnings),
            fits=fits,
        )

    def fitOne(self, endIndex: int) -> Allocation | SpcaPortfolioError:
        trailing = window(self.panel, endIndex, self.config.window)
        try:
            return self.strategy.computeWeights(trailing)
        except SpcaPortfolioError as e:
            return e

    def fitAllocations(self) -> list[Allocation | SpcaPortfolioError]:
        # windows are independent; the fold over dates below stays sequential
        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
                return list(executor.map(self.fitOne, self.rebalanceIndices))
        return [self.fitOne(index) for index in self.rebalanceIndices]

    def foldWeights(
        self, allocations: list[Allocation | SpcaPortfolioError]
    ) -> np.ndarray:
        rows = []
        previous: np.ndarray | None = None
        for index, allocation in zip(self.rebalanceIndices, allocations):
            date = self.panel.dates[index].strftime("%Y-%m-%d")
            if isinstance(allocation, SpcaPortfolioError):
                fallback = "previous" if previous is not None else "equal"
                self.addWarning(
                    f"{date}: {self.config.strategy} failed ({allocation}); "
                    f"using {fallback} weights"
                )
                current = (
                    previous
                    if previous is not None
                    else equalWeights(self.panel.numAssets)
                )
            else:
                for note in allocation.notes:
                    self.addWarning(f"{date}: {note}")
                current = checkWeights(
                    allocation.weights, longOnly=self.config.optimizer.longOnly
                )
            rows.append(current)
            previous = current
        return np.array(rows)

    def portfolioReturns(self, weights: np.ndarray) -> np.ndarray:
        values = self.panel.values
        returns = np.empty(self.panel.numPeriods - self.config.window)
        bounds = self.rebalanceIndices + [self.panel.numPeriods]
        for row, (start, stop) in enumerate(zip(bounds[:-1], bounds[1:])):
            offset = self.config.window
            returns[start - offset : stop - offset] = values[start:stop] @ weights[row]
        return returns

    def addWarning(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)


def runBacktest(
    panel: ReturnPanel,
    config: BacktestConfig,
    assetTypes: dict[str, str] | None = None,
) -> BacktestReport:
    """Rolling-window evaluation: at t = window, window + rebalance, ... the
    strategy is fitted on the trailing `window` rows, and its weights are held
    fixed until the next rebalance.
    """
    backtester = Backtester(panel=panel, config=config, assetTypes=assetTypes)
    backtester.setup()
    return backtester.run()


def fitRecord(date: pd.Timestamp, allocation: Allocation) -> dict[str, Any]:
    model = allocation.model
    record: dict[str, Any] = {"date": date.strftime("%Y-%m-%d")}
    if model is not None and model.fit is not None:
        record.update(model.fit.toJSON())
        record["method"] = model.method
        record["energies"] = [float(v) for v in model.scales]
    return record


def performance(returns) -> tuple[float, float, float | None]:
    """Annualized return, annualized risk and their ratio; the ratio is None
    when the risk is zero.
    """
    returns = np.asarray(returns, dtype=float)
    numPeriods = len(returns)
    if numPeriods < 2:
        raise BacktestError(f"performance needs at least 2 returns, got {numPeriods}")
    annualReturn = PERIODS_PER_YEAR / numPeriods * float(returns.sum())
    if np.ptp(returns) == 0:
        risk = 0.0
    else:
        deviations = returns - returns.mean()
        risk = math.sqrt(
            PERIODS_PER_YEAR / (numPeriods - 1) * float(deviations @ deviations)
        )
    returnRisk = annualReturn / risk if risk > 0 else None
    return annualReturn, risk, returnRisk


def wealthSeries(returns, wealthSum: bool = False) -> np.ndarray:
    returns = np.asarray(returns, dtype=float)
    if (returns <= -1).any():
        raise BacktestError("returns of -100% or worse make wealth non-positive")
    if wealthSum:
        return np.cumsum(1 + returns)
    return np.cumprod(1 + returns)


def maxDrawdown(returns, wealthSum: bool = False) -> float:
    """Largest peak-to-trough decline of wealth, as a number in [-1, 0].

    Compounded wealth starts from an initial wealth of 1; the literal summed
    form (wealthSum) takes its running maximum over the summed series only.
    """
    returns = np.asarray(returns, dtype=float)
    if len(returns) < 1:
        raise BacktestError("max drawdown needs at least one return")
    wealth = wealthSeries(returns, wealthSum=wealthSum)
    if not wealthSum:
        wealth = np.concatenate([[1.0], wealth])
    peaks = np.maximum.accumulate(wealth)
    return min(0.0, float((wealth / peaks - 1).min()))


def evaluate(returns, wealthSum: bool = False) -> PerformanceMetrics:
    annualReturn, risk, returnRisk = performance(returns)
    return PerformanceMetrics(
        annualReturn=annualReturn,
        risk=risk,
        returnRisk=returnRisk,
        maxDrawdown=maxDrawdown(returns, wealthSum=wealthSum),
    )


def averageWeights(
    weightSeries: WeightSeries, assetTypes: dict[str, str] | None = None
) -> tuple[dict[str, float], dict[str, float] | None]:
    """Time-averaged weights per asset and, when asset types are given, summed
    per asset type.
    """
    if len(weightSeries) == 0:
        raise BacktestError("cannot average an empty weight series")
    means = weightSeries.weights.mean(axis=0)
    perAsset = {
        asset: float(value) for asset, value in zip(weightSeries.assets, means)
    }
    if assetTypes is None:
        return perAsset, None

    perType = {assetType: 0.0 for assetType in ASSET_TYPES}
    for asset, value in perAsset.items():
        assetType = assetTypes.get(asset)
        if assetType not in perType:
            raise BacktestError(
                f"asset {asset!r} has unknown type {assetType!r}, "
                f"expected one of {ASSET_TYPES}"
            )
        perType[assetType] += value
    return perAsset, perType


def writeReport(report: BacktestReport, outputDir: os.PathLike | str) -> pathlib.Path:
    """Write one report bundle: report.json plus returns, weights and wealth
    CSVs (and fits.json when potential fits were recorded).
    """
    reportDir = pathlib.Path(outputDir) / report.strategy
    reportDir.mkdir(parents=True, exist_ok=True)

    writeJSON(reportDir / "report.json", report.toJSON())
    writeSeries(reportDir / "returns.csv", report.dates, "return", report.returns)
    writeSeries(reportDir / "wealth.csv", report.dates, "wealth", report.wealth)
    report.weightSeries.toFrame().to_csv(
        reportDir / "weights.csv", date_format="%Y-%m-%d", float_format="%.17g"
    )
    if report.fits:
        writeJSON(reportDir / "fits.json", list(report.fits))
    return reportDir


def writeSeries(path: pathlib.Path, dates, name: str, values) -> None:
    frame = pd.DataFrame({name: values}, index=dates)
    frame.index.name = "date"
    frame.to_csv(path, date_format="%Y-%m-%d", float_format="%.17g")


def writeJSON(path: pathlib.Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def summaryFrame(reports: list[BacktestReport]) -> pd.DataFrame:
    """Strategy comparison laid out with metrics as rows, strategies as columns;
    AR, RISK and MaxDD in percent.
    """
    columns = {}
    for report in reports:
        metrics = report.metrics
        columns[report.strategy] = [
            100 * metrics.annualReturn,
            100 * metrics.risk,
            metrics.returnRisk if metrics.returnRisk is not None else float("nan"),
            100 * metrics.maxDrawdown,
        ]
    return pd.DataFrame(columns, index=["AR [%]", "RISK [%]", "R/R", "MaxDD [%]"])
