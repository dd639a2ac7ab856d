import logging
import os
import pathlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml
from scipy import stats

from .errors import PanelError

logger = logging.getLogger(__name__)


PANEL_KINDS = ("prices", "returns")

MIN_DESCRIBE_PERIODS = 4


@dataclass(frozen=True, kw_only=True, eq=False)
class ReturnPanel:
    """Dated T×N matrix of simple per-period returns.

    The values array is made read-only on construction, so a panel can be shared
    between threads and between rebalance windows without copying.
    """

    dates: pd.DatetimeIndex
    assets: tuple[str, ...]
    values: np.ndarray
    droppedRows: int = 0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise PanelError(f"return matrix must be 2-dimensional, got {values.ndim}")
        dates = pd.DatetimeIndex(self.dates)
        assets = tuple(str(asset) for asset in self.assets)
        if values.shape != (len(dates), len(assets)):
            raise PanelError(
                f"return matrix shape {values.shape} does not match "
                f"{len(dates)} dates and {len(assets)} assets"
            )
        if len(set(assets)) != len(assets):
            raise PanelError(f"duplicate asset names: {sorted(findDuplicates(assets))}")
        if not dates.is_monotonic_increasing or not dates.is_unique:
            raise PanelError("dates must be strictly increasing")
        if not np.isfinite(values).all():
            raise PanelError("return matrix contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", assets)

    @property
    def numPeriods(self) -> int:
        return self.values.shape[0]

    @property
    def numAssets(self) -> int:
        return self.values.shape[1]

    def window(self, endIndex: int, length: int) -> "ReturnPanel":
        return window(self, endIndex, length)

    def toFrame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, index=self.dates, columns=list(self.assets))
        frame.index.name = "date"
        return frame


@dataclass(frozen=True, kw_only=True, eq=False)
class DescriptiveStats:
    assets: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    skew: np.ndarray
    kurt: np.ndarray
    excessKurtosis: bool = False

    @property
    def variance(self) -> np.ndarray:
        return self.std**2

    def toFrame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "asset": list(self.assets),
                "mean": self.mean,
                "std": self.std,
                "skew": self.skew,
                "kurt": self.kurt,
            }
        )


@dataclass(kw_only=True)
class SynthesisSpec:
    volatilities: list[float]
    correlation: list[list[float]]
    periods: int
    seed: int = 0
    means: list[float] | None = None
    assets: list[str] | None = None
    assetTypes: dict[str, str] = field(default_factory=dict)
    startDate: str = "2000-01-03"

    @classmethod
    def fromFile(cls, path: os.PathLike | str) -> "SynthesisSpec":
        path = pathlib.Path(path)
        if not path.exists():
            raise PanelError(f"synthesis spec not found: {path}")
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise PanelError(f"synthesis spec must be a mapping: {path}")
        try:
            return cls(**data)
        except TypeError as e:
            raise PanelError(f"invalid synthesis spec {path}: {e}") from e

    def assetNames(self) -> list[str]:
        if self.assets is not None:
            return list(self.assets)
        width = len(str(len(self.volatilities)))
        return [f"A{i + 1:0{width}d}" for i in range(len(self.volatilities))]


def loadPanel(path: os.PathLike | str, kind: str = "returns") -> ReturnPanel:
    """Read a CSV panel whose first column holds dates and whose remaining
    columns hold one asset each. Price panels are converted to simple returns.
    Rows with any missing or unparsable cell are dropped as a whole.
    """
    if kind not in PANEL_KINDS:
        raise PanelError(f"unknown panel kind {kind!r}, expected one of {PANEL_KINDS}")
    path = pathlib.Path(path)
    if not path.is_file():
        raise PanelError(f"input file not found: {path}")

    try:
        header = pd.read_csv(path, header=None, nrows=1, dtype=str).iloc[0].tolist()
    except pd.errors.EmptyDataError as e:
        raise PanelError(f"empty input file: {path}") from e
    assets = [str(name).strip() for name in header[1:]]
    if not assets:
        raise PanelError(f"no asset columns in {path}")
    duplicates = findDuplicates(assets)
    if duplicates:
        raise PanelError(f"duplicate asset names in {path}: {sorted(duplicates)}")

    try:
        raw = pd.read_csv(path, header=None, skiprows=1, dtype=str)
    except pd.errors.EmptyDataError as e:
        raise PanelError(f"fewer than 2 usable rows in {path}") from e
    except pd.errors.ParserError as e:
        raise PanelError(f"malformed CSV {path}: {e}") from e
    raw = raw.reindex(columns=range(len(assets) + 1))
    dates = pd.to_datetime(raw[0].str.strip(), errors="coerce", format="ISO8601")
    cells = raw.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    cells = cells.replace([np.inf, -np.inf], np.nan)

    usable = dates.notna().to_numpy() & cells.notna().all(axis=1).to_numpy()
    droppedRows = int(len(raw) - usable.sum())
    if droppedRows:
        logger.warning(f"dropped {droppedRows} incomplete row(s) from {path}")
    if usable.sum() < 2:
        raise PanelError(f"fewer than 2 usable rows in {path}")

    dates = pd.DatetimeIndex(dates[usable])
    values = cells.to_numpy(dtype=float)[usable]
    if not dates.is_monotonic_increasing or not dates.is_unique:
        raise PanelError(f"dates in {path} are not strictly increasing")

    if kind == "prices":
        if (values <= 0).any():
            raise PanelError(f"non-positive prices in {path}")
        values = pricesToReturns(values)
        dates = dates[1:]

    return ReturnPanel(
        dates=dates, assets=tuple(assets), values=values, droppedRows=droppedRows
    )


def writePanel(panel: ReturnPanel, path: os.PathLike | str) -> None:
    panel.toFrame().to_csv(path, date_format="%Y-%m-%d", float_format="%.17g")


def pricesToReturns(prices: np.ndarray) -> np.ndarray:
    prices = np.asarray(prices, dtype=float)
    return prices[1:] / prices[:-1] - 1


def describe(panel: ReturnPanel, excessKurtosis: bool = False) -> DescriptiveStats:
    if panel.numPeriods < MIN_DESCRIBE_PERIODS:
        raise PanelError(
            f"descriptive statistics need at least {MIN_DESCRIBE_PERIODS} periods, "
            f"got {panel.numPeriods}"
        )
    values = panel.values
    # plain moment estimators (bias=True), raw fourth moment unless asked for excess
    return DescriptiveStats(
        assets=panel.assets,
        mean=values.mean(axis=0),
        std=values.std(axis=0, ddof=1),
        skew=stats.skew(values, axis=0, bias=True),
        kurt=stats.kurtosis(values, axis=0, fisher=excessKurtosis, bias=True),
        excessKurtosis=excessKurtosis,
    )


def window(panel: ReturnPanel, endIndex: int, length: int) -> ReturnPanel:
    if length < 1 or not (length <= endIndex <= panel.numPeriods):
        raise PanelError(
            f"window [{endIndex - length}, {endIndex}) out of range for "
            f"{panel.numPeriods} periods"
        )
    startIndex = endIndex - length
    return ReturnPanel(
        dates=panel.dates[startIndex:endIndex],
        assets=panel.assets,
        values=panel.values[startIndex:endIndex],
    )


def synthesize(spec: SynthesisSpec) -> ReturnPanel:
    volatilities = np.asarray(spec.volatilities, dtype=float)
    correlation = np.asarray(spec.correlation, dtype=float)
    numAssets = len(volatilities)

    if volatilities.ndim != 1 or numAssets < 1:
        raise PanelError("volatilities must be a nonempty vector")
    if (volatilities <= 0).any():
        raise PanelError("volatilities must be positive")
    if correlation.shape != (numAssets, numAssets):
        raise PanelError(
            f"correlation matrix shape {correlation.shape} does not match "
            f"{numAssets} volatilities"
        )
    if not np.allclose(correlation, correlation.T, rtol=0, atol=1e-12):
        raise PanelError("correlation matrix is not symmetric")
    if not np.allclose(np.diag(correlation), 1.0, rtol=0, atol=1e-12):
        raise PanelError("correlation matrix must have a unit diagonal")
    if spec.periods < 1:
        raise PanelError(f"number of periods must be positive, got {spec.periods}")
    try:
        cholesky = np.linalg.cholesky(correlation)
    except np.linalg.LinAlgError as e:
        raise PanelError("correlation matrix is not positive definite") from e

    means = (
        np.zeros(numAssets) if spec.means is None else np.asarray(spec.means, float)
    )
    if means.shape != (numAssets,):
        raise PanelError("means must have one entry per asset")

    rng = np.random.default_rng(spec.seed)
    shocks = rng.standard_normal((spec.periods, numAssets)) @ cholesky.T
    values = means + shocks * volatilities

    return ReturnPanel(
        dates=pd.bdate_range(spec.startDate, periods=spec.periods),
        assets=tuple(spec.assetNames()),
        values=values,
    )


def findDuplicates(seq) -> set:
    seen: set = set()
    duplicates = set()
    for item in seq:
        if item in seen:
            duplicates.add(item)
        seen.add(item)
    return duplicates
