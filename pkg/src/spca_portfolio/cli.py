import argparse
import dataclasses
import logging
import os
import pathlib
import re
from dataclasses import dataclass, field
from importlib import resources
import typing
from typing import Any

import numpy as np
import yaml

from .allocation import EIGEN_SOLVERS, OptimizerOptions
from .backtest import (
    BacktestConfig,
    BacktestReport,
    runBacktest,
    summaryFrame,
    writeReport,
)
from .errors import ConfigError, SpcaPortfolioError
from .market_data import (
    PANEL_KINDS,
    SynthesisSpec,
    describe,
    loadPanel,
    synthesize,
    writePanel,
)
from .strategies import strategyNames

logger = logging.getLogger(__name__)


DEFAULT_STRATEGIES = ["EW", "PCA", "HPCA", "SPCA"]
BUNDLED_SYNTHESIS_SPEC = "synthetic-12.yaml"


@dataclass(kw_only=True)
class RunConfig:
    input: str | None = None
    kind: str = "returns"
    strategies: list[str] = field(default_factory=lambda: list(DEFAULT_STRATEGIES))
    window: int = 250
    rebalance: int = 20
    factors: int | None = None
    restarts: int = 16
    seed: int | None = None
    tolerance: float = 1e-8
    maxIterations: int = 5000
    longOnly: bool = True
    out: str = "."
    excessKurtosis: bool = False
    wealthSum: bool = False
    assetTypes: str | dict[str, str] | None = None
    solver: str = "analytic"
    gridPoints: int = 2000
    renormalizeRows: bool = False
    diagonalLoading: float = 0.0
    dumpFits: bool = False
    workers: int = 1
    spec: str | None = None

    def __post_init__(self) -> None:
        if isinstance(self.strategies, str):
            self.strategies = self.strategies.replace(",", " ").split()

    @classmethod
    def fromValues(cls, values: dict[str, Any]) -> "RunConfig":
        fieldNames = {f.name for f in dataclasses.fields(cls)}
        normalized = {normalizeKey(k): v for k, v in values.items()}
        unknown = sorted(set(normalized) - fieldNames)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        fieldTypes = typing.get_type_hints(cls)
        return cls(
            **{k: coerceValue(k, fieldTypes[k], v) for k, v in normalized.items()}
        )

    def validate(self, needsInput: bool = True) -> None:
        if needsInput:
            if self.input is None:
                raise ConfigError("no input file given (use --input)")
            if not pathlib.Path(self.input).is_file():
                raise ConfigError(f"input file not found: {self.input}")
        if self.kind not in PANEL_KINDS:
            raise ConfigError(f"--kind must be one of {PANEL_KINDS}, got {self.kind!r}")
        if not self.strategies:
            raise ConfigError("the strategy list is empty")
        known = strategyNames()
        for name in self.strategies:
            if name not in known:
                raise ConfigError(f"unknown strategy {name!r}, expected one of {known}")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("strategies must not repeat")
        if self.solver not in EIGEN_SOLVERS:
            raise ConfigError(f"--solver must be one of {EIGEN_SOLVERS}")
        if self.restarts < 1:
            raise ConfigError("--restarts must be at least 1")
        checkWritableDirectory(pathlib.Path(self.out))

    def optimizerOptions(self) -> OptimizerOptions:
        return OptimizerOptions(
            restarts=self.restarts,
            seed=0 if self.seed is None else self.seed,
            tolerance=self.tolerance,
            maxIterations=self.maxIterations,
            longOnly=self.longOnly,
        )

    def backtestConfig(self, strategy: str) -> BacktestConfig:
        return BacktestConfig(
            window=self.window,
            rebalance=self.rebalance,
            strategy=strategy,
            factors=self.factors,
            optimizer=self.optimizerOptions(),
            diagonalLoading=self.diagonalLoading,
            eigenSolver=self.solver,
            gridPoints=self.gridPoints,
            renormalizeRows=self.renormalizeRows,
            wealthSum=self.wealthSum,
            dumpFits=self.dumpFits,
            workers=self.workers,
        )

    def loadAssetTypes(self) -> dict[str, str] | None:
        if self.assetTypes is None or isinstance(self.assetTypes, dict):
            return self.assetTypes
        path = pathlib.Path(self.assetTypes)
        if not path.is_file():
            raise ConfigError(f"asset type file not found: {path}")
        assetTypes = yaml.safe_load(path.read_text(encoding="utf-8"))
        if not isinstance(assetTypes, dict):
            raise ConfigError(f"asset type file must hold a mapping: {path}")
        return {str(k): str(v) for k, v in assetTypes.items()}


def normalizeKey(key: str) -> str:
    first, *rest = re.split(r"[-_]", key.strip())
    return first + "".join(part[:1].upper() + part[1:] for part in rest)


BOOLEAN_WORDS = {
    "true": True,
    "yes": True,
    "on": True,
    "1": True,
    "false": False,
    "no": False,
    "off": False,
    "0": False,
}


def toBool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, (str, int)) and str(value).strip().lower() in BOOLEAN_WORDS:
        return BOOLEAN_WORDS[str(value).strip().lower()]
    raise ValueError(value)


def toInt(value: Any) -> int:
    if isinstance(value, bool):
        raise TypeError(value)
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, (int, str)):
        return int(value)
    raise TypeError(value)


def toFloat(value: Any) -> float:
    if isinstance(value, bool):
        raise TypeError(value)
    if isinstance(value, (int, float, str)):
        return float(value)
    raise TypeError(value)


def toStr(value: Any) -> str:
    if isinstance(value, (str, os.PathLike)):
        return os.fspath(value)
    raise TypeError(value)


def toStrList(value: Any) -> str | list[str]:
    # a string is split later by RunConfig
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
        return list(value)
    raise TypeError(value)


def toDict(value: Any) -> dict:
    if isinstance(value, dict):
        return dict(value)
    raise TypeError(value)


CONVERTERS = {
    bool: toBool,
    int: toInt,
    float: toFloat,
    str: toStr,
    list: toStrList,
    dict: toDict,
}


def coerceValue(name: str, annotation: Any, value: Any) -> Any:
    """Convert a configuration value to the field's annotated type, trying the
    members of a union in order.
    """
    kinds = typing.get_args(annotation) if typing.get_origin(annotation) else ()
    if not kinds or typing.get_origin(annotation) in (list, dict):
        kinds = (annotation,)
    if value is None:
        if type(None) in kinds:
            return None
        raise ConfigError(f"{name} needs a value")
    for kind in kinds:
        converter = CONVERTERS.get(typing.get_origin(kind) or kind)
        if converter is None:
            continue
        try:
            return converter(value)
        except (TypeError, ValueError):
            continue
    raise ConfigError(f"invalid value for {name}: {value!r}")


def readConfigFile(path: os.PathLike | str) -> dict[str, Any]:
    """Read a YAML/JSON mapping, or `key=value` lines."""
    path = pathlib.Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError:
        data = None
    if isinstance(data, dict):
        return data
    if data is None and not text.strip():
        return {}

    values = {}
    for lineNumber, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineNumber}: expected key=value")
        values[key.strip()] = yaml.safe_load(value.strip()) if value.strip() else None
    return values


def checkWritableDirectory(directory: pathlib.Path) -> None:
    existing = directory
    while not existing.exists():
        if existing.parent == existing:
            break
        existing = existing.parent
    if not existing.is_dir() or not os.access(existing, os.W_OK):
        raise ConfigError(f"output directory is not writable: {directory}")


def cmdStats(config: RunConfig) -> int:
    config.validate()
    panel = loadPanel(config.input, kind=config.kind)
    stats = describe(panel, excessKurtosis=config.excessKurtosis)

    outputDir = pathlib.Path(config.out)
    outputDir.mkdir(parents=True, exist_ok=True)
    outputPath = outputDir / "stats.csv"
    stats.toFrame().to_csv(outputPath, index=False, float_format="%.17g")
    logger.info(f"wrote statistics for {panel.numAssets} assets to {outputPath}")
    return 0


def cmdBacktest(config: RunConfig) -> int:
    config.validate()
    panel = loadPanel(config.input, kind=config.kind)
    assetTypes = config.loadAssetTypes()
    backtestConfigs = [config.backtestConfig(name) for name in config.strategies]
    for backtestConfig in backtestConfigs:
        backtestConfig.validate(panel)

    reports = []
    for backtestConfig in backtestConfigs:
        logger.info(f"running {backtestConfig.strategy} backtest")
        reports.append(runBacktest(panel, backtestConfig, assetTypes=assetTypes))

    outputDir = pathlib.Path(config.out)
    outputDir.mkdir(parents=True, exist_ok=True)
    for report in reports:
        reportDir = writeReport(report, outputDir)
        logger.info(f"wrote {report.strategy} report to {reportDir}")

    summary = summaryFrame(reports)
    summary.to_csv(outputDir / "summary.csv", float_format="%.17g")
    print(summary.to_string(float_format=lambda v: f"{v:.2f}"))
    logTypeTilt(reports)
    return 0


def logTypeTilt(reports: list[BacktestReport]) -> None:
    # factor strategies are expected to hold more of the low-volatility group than EW
    byName = {report.strategy: report for report in reports}
    equalWeight = byName.get("EW")
    if equalWeight is None or equalWeight.typeWeights is None:
        return
    baseline = equalWeight.typeWeights["Bond"]
    for report in reports:
        if report is equalWeight or report.typeWeights is None:
            continue
        bondWeight = report.typeWeights["Bond"]
        if bondWeight > baseline:
            logger.info(
                f"{report.strategy} holds {bondWeight:.1%} in bonds vs. "
                f"{baseline:.1%} for EW"
            )
        else:
            logger.warning(
                f"{report.strategy} holds {bondWeight:.1%} in bonds, not more than "
                f"the {baseline:.1%} of EW"
            )


def cmdSynth(config: RunConfig) -> int:
    config.validate(needsInput=False)
    if config.spec is None:
        specFile = resources.files("spca_portfolio") / "data" / BUNDLED_SYNTHESIS_SPEC
        with resources.as_file(specFile) as specPath:
            spec = SynthesisSpec.fromFile(specPath)
    else:
        spec = SynthesisSpec.fromFile(config.spec)
    if config.seed is not None:
        spec.seed = config.seed
    panel = synthesize(spec)

    outputDir = pathlib.Path(config.out)
    outputDir.mkdir(parents=True, exist_ok=True)
    outputPath = outputDir / "returns.csv"
    writePanel(panel, outputPath)
    if spec.assetTypes:
        typesPath = outputDir / "asset-types.yaml"
        typesPath.write_text(
            yaml.safe_dump(dict(spec.assetTypes), sort_keys=True), encoding="utf-8"
        )
    logger.info(
        f"wrote {panel.numPeriods} periods of {panel.numAssets} synthetic assets "
        f"to {outputPath}"
    )
    return 0


COMMANDS = {
    "stats": cmdStats,
    "backtest": cmdBacktest,
    "synth": cmdSynth,
}


def buildParser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument(
        "--config", help="YAML/JSON file or key=value lines; flags override it."
    )
    common.add_argument(
        "--input", help="CSV panel: a date column, one column per asset."
    )
    common.add_argument(
        "--kind", choices=PANEL_KINDS, help="Input holds prices or returns."
    )
    common.add_argument("--out", help="Output directory.")
    common.add_argument("--seed", type=int, help="Random seed.")
    common.add_argument("--verbose", action="store_true", help="Log debug output.")
    common.add_argument("--quiet", action="store_true", help="Only log warnings.")

    parser = argparse.ArgumentParser(
        prog="spca-portfolio",
        description="Factor risk diversification portfolios and backtests.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    stats = subparsers.add_parser(
        "stats", parents=[common], argument_default=argparse.SUPPRESS
    )
    stats.add_argument(
        "--excess-kurtosis",
        action="store_true",
        help="Report excess kurtosis (raw minus 3).",
    )

    backtest = subparsers.add_parser(
        "backtest", parents=[common], argument_default=argparse.SUPPRESS
    )
    backtest.add_argument(
        "--strategies",
        help="Comma- or space-delimited list drawn from EW, PCA, HPCA, SPCA.",
    )
    backtest.add_argument("--window", type=int, help="Estimation window (default 250).")
    backtest.add_argument(
        "--rebalance", type=int, help="Rebalance period (default 20)."
    )
    backtest.add_argument("--factors", type=int, help="Number of factors L.")
    backtest.add_argument("--restarts", type=int, help="Optimizer restarts.")
    backtest.add_argument("--tolerance", type=float, help="Gradient tolerance.")
    backtest.add_argument("--max-iterations", type=int, help="Iterations per restart.")
    backtest.add_argument(
        "--long-only", dest="longOnly", action="store_const", const=True
    )
    backtest.add_argument(
        "--allow-short", dest="longOnly", action="store_const", const=False
    )
    backtest.add_argument(
        "--wealth-sum",
        action="store_true",
        help="Drawdowns on summed instead of compounded wealth.",
    )
    backtest.add_argument(
        "--asset-types", help="YAML/JSON mapping of asset to Bond or Equity."
    )
    backtest.add_argument("--solver", choices=EIGEN_SOLVERS, help="SPCA eigen solver.")
    backtest.add_argument("--grid-points", type=int, help="Numeric solver grid size.")
    backtest.add_argument("--renormalize-rows", action="store_true")
    backtest.add_argument("--diagonal-loading", type=float)
    backtest.add_argument(
        "--dump-fits", action="store_true", help="Write SPCA potential fits."
    )
    backtest.add_argument("--workers", type=int, help="Parallel rebalance fits.")

    synth = subparsers.add_parser(
        "synth", parents=[common], argument_default=argparse.SUPPRESS
    )
    synth.add_argument("--spec", help="Synthesis spec (defaults to the bundled one).")

    return parser


def runCommand(argv: list[str] | None = None) -> int:
    args = vars(buildParser().parse_args(argv))
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    quiet = args.pop("quiet", False)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        configPath = args.pop("config", None)
        values = readConfigFile(configPath) if configPath is not None else {}
        values = {normalizeKey(k): v for k, v in values.items()}
        values.update({normalizeKey(k): v for k, v in args.items()})
        config = RunConfig.fromValues(values)
        return COMMANDS[command](config)
    except (SpcaPortfolioError, OSError) as e:
        logger.error(str(e))
        return 1
    except np.linalg.LinAlgError as e:
        logger.error(f"linear algebra failure: {e}")
        return 1
