import json
import pathlib
import subprocess

import numpy as np
import pandas as pd
import pytest
import yaml

from spca_portfolio.cli import (
    RunConfig,
    coerceValue,
    normalizeKey,
    readConfigFile,
    runCommand,
)
from spca_portfolio.errors import ConfigError

testDir = pathlib.Path(__file__).resolve().parent
dataDir = testDir / "data"

strategyNames = ["EW", "PCA", "HPCA", "SPCA"]


@pytest.fixture(scope="module")
def synthDir(tmp_path_factory):
    outDir = tmp_path_factory.mktemp("synth")
    subprocess.run(["spca-portfolio", "synth", "--out", outDir], check=True)
    return outDir


def runBacktestCommand(inputPath, outDir, *extraArgs):
    return subprocess.run(
        [
            "spca-portfolio",
            "backtest",
            "--input",
            inputPath,
            "--out",
            outDir,
            "--asset-types",
            inputPath.parent / "asset-types.yaml",
            *extraArgs,
        ],
        check=True,
        capture_output=True,
        text=True,
    )


def test_synth_bundledSpec(synthDir):
    frame = pd.read_csv(synthDir / "returns.csv")
    assert frame.shape == (1000, 13)
    assert frame.columns[0] == "date"
    assetTypes = yaml.safe_load((synthDir / "asset-types.yaml").read_text())
    assert sorted(set(assetTypes.values())) == ["Bond", "Equity"]
    assert sorted(assetTypes) == sorted(frame.columns[1:])

    # bond-like assets are the low-volatility group
    stds = frame.iloc[:, 1:].std()
    bonds = [name for name, kind in assetTypes.items() if kind == "Bond"]
    equities = [name for name, kind in assetTypes.items() if kind == "Equity"]
    assert stds[bonds].max() < stds[equities].min()


def test_synth_seed(tmpdir, synthDir):
    tmpdir = pathlib.Path(tmpdir)
    subprocess.run(
        ["spca-portfolio", "synth", "--out", tmpdir, "--seed", "99"], check=True
    )
    assert (tmpdir / "returns.csv").read_bytes() != (
        synthDir / "returns.csv"
    ).read_bytes()


def test_synth_identityCorrelation(tmpdir):
    tmpdir = pathlib.Path(tmpdir)
    specPath = tmpdir / "spec.yaml"
    specPath.write_text(
        yaml.safe_dump(
            {
                "volatilities": [0.01, 0.02, 0.03],
                "correlation": np.eye(3).tolist(),
                "periods": 50000,
                "seed": 4,
            }
        )
    )
    subprocess.run(
        ["spca-portfolio", "synth", "--spec", specPath, "--out", tmpdir], check=True
    )
    frame = pd.read_csv(tmpdir / "returns.csv", index_col="date")
    correlation = frame.corr().to_numpy()
    assert np.abs(correlation - np.eye(3)).max() < 0.02
    assert not (tmpdir / "asset-types.yaml").exists()


def test_synth_invalidCorrelation(tmpdir):
    tmpdir = pathlib.Path(tmpdir)
    specPath = tmpdir / "spec.yaml"
    specPath.write_text(
        "volatilities: [0.01, 0.02]\ncorrelation: [[1, 2], [2, 1]]\nperiods: 10\n"
    )
    outDir = tmpdir / "out"
    assert runCommand(["synth", "--spec", str(specPath), "--out", str(outDir)]) == 1
    assert not outDir.exists()


def test_stats(tmpdir, synthDir):
    tmpdir = pathlib.Path(tmpdir)
    inputPath = synthDir / "returns.csv"
    subprocess.run(
        ["spca-portfolio", "stats", "--input", inputPath, "--out", tmpdir / "raw"],
        check=True,
    )
    subprocess.run(
        [
            "spca-portfolio",
            "stats",
            "--input",
            inputPath,
            "--out",
            tmpdir / "excess",
            "--excess-kurtosis",
        ],
        check=True,
    )
    raw = pd.read_csv(tmpdir / "raw" / "stats.csv")
    excess = pd.read_csv(tmpdir / "excess" / "stats.csv")
    assert raw.shape == (12, 5)
    assert list(raw.columns) == ["asset", "mean", "std", "skew", "kurt"]
    np.testing.assert_allclose(raw["kurt"] - excess["kurt"], 3.0, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(raw["std"], excess["std"])


def test_stats_prices(tmpdir):
    tmpdir = pathlib.Path(tmpdir)
    prices = 100 * np.cumprod(1 + np.random.default_rng(0).normal(0, 0.01, (30, 2)), 0)
    frame = pd.DataFrame(
        prices, index=pd.bdate_range("2020-01-01", periods=30), columns=["X", "Y"]
    )
    frame.index.name = "date"
    frame.to_csv(tmpdir / "prices.csv")
    exitCode = runCommand(
        [
            "stats",
            "--input",
            str(tmpdir / "prices.csv"),
            "--kind",
            "prices",
            "--out",
            str(tmpdir),
        ]
    )
    assert exitCode == 0
    stats = pd.read_csv(tmpdir / "stats.csv")
    returns = prices[1:] / prices[:-1] - 1
    np.testing.assert_allclose(stats["mean"], returns.mean(axis=0), rtol=1e-12)


def test_stats_missingFile(tmpdir):
    tmpdir = pathlib.Path(tmpdir)
    missing = tmpdir / "does-not-exist.csv"
    result = subprocess.run(
        ["spca-portfolio", "stats", "--input", missing, "--out", tmpdir / "out"],
        capture_output=True,
        text=True,
    )
    assert result.returncode != 0
    assert "does-not-exist.csv" in result.stderr
    assert not (tmpdir / "out").exists()


def test_backtest_endToEnd(tmpdir, synthDir):
    tmpdir = pathlib.Path(tmpdir)
    inputPath = synthDir / "returns.csv"
    args = ["--restarts", "2", "--rebalance", "50"]
    first = runBacktestCommand(inputPath, tmpdir / "first", *args)
    second = runBacktestCommand(inputPath, tmpdir / "second", *args)

    for line in ["AR [%]", "RISK [%]", "R/R", "MaxDD [%]"]:
        assert line in first.stdout
    assert first.stdout == second.stdout

    assert sorted(p.name for p in (tmpdir / "first").iterdir()) == sorted(
        strategyNames + ["summary.csv"]
    )
    for path in sorted((tmpdir / "first").rglob("*")):
        if path.is_file():
            twin = tmpdir / "second" / path.relative_to(tmpdir / "first")
            assert path.read_bytes() == twin.read_bytes(), path

    summary = pd.read_csv(tmpdir / "first" / "summary.csv", index_col=0)
    assert list(summary.columns) == strategyNames

    typeWeights = {}
    for name in strategyNames:
        report = json.loads((tmpdir / "first" / name / "report.json").read_text())
        assert report["rebalances"] == 15
        assert report["periods"] == 750
        typeWeights[name] = report["typeWeights"]
        weights = pd.read_csv(tmpdir / "first" / name / "weights.csv", index_col="date")
        assert (weights.to_numpy() >= 0).all()
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-10)

    # the risk-diversifying strategies tilt toward the low-volatility group
    for name in ["PCA", "HPCA", "SPCA"]:
        assert typeWeights[name]["Bond"] > typeWeights["EW"]["Bond"]


def test_backtest_windowTooLong(tmpdir, synthDir):
    tmpdir = pathlib.Path(tmpdir)
    result = subprocess.run(
        [
            "spca-portfolio",
            "backtest",
            "--input",
            synthDir / "returns.csv",
            "--out",
            tmpdir / "out",
            "--window",
            "990",
            "--rebalance",
            "20",
        ],
        capture_output=True,
        text=True,
    )
    assert result.returncode != 0
    assert "exceeds" in result.stderr
    assert not (tmpdir / "out").exists()


testData = [
    (
        """
strategies: EW,SPCA
window: 500
rebalance: 250
""",
        [],
        {"window": 500, "rebalance": 250, "strategies": ["EW", "SPCA"]},
    ),
    (
        """
# flags override the config file
strategies: [EW, PCA]
window: 500
rebalance: 250
restarts: 3
""",
        ["--window", "600", "--strategies", "PCA"],
        {"window": 600, "rebalance": 250, "strategies": ["PCA"], "restarts": 3},
    ),
    (
        """
strategies = HPCA
window = 400
max-iterations = 200
long_only = false
""",
        ["--rebalance", "300"],
        {
            "window": 400,
            "rebalance": 300,
            "strategies": ["HPCA"],
            "maxIterations": 200,
            "longOnly": False,
        },
    ),
]


@pytest.mark.parametrize("configSource, extraArgs, expected", testData)
def test_backtest_configFile(tmpdir, synthDir, configSource, extraArgs, expected):
    tmpdir = pathlib.Path(tmpdir)
    configPath = tmpdir / "config.txt"
    configPath.write_text(configSource)
    outDir = tmpdir / "out"
    subprocess.run(
        [
            "spca-portfolio",
            "backtest",
            "--config",
            configPath,
            "--input",
            synthDir / "returns.csv",
            "--out",
            outDir,
            *extraArgs,
        ],
        check=True,
    )
    assert sorted(p.name for p in outDir.iterdir() if p.is_dir()) == sorted(
        expected["strategies"]
    )
    for name in expected["strategies"]:
        config = json.loads((outDir / name / "report.json").read_text())["config"]
        assert config["window"] == expected["window"]
        assert config["rebalance"] == expected["rebalance"]
        if "restarts" in expected:
            assert config["optimizer"]["restarts"] == expected["restarts"]
        if "maxIterations" in expected:
            assert config["optimizer"]["maxIterations"] == expected["maxIterations"]
        if "longOnly" in expected:
            assert config["optimizer"]["longOnly"] == expected["longOnly"]


@pytest.mark.parametrize(
    "args",
    [
        ["backtest", "--strategies", "EW,MVO"],
        ["backtest", "--strategies", ""],
        ["backtest", "--strategies", "EW,EW"],
        ["backtest", "--restarts", "0"],
    ],
)
def test_backtest_invalidConfig(tmpdir, synthDir, args):
    tmpdir = pathlib.Path(tmpdir)
    outDir = tmpdir / "out"
    args = args + ["--input", str(synthDir / "returns.csv"), "--out", str(outDir)]
    assert runCommand(args) == 1
    assert not outDir.exists()


def test_readConfigFile_keyValue(tmpdir):
    path = pathlib.Path(tmpdir) / "run.cfg"
    path.write_text("# run settings\nwindow=120\n\nwealth-sum = true\nkind=prices\n")
    assert readConfigFile(path) == {"window": 120, "wealth-sum": True, "kind": "prices"}


def test_readConfigFile_malformed(tmpdir):
    path = pathlib.Path(tmpdir) / "run.cfg"
    path.write_text("window=120\njust some words\n")
    with pytest.raises(ConfigError, match="expected key=value"):
        readConfigFile(path)


@pytest.mark.parametrize(
    "key, expected",
    [
        ("window", "window"),
        ("max-iterations", "maxIterations"),
        ("max_iterations", "maxIterations"),
        ("maxIterations", "maxIterations"),
        ("diagonal-loading", "diagonalLoading"),
    ],
)
def test_normalizeKey(key, expected):
    assert normalizeKey(key) == expected


def test_runConfig_unknownKey():
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.fromValues({"window": 10, "colour": "red"})


@pytest.mark.parametrize(
    "values, expected",
    [
        ({"window": "120"}, {"window": 120}),
        ({"window": 120.0}, {"window": 120}),
        ({"long-only": "no"}, {"longOnly": False}),
        ({"diagonal_loading": "1e-6"}, {"diagonalLoading": 1e-6}),
        ({"factors": None}, {"factors": None}),
        ({"asset-types": {"A": "Bond"}}, {"assetTypes": {"A": "Bond"}}),
        ({"strategies": ["EW", "SPCA"]}, {"strategies": ["EW", "SPCA"]}),
        ({"input": pathlib.Path("returns.csv")}, {"input": "returns.csv"}),
    ],
)
def test_runConfig_coercesValues(values, expected):
    config = RunConfig.fromValues(values)
    for name, value in expected.items():
        assert getattr(config, name) == value
        assert type(getattr(config, name)) is type(value)


@pytest.mark.parametrize(
    "values, message",
    [
        ({"window": "abc"}, "invalid value for window"),
        ({"window": True}, "invalid value for window"),
        ({"window": 2.5}, "invalid value for window"),
        ({"longOnly": "maybe"}, "invalid value for longOnly"),
        ({"strategies": [1, 2]}, "invalid value for strategies"),
        ({"window": None}, "window needs a value"),
    ],
)
def test_runConfig_invalidValues(values, message):
    with pytest.raises(ConfigError, match=message):
        RunConfig.fromValues(values)


def test_coerceValue_unionOrder():
    assert coerceValue("assetTypes", str | dict[str, str] | None, "types.yaml") == (
        "types.yaml"
    )
    assert coerceValue("seed", int | None, "7") == 7


def test_backtest_configFileWrongType(tmpdir, synthDir, caplog):
    tmpdir = pathlib.Path(tmpdir)
    configPath = tmpdir / "config.yaml"
    configPath.write_text("window: abc\n")
    outDir = tmpdir / "out"
    args = ["backtest", "--config", str(configPath)]
    args += ["--input", str(synthDir / "returns.csv"), "--out", str(outDir)]
    assert runCommand(args) == 1
    assert "invalid value for window" in caplog.text
    assert not outDir.exists()
