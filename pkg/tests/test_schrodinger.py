import math

import numpy as np
import pytest
from numpy.polynomial import hermite as hermitePolynomial

from spca_portfolio.errors import BasisError, PotentialFitError
from spca_portfolio.schrodinger import (
    EigenBasis,
    PotentialFit,
    analyticEigenbasis,
    fitHarmonicPotential,
    hermite,
    numericDomainFor,
    numericEigenbasis,
    quadratureGram,
    sampleBasis,
)


def squaredError(variances, k, x0):
    sortedVariances = np.sort(variances)
    grid = x0 + np.arange(len(variances))
    return float(((0.5 * k * grid**2 - sortedVariances) ** 2).sum())


def unitFit(numAssets=3):
    return PotentialFit(k=1.0, x0=1.0, assignment=np.arange(numAssets), residual=0.0)


def test_fitHarmonicPotential_exact():
    fit = fitHarmonicPotential([0.5, 2.0, 4.5])
    assert fit.k == pytest.approx(1.0, rel=1e-8)
    assert fit.x0 == pytest.approx(1.0, rel=1e-8)
    assert fit.dx == 1.0
    assert fit.residual < 1e-10
    assert fit.assignment.tolist() == [0, 1, 2]
    assert not fit.degenerate


def test_fitHarmonicPotential_permuted():
    fit = fitHarmonicPotential([4.5, 0.5, 2.0])
    assert fit.k == pytest.approx(1.0, rel=1e-8)
    assert fit.x0 == pytest.approx(1.0, rel=1e-8)
    assert fit.assignment.tolist() == [2, 0, 1]
    np.testing.assert_allclose(fit.coordinates, [3.0, 1.0, 2.0], rtol=1e-8)
    np.testing.assert_allclose(
        fit.potential(fit.coordinates), [4.5, 0.5, 2.0], rtol=1e-7
    )


def test_fitHarmonicPotential_beatsGridSearch():
    variances = np.array([0.2, 0.5, 0.9, 1.6, 2.0])
    fit = fitHarmonicPotential(variances)
    best = min(
        squaredError(variances, k, x0)
        for k in np.geomspace(1e-3, 10, 200)
        for x0 in np.linspace(0, 50, 201)
    )
    assert squaredError(variances, fit.k, fit.x0) <= best + 1e-12
    assert fit.residual == pytest.approx(
        math.sqrt(squaredError(variances, fit.k, fit.x0) / 5), rel=1e-9
    )


def test_fitHarmonicPotential_scaleCovariance():
    variances = np.array([0.3, 1.1, 2.0, 4.2, 0.7])
    fit = fitHarmonicPotential(variances)
    scaled = fitHarmonicPotential(25.0 * variances)
    assert scaled.k == pytest.approx(25.0 * fit.k, rel=1e-6)
    assert scaled.x0 == pytest.approx(fit.x0, rel=1e-6, abs=1e-9)
    assert scaled.assignment.tolist() == fit.assignment.tolist()


def test_fitHarmonicPotential_tiesKeepAssetOrder():
    fit = fitHarmonicPotential([2.0, 1.0, 2.0, 3.0])
    assert fit.assignment.tolist() == [1, 0, 2, 3]


def test_fitHarmonicPotential_degenerate(caplog):
    fit = fitHarmonicPotential([0.04, 0.04, 0.04])
    assert fit.degenerate
    assert fit.k > 0
    assert "degenerate" in caplog.text


@pytest.mark.parametrize(
    "variances", [[1.0], [1.0, -2.0], [1.0, 0.0], [1.0, np.nan], [[1.0, 2.0]]]
)
def test_fitHarmonicPotential_invalid(variances):
    with pytest.raises(PotentialFitError):
        fitHarmonicPotential(variances)


def test_potentialFit_toJSON():
    fit = fitHarmonicPotential([0.5, 2.0, 4.5])
    data = fit.toJSON()
    assert set(data) == {"k", "x0", "dx", "assignment", "residual", "degenerate"}
    assert data["assignment"] == [0, 1, 2]
    assert data["degenerate"] is False


@pytest.mark.parametrize(
    "l, y, expected",
    [
        (0, 0.3, 1.0),
        (0, -7.0, 1.0),
        (1, 3.0, 6.0),
        (2, 1.0, 2.0),
        (3, 2.0, 40.0),
    ],
)
def test_hermite_values(l, y, expected):
    assert hermite(l, y) == pytest.approx(expected, rel=1e-15)


def test_hermite_matchesExpansion():
    y = np.linspace(-3, 3, 13)
    for l in range(21):
        coefficients = np.zeros(l + 1)
        coefficients[l] = 1
        np.testing.assert_allclose(
            hermite(l, y),
            hermitePolynomial.hermval(y, coefficients),
            rtol=1e-12,
            atol=1e-12 * np.abs(hermite(l, y)).max(),
        )


def test_hermite_recurrence():
    y = np.linspace(-2.5, 2.5, 11)
    for l in range(1, 20):
        np.testing.assert_allclose(
            hermite(l + 1, y),
            2 * y * hermite(l, y) - 2 * l * hermite(l - 1, y),
            rtol=1e-12,
            atol=1e-12 * np.abs(hermite(l + 1, y)).max(),
        )


@pytest.mark.parametrize("l", [65, -1, 1.5])
def test_hermite_invalidOrder(l):
    with pytest.raises(BasisError):
        hermite(l, 0.0)


def test_analyticEigenbasis_energies():
    basis = analyticEigenbasis(unitFit(), 3)
    np.testing.assert_allclose(basis.energies, [0.5, 1.5, 2.5])
    assert basis.order == 3
    assert basis.method == "analytic"


def test_analyticEigenbasis_groundState():
    basis = analyticEigenbasis(unitFit(), 1)
    assert basis.functions[0](np.array([0.0]))[0] == pytest.approx(
        math.pi**-0.25, rel=1e-14
    )
    assert math.pi**-0.25 == pytest.approx(0.7511255, rel=1e-7)


def test_analyticEigenbasis_sqrtScaling():
    fit = PotentialFit(k=4.0, x0=0.5, assignment=np.arange(3), residual=0.0)
    doubled = analyticEigenbasis(fit, 4).energies
    np.testing.assert_allclose(doubled, 2 * analyticEigenbasis(unitFit(), 4).energies)


@pytest.mark.parametrize("k", [1.0, 0.05, 30.0])
@pytest.mark.parametrize("L", [1, 5, 12])
def test_analyticEigenbasis_orthonormal(k, L):
    fit = PotentialFit(k=k, x0=1.0, assignment=np.arange(12), residual=0.0)
    basis = analyticEigenbasis(fit, L)
    gram = quadratureGram(basis)
    assert np.abs(gram - np.eye(L)).sum(axis=1).max() < 1e-6


def test_analyticEigenbasis_errors():
    with pytest.raises(BasisError):
        analyticEigenbasis(unitFit(), 0)
    degenerate = PotentialFit(
        k=1.0, x0=0.0, assignment=np.arange(3), residual=0.0, degenerate=True
    )
    with pytest.raises(PotentialFitError):
        analyticEigenbasis(degenerate, 2)


def test_numericEigenbasis_harmonic():
    basis = numericEigenbasis(lambda x: 0.5 * x**2, (-12.0, 12.0), gridPoints=2000, L=5)
    np.testing.assert_allclose(basis.energies, [0.5, 1.5, 2.5, 3.5, 4.5], rtol=1e-4)
    assert basis.method == "numeric"
    gram = quadratureGram(basis)
    assert np.abs(gram - np.eye(5)).sum(axis=1).max() < 1e-6


def test_numericEigenbasis_infiniteWell():
    basis = numericEigenbasis(lambda x: 0.0, (0.0, math.pi), gridPoints=2000, L=3)
    assert basis.energies[0] == pytest.approx(0.5, rel=1e-3)
    np.testing.assert_allclose(basis.energies, [0.5, 2.0, 4.5], rtol=1e-3)


def test_numericEigenbasis_secondOrder():
    def firstLevelError(gridPoints):
        basis = numericEigenbasis(lambda x: 0.0, (0.0, math.pi), gridPoints, L=1)
        return abs(basis.energies[0] - 0.5)

    ratio = firstLevelError(201) / firstLevelError(401)
    assert 3.9 < ratio < 4.1


@pytest.mark.parametrize("k", [1.0, 0.2, 6.0])
def test_numericEigenbasis_matchesAnalytic(k):
    fit = PotentialFit(k=k, x0=1.0, assignment=np.arange(4), residual=0.0)
    analytic = analyticEigenbasis(fit, 5)
    numeric = numericEigenbasis(fit.potential, numericDomainFor(fit), L=5)
    np.testing.assert_allclose(numeric.energies, analytic.energies, rtol=1e-4)
    x = fit.coordinates
    np.testing.assert_allclose(numeric.evaluate(x), analytic.evaluate(x), atol=1e-3)


@pytest.mark.parametrize(
    "domain, gridPoints, L",
    [((1.0, 1.0), 100, 1), ((0.0, 1.0), 10, 1), ((0.0, 1.0), 100, 99)],
)
def test_numericEigenbasis_invalid(domain, gridPoints, L):
    with pytest.raises(BasisError):
        numericEigenbasis(lambda x: 0.0 * x, domain, gridPoints, L)


def test_numericEigenbasis_nonFinitePotential():
    with pytest.raises(BasisError, match="not finite"):
        numericEigenbasis(lambda x: 1 / x, (-1.0, 1.0), gridPoints=101, L=1)


def test_sampleBasis_indicators():
    # ψ_l is the indicator of grid point l, so Psi is a permutation matrix
    fit = fitHarmonicPotential([4.5, 0.5, 2.0])
    basis = EigenBasis(
        energies=np.array([1.0, 2.0, 3.0]),
        functions=tuple(
            (lambda x, l=l: (np.abs(x - (fit.x0 + l)) < 0.25).astype(float))
            for l in range(3)
        ),
    )
    sampled = sampleBasis(basis, fit)
    np.testing.assert_array_equal(
        sampled.psi, [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
    )
    np.testing.assert_array_equal(sampled.energies, [1.0, 2.0, 3.0])


def test_sampleBasis_analytic():
    fit = unitFit()
    sampled = sampleBasis(analyticEigenbasis(fit, 3), fit)
    assert sampled.psi.shape == (3, 3)
    assert np.isfinite(sampled.psi).all()
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(sampled.coordinates, x)
    np.testing.assert_allclose(
        sampled.psi[0], math.pi**-0.25 * np.exp(-(x**2) / 2), rtol=1e-14
    )


def test_sampleBasis_outsideDomain():
    fit = unitFit()
    basis = numericEigenbasis(fit.potential, (-2.0, 2.0), gridPoints=200, L=2)
    with pytest.raises(BasisError, match="outside"):
        sampleBasis(basis, fit)
