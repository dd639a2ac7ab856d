from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, signal

from .errors import ConvergenceError, NumericsError

SYMMETRY_TOLERANCE = 1e-12
JACOBI_TOLERANCE = 1e-14
JACOBI_MAX_SWEEPS = 60
MIN_ANALYTIC_SIGNAL_LENGTH = 8
HERMITIAN_CLUSTER_TOLERANCE = 1e-9


@dataclass(frozen=True, kw_only=True, eq=False)
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal

    @property
    def order(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        vectors = self.eigenvectors
        return (vectors * self.eigenvalues) @ vectors.conj().T


def returnMatrix(data) -> np.ndarray:
    # accepts a ReturnPanel or anything array-like
    values = getattr(data, "values", data)
    return np.asarray(values)


def covariance(data, diagonalLoading: float = 0.0) -> np.ndarray:
    values = returnMatrix(data).astype(float)
    if values.ndim != 2:
        raise NumericsError("covariance needs a 2-dimensional return matrix")
    numPeriods = values.shape[0]
    if numPeriods < 2:
        raise NumericsError(f"covariance needs at least 2 periods, got {numPeriods}")
    centered = values - values.mean(axis=0)
    cov = centered.T @ centered / (numPeriods - 1)
    cov = (cov + cov.T) / 2
    if diagonalLoading:
        cov = cov + diagonalLoading * np.eye(cov.shape[0])
    return cov


def checkSymmetric(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise NumericsError("matrix has non-finite entries")
    tolerance = SYMMETRY_TOLERANCE * np.maximum(1, np.abs(matrix))
    if (np.abs(matrix - matrix.T) > tolerance).any():
        raise NumericsError("matrix is not symmetric")
    return matrix


def checkHermitian(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise NumericsError("matrix has non-finite entries")
    tolerance = SYMMETRY_TOLERANCE * np.maximum(1, np.abs(matrix))
    if (np.abs(matrix - matrix.conj().T) > tolerance).any():
        raise NumericsError("matrix is not Hermitian")
    return matrix


def eigSymmetric(
    matrix: np.ndarray,
    tolerance: float = JACOBI_TOLERANCE,
    maxSweeps: int = JACOBI_MAX_SWEEPS,
) -> EigenDecomposition:
    """Full eigendecomposition of a real symmetric matrix by cyclic Jacobi
    rotations. Eigenvalues are returned in descending order; each eigenvector
    has its largest-magnitude entry positive.
    """
    a = checkSymmetric(matrix).copy()
    a = (a + a.T) / 2
    order = a.shape[0]
    vectors = np.eye(order)
    scale = np.linalg.norm(a)

    for sweep in range(maxSweeps):
        offNorm = offDiagonalNorm(a)
        if offNorm <= tolerance * scale:
            break
        for p in range(order - 1):
            for q in range(p + 1, order):
                jacobiRotate(a, vectors, p, q)
    else:
        offNorm = offDiagonalNorm(a)
        if offNorm > tolerance * scale:
            raise ConvergenceError(
                f"Jacobi eigensolver did not converge in {maxSweeps} sweeps", offNorm
            )

    eigenvalues = np.diag(a).copy()
    ordering = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[ordering]
    vectors = vectors[:, ordering]
    return EigenDecomposition(eigenvalues=eigenvalues, eigenvectors=fixSigns(vectors))


def jacobiRotate(a: np.ndarray, vectors: np.ndarray, p: int, q: int) -> None:
    apq = a[p, q]
    if apq == 0:
        return
    theta = (a[q, q] - a[p, p]) / (2 * apq)
    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1))
    c = 1 / np.sqrt(t * t + 1)
    s = t * c

    colP = a[:, p].copy()
    colQ = a[:, q].copy()
    a[:, p] = c * colP - s * colQ
    a[:, q] = s * colP + c * colQ
    rowP = a[p, :].copy()
    rowQ = a[q, :].copy()
    a[p, :] = c * rowP - s * rowQ
    a[q, :] = s * rowP + c * rowQ
    a[p, q] = a[q, p] = 0.0

    vecP = vectors[:, p].copy()
    vecQ = vectors[:, q].copy()
    vectors[:, p] = c * vecP - s * vecQ
    vectors[:, q] = s * vecP + c * vecQ


def offDiagonalNorm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def fixSigns(vectors: np.ndarray) -> np.ndarray:
    vectors = vectors.copy()
    for column in range(vectors.shape[1]):
        index = np.argmax(np.abs(vectors[:, column]))
        if vectors[index, column] < 0:
            vectors[:, column] = -vectors[:, column]
    return vectors


def fixPhases(vectors: np.ndarray) -> np.ndarray:
    vectors = vectors.astype(complex)
    for column in range(vectors.shape[1]):
        index = np.argmax(np.abs(vectors[:, column]))
        pivot = vectors[index, column]
        if pivot != 0:
            vectors[:, column] *= np.conj(pivot) / abs(pivot)
        vectors[index, column] = abs(vectors[index, column])
    return vectors


def eigHermitian(
    matrix: np.ndarray,
    tolerance: float = JACOBI_TOLERANCE,
    maxSweeps: int = JACOBI_MAX_SWEEPS,
) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix through its 2N×2N real symmetric
    embedding [[Re, -Im], [Im, Re]]. Every eigenvalue appears twice in the
    embedding; each pair of embedded eigenvectors spans one complex eigenvector.
    """
    matrix = checkHermitian(matrix)
    order = matrix.shape[0]
    re = (matrix.real + matrix.real.T) / 2
    im = (matrix.imag - matrix.imag.T) / 2
    embedded = np.block([[re, -im], [im, re]])
    decomposition = eigSymmetric(embedded, tolerance=tolerance, maxSweeps=maxSweeps)

    values = decomposition.eigenvalues
    candidates = (
        decomposition.eigenvectors[:order] + 1j * decomposition.eigenvectors[order:]
    )
    # relative to the spectrum; the floor only matters for the zero matrix
    largest = float(np.abs(values).max(initial=0.0))
    clusterTolerance = max(HERMITIAN_CLUSTER_TOLERANCE * largest, np.finfo(float).tiny)

    eigenvalues = []
    eigenvectors = []
    start = 0
    while start < len(values):
        stop = start + 1
        while (
            stop < len(values) and values[stop - 1] - values[stop] <= clusterTolerance
        ):
            stop += 1
        multiplicity = (stop - start) // 2
        if multiplicity:
            basis, _, _ = np.linalg.svd(candidates[:, start:stop], full_matrices=False)
            eigenvectors.append(basis[:, :multiplicity])
            eigenvalues.extend([values[start:stop].mean()] * multiplicity)
        start = stop

    if len(eigenvalues) != order:
        raise NumericsError(
            f"Hermitian embedding produced {len(eigenvalues)} eigenpairs, "
            f"expected {order}"
        )

    return EigenDecomposition(
        eigenvalues=np.array(eigenvalues),
        eigenvectors=fixPhases(np.hstack(eigenvectors)),
    )


def eigTridiagonal(
    diagonal: np.ndarray, offDiagonal: np.ndarray, count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Lowest `count` eigenpairs (ascending) of a symmetric tridiagonal matrix."""
    diagonal = np.asarray(diagonal, dtype=float)
    offDiagonal = np.asarray(offDiagonal, dtype=float)
    if not (1 <= count <= len(diagonal)):
        raise NumericsError(
            f"cannot select {count} eigenpairs of an order-{len(diagonal)} matrix"
        )
    if not (np.isfinite(diagonal).all() and np.isfinite(offDiagonal).all()):
        raise NumericsError("tridiagonal matrix has non-finite entries")
    values, vectors = linalg.eigh_tridiagonal(
        diagonal, offDiagonal, select="i", select_range=(0, count - 1)
    )
    return values, vectors


def analyticSignal(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Discrete analytic signal: the real part is `x` itself, the imaginary part
    its Hilbert transform, computed in the frequency domain at the native length.
    """
    x = np.asarray(x, dtype=float)
    length = x.shape[axis] if x.ndim else 0
    if length < MIN_ANALYTIC_SIGNAL_LENGTH:
        raise NumericsError(
            f"analytic signal needs at least {MIN_ANALYTIC_SIGNAL_LENGTH} samples, "
            f"got {length}"
        )
    transformed = signal.hilbert(x, axis=axis)
    return x + 1j * transformed.imag


def gaussianKernelMatrix(
    coordinates: np.ndarray,
    amplitude: Callable[[np.ndarray], np.ndarray] | np.ndarray,
    sigma: float,
) -> np.ndarray:
    """Covariance of a Gaussian field with kernel
    sqrt(A(x)A(x'))·exp(-(x - x')²/(2σ²)), sampled at `coordinates`.
    """
    coordinates = np.asarray(coordinates, dtype=float)
    amplitudes = (
        np.asarray(amplitude(coordinates), dtype=float)
        if callable(amplitude)
        else np.asarray(amplitude, dtype=float)
    )
    if (amplitudes < 0).any():
        raise NumericsError("kernel amplitudes must be nonnegative")
    if sigma <= 0:
        raise NumericsError(f"kernel width must be positive, got {sigma}")
    root = np.sqrt(amplitudes)
    distances = coordinates[:, None] - coordinates[None, :]
    kernel = np.outer(root, root) * np.exp(-(distances**2) / (2 * sigma**2))
    return (kernel + kernel.T) / 2
