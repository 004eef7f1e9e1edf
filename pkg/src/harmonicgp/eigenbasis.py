"""Harmonic feature basis: eigenpairs of the stencil, corrected and normalized.

Pipeline: assemble the stencil, solve its m smallest eigenpairs (they are
the discrete counterparts of the smallest Dirichlet-Laplacian eigenvalues),
undo the O(h^2) discretization bias of the 9-point scheme, and scale the
eigenvectors so the basis is orthonormal in L2 over the domain.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .domain import DomainGrid, _cell_coords
from .errors import EigenSolveError, MaskParseError
from .stencil import StencilMatrix, assemble_stencil

_MAGIC = b"BGP1"

# dense fallback bounds: ARPACK needs m well below n and is slower than
# LAPACK for small operators
_DENSE_N = 400


def solve_eigen(matrix, m, tol=1e-8):
    """Compute the m algebraically smallest eigenpairs of the stencil.

    Uses ARPACK (implicitly restarted Lanczos) in shift-invert mode at
    shift 0, backed by a sparse LU factorization, with a fixed all-ones
    starting vector for reproducibility. Small problems go through a dense
    symmetric eigensolver instead.

    Parameters
    ----------
    matrix : StencilMatrix
    m : int
        Number of eigenpairs, 1 <= m <= n.
    tol : float
        Residual bound: each returned pair satisfies
        ||A v - lam2 v|| <= tol * lam2.

    Returns
    -------
    (lambda_sq, vectors) : eigenvalues ascending, shape (m,); unit-2-norm
    eigenvectors as columns, shape (n, m).
    """
    n = matrix.n
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")

    if n <= _DENSE_N or m > n - 2 or 2 * m + 20 >= n:
        w, v = np.linalg.eigh(matrix.toarray())
        lam = w[:m].copy()
        vec = v[:, :m].copy()
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        ncv = min(n, max(2 * m + 20, 40))
        try:
            lam, vec = spla.eigsh(matrix.csr, k=m, sigma=0.0, v0=v0, ncv=ncv, maxiter=300)
        except spla.ArpackNoConvergence as exc:
            worst = None
            if len(exc.eigenvalues):
                res = np.linalg.norm(
                    matrix.csr @ exc.eigenvectors - exc.eigenvectors * exc.eigenvalues, axis=0
                )
                worst = float((res / np.abs(exc.eigenvalues)).max())
            raise EigenSolveError(
                f"eigensolver converged only {len(exc.eigenvalues)}/{m} pairs", worst
            ) from exc

    order = np.argsort(lam)
    lam = lam[order]
    vec = vec[:, order]

    # deterministic sign: largest-magnitude entry positive
    for j in range(m):
        k = np.argmax(np.abs(vec[:, j]))
        if vec[k, j] < 0:
            vec[:, j] = -vec[:, j]
    vec /= np.linalg.norm(vec, axis=0)

    res = np.linalg.norm(matrix.csr @ vec - vec * lam, axis=0)
    ratios = res / lam
    if (ratios > tol).any():
        raise EigenSolveError(
            f"worst eigenpair residual {ratios.max():.3e} exceeds tol {tol:.3e}",
            float(ratios.max()),
        )
    return lam, vec


def correct_eigenvalues(raw, h):
    """Remove the O(h^2) bias of the 9-point scheme from raw eigenvalues.

    The stencil's eigenvalues satisfy lam2 = lbar2 - (h^2/12) lbar2^2 to
    leading order, where lbar2 is the continuum Dirichlet-Laplacian
    eigenvalue; inverting that relation gives

        lbar2 = 2 lam2 / (sqrt(1 - lam2 h^2 / 3) + 1).

    Elementwise, order preserving; lam2 = 0 maps to 0 and the correction
    vanishes as h -> 0.
    """
    raw = np.asarray(raw, dtype=float)
    if (raw < 0).any():
        raise ValueError("raw eigenvalues must be non-negative")
    radicand = 1.0 - raw * h * h / 3.0
    if (radicand <= 0).any():
        raise ValueError(
            "eigenvalue beyond the resolvable band of the 9-point scheme "
            f"(lam2 * h^2 = {float((raw * h * h).max()):.3f} >= 3)"
        )
    return 2.0 * raw / (np.sqrt(radicand) + 1.0)


@dataclass(frozen=True, eq=False)
class HarmonicBasis:
    """Corrected eigenvalues and L2-normalized eigenfunction grids.

    Attributes
    ----------
    grid : DomainGrid
    lambda_sq : (m,) corrected eigenvalues, ascending, units length^-2.
    phi : (m, n_int) eigenfunction values at interior nodes in
        interior-index order, scaled so h^2 * sum(phi_j^2) = 1.
    residual_tol : float or None
        Worst eigensolver residual ratio actually achieved (None when the
        basis was loaded from a cache, which does not store it).
    """

    grid: DomainGrid
    lambda_sq: np.ndarray
    phi: np.ndarray
    residual_tol: float | None = None

    def __post_init__(self):
        self.lambda_sq.setflags(write=False)
        self.phi.setflags(write=False)

    @property
    def m(self):
        return self.lambda_sq.shape[0]

    def frequencies(self):
        """Radial frequencies lbar_j = sqrt(lbar2_j) at which spectral densities are read."""
        return np.sqrt(self.lambda_sq)

    def node_features(self):
        """Feature matrix at all interior nodes, shape (n_int, m); exact node values."""
        return self.phi.T

    def full_grids(self):
        """Eigenfunctions scattered onto the full raster, shape (m, ny, nx), zeros outside."""
        out = np.zeros((self.m, self.grid.ny, self.grid.nx))
        jj = self.grid.interior_nodes()[:, 1]
        ii = self.grid.interior_nodes()[:, 0]
        out[:, jj, ii] = self.phi
        return out

    def truncate(self, m):
        """First m features (nested bases share leading eigenpairs)."""
        if not 1 <= m <= self.m:
            raise ValueError(f"m must be in [1, {self.m}], got {m}")
        return HarmonicBasis(self.grid, self.lambda_sq[:m].copy(), self.phi[:m].copy(),
                             self.residual_tol)


def normalize_and_build(grid, eigvecs, corrected, residual_tol=None):
    """Build a :class:`HarmonicBasis` from unit-2-norm eigenvectors.

    Scales each vector by 1/h so the discrete L2(domain) norm
    h^2 * sum(phi^2) equals 1 (in 2D), and sorts pairs by corrected
    eigenvalue ascending.
    """
    corrected = np.asarray(corrected, dtype=float)
    order = np.argsort(corrected)
    phi = (eigvecs[:, order] / grid.h).T.copy()
    return HarmonicBasis(grid, corrected[order].copy(), phi, residual_tol)


def solve_basis(grid, m, tol=1e-8):
    """Full pipeline: stencil assembly, eigensolve, correction, normalization."""
    matrix = assemble_stencil(grid)
    raw, vec = solve_eigen(matrix, m, tol)
    res = np.linalg.norm(matrix.csr @ vec - vec * raw, axis=0)
    achieved = float((res / raw).max())
    corrected = correct_eigenvalues(raw, grid.h)
    return normalize_and_build(grid, vec, corrected, residual_tol=achieved)


def evaluate_basis(basis, points):
    """Evaluate all eigenfunctions at arbitrary points by bilinear interpolation.

    Exterior nodes count as zero, and points outside the raster extent give
    zero for every feature, so rows vanish identically on and beyond the
    boundary.

    Parameters
    ----------
    basis : HarmonicBasis
    points : (n, 2) array (a single (x, y) pair is also accepted)

    Returns
    -------
    (n, m) feature matrix.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grid = basis.grid
    i0, j0, tx, ty, valid = _cell_coords(grid, pts)

    out = np.zeros((pts.shape[0], basis.m))
    weights = (
        ((1 - tx) * (1 - ty), 0, 0),
        (tx * (1 - ty), 1, 0),
        ((1 - tx) * ty, 0, 1),
        (tx * ty, 1, 1),
    )
    for w, di, dj in weights:
        idx = grid.interior_index[j0 + dj, i0 + di]
        use = valid & (idx >= 0) & (w != 0.0)
        if use.any():
            out[use] += w[use, None] * basis.phi[:, idx[use]].T
    return out


# ---------------------------------------------------------------------------
# Basis cache (versioned binary, little-endian)
#
# magic "BGP1" | u32 nx, ny, m | f64 h, x0, y0 | mask bits row-major
# | f64 lambda_sq[m] | f64 phi[m][n_int]
# ---------------------------------------------------------------------------


def save_basis(basis, path):
    """Write the basis cache file; reloading reproduces arrays bitwise."""
    grid = basis.grid
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<3I", grid.nx, grid.ny, basis.m))
    buf.write(struct.pack("<3d", grid.h, grid.origin[0], grid.origin[1]))
    buf.write(np.packbits(grid.mask.reshape(-1)).tobytes())
    buf.write(basis.lambda_sq.astype("<f8").tobytes())
    buf.write(np.ascontiguousarray(basis.phi, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_basis(path):
    """Read a basis cache file written by :func:`save_basis`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise MaskParseError(f"not a basis cache file (bad magic {data[:4]!r})", 0)
    pos = 4
    try:
        nx, ny, m = struct.unpack_from("<3I", data, pos)
        pos += 12
        h, x0, y0 = struct.unpack_from("<3d", data, pos)
        pos += 24
        nbits = nx * ny
        nbytes = (nbits + 7) // 8
        bits = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=pos)
        pos += nbytes
        mask = np.unpackbits(bits, count=nbits).astype(bool).reshape(ny, nx)
        grid = DomainGrid(mask, h, origin=(x0, y0))
        lam = np.frombuffer(data, dtype="<f8", count=m, offset=pos).copy()
        pos += 8 * m
        phi = (
            np.frombuffer(data, dtype="<f8", count=m * grid.n_int, offset=pos)
            .reshape(m, grid.n_int)
            .copy()
        )
    except (struct.error, ValueError) as exc:
        raise MaskParseError(f"truncated or corrupt basis cache: {exc}", pos) from exc
    return HarmonicBasis(grid, lam, phi, residual_tol=None)
