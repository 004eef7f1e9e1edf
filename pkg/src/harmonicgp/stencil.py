"""Sparse 9-point finite-difference approximation of -laplacian on a masked grid.

Coefficients (times 1/h^2): center 10/3, edge neighbors -2/3, diagonal
neighbors -1/6. These sum to zero, so the operator annihilates constants,
and the leading truncation error is (h^2/12) times the biharmonic operator,
which is what the eigenvalue correction in :mod:`harmonicgp.eigenbasis`
removes. Exterior neighbors contribute nothing (the function is zero there),
which bakes the Dirichlet condition into the matrix.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError

# integer stencil, unit 1/(6 h^2): (dj, di, coefficient)
_OFFSETS = (
    (-1, -1, -1.0), (-1, 0, -4.0), (-1, 1, -1.0),
    (0, -1, -4.0), (0, 0, 20.0), (0, 1, -4.0),
    (1, -1, -1.0), (1, 0, -4.0), (1, 1, -1.0),
)


def _snap48(x):
    """Round x to 48 mantissa bits.

    All stencil values are small-integer multiples of one unit k = 1/(6h^2).
    With k limited to 48 bits, every value and every partial sum occurring
    in a row-sum cancellation is exactly representable, so fully-interior
    row sums are exactly zero in float64 regardless of summation order.
    """
    m, e = np.frexp(x)
    return np.ldexp(np.round(m * 2.0**48) / 2.0**48, e)


class StencilMatrix:
    """Symmetric CSR matrix over interior nodes.

    Exposes the compressed-row arrays directly (``row_offsets``,
    ``col_indices``, ``values``) plus the backing scipy matrix as ``csr``.
    Immutable after assembly.
    """

    def __init__(self, csr):
        csr = csr.tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        csr.data.setflags(write=False)
        csr.indices.setflags(write=False)
        csr.indptr.setflags(write=False)
        self.csr = csr
        self.symmetric = True

    @property
    def n(self):
        return self.csr.shape[0]

    @property
    def nnz(self):
        return self.csr.nnz

    @property
    def row_offsets(self):
        return self.csr.indptr

    @property
    def col_indices(self):
        return self.csr.indices

    @property
    def values(self):
        return self.csr.data

    def apply(self, v):
        """Return A @ v."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"vector has length {v.shape}, matrix is {self.n}x{self.n}")
        return self.csr @ v

    def to_matrix_market(self, path):
        """Debug dump in Matrix Market coordinate format."""
        from scipy.io import mmwrite

        mmwrite(path, self.csr.tocoo())

    def toarray(self):
        return self.csr.toarray()


def assemble_stencil(grid):
    """Assemble the -laplacian stencil matrix for a :class:`DomainGrid`.

    Returns a :class:`StencilMatrix` of dimension n_int. Symmetric with
    strictly positive diagonal and at most 9 nonzeros per row.
    """
    index = grid.interior_index
    nodes = grid.interior_nodes()  # (n_int, 2) as (i, j)
    n = nodes.shape[0]
    unit = _snap48(1.0 / (6.0 * grid.h * grid.h))

    ii = nodes[:, 0]
    jj = nodes[:, 1]
    rows = []
    cols = []
    vals = []
    rng_rows = np.arange(n)
    for dj, di, coeff in _OFFSETS:
        ni = ii + di
        nj = jj + dj
        ok = (ni >= 0) & (ni < grid.nx) & (nj >= 0) & (nj < grid.ny)
        neighbor = np.full(n, -1, dtype=np.int64)
        neighbor[ok] = index[nj[ok], ni[ok]]
        keep = neighbor >= 0
        rows.append(rng_rows[keep])
        cols.append(neighbor[keep])
        vals.append(np.full(keep.sum(), coeff * unit))

    csr = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    mat = StencilMatrix(csr)
    if (mat.csr.diagonal() <= 0).any():
        raise NumericalError("stencil assembly produced a non-positive diagonal entry")
    return mat
