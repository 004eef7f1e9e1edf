"""Masked raster domains: construction, file loading, and geometric queries.

A domain is a rectangular grid of nodes with uniform spacing ``h``. Nodes
flagged true in the mask are interior; everything else (including all of
space beyond the raster) is exterior, where functions are pinned to zero.
The implicit zero boundary therefore runs one grid step outside the
outermost interior nodes.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyDomainError, MaskParseError


class DomainGrid:
    """Raster domain with physical coordinates.

    Parameters
    ----------
    mask : (ny, nx) bool array
        True marks interior nodes. Row ``j``, column ``i``.
    h : float
        Grid spacing, identical in both axes.
    origin : (float, float)
        Physical coordinates of node (i=0, j=0).

    Node (i, j) sits at ``(origin[0] + i*h, origin[1] + j*h)``. Interior
    nodes are enumerated row-major (j outer, i inner) into a dense index
    0..n_int-1.
    """

    def __init__(self, mask, h, origin=(0.0, 0.0)):
        mask = np.ascontiguousarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be a 2D array")
        ny, nx = mask.shape
        if nx < 3 or ny < 3:
            raise ValueError(f"grid must be at least 3x3, got {nx}x{ny}")
        if not h > 0:
            raise ValueError(f"grid spacing must be positive, got {h}")
        if not mask.any():
            raise EmptyDomainError("mask has no interior nodes")

        self.nx = nx
        self.ny = ny
        self.h = float(h)
        self.origin = (float(origin[0]), float(origin[1]))
        self.mask = mask
        self.mask.setflags(write=False)

        index = np.full((ny, nx), -1, dtype=np.int64)
        jj, ii = np.nonzero(mask)  # nonzero on C-ordered array is row-major
        index[jj, ii] = np.arange(jj.size)
        index.setflags(write=False)
        self.interior_index = index
        self._interior_ij = np.column_stack([ii, jj])
        self._interior_ij.setflags(write=False)

    @property
    def n_int(self):
        """Number of interior nodes."""
        return self._interior_ij.shape[0]

    @classmethod
    def full_rectangle(cls, nx, ny, width):
        """All-interior grid representing the open rectangle (0, width) x (0, height).

        Uses the classic Dirichlet discretization: nx interior columns at
        x = h, 2h, ..., nx*h with h = width/(nx+1), so the implicit zero
        ring falls exactly on the rectangle boundary. Height follows from
        the square spacing: height = (ny+1)*h.
        """
        h = width / (nx + 1)
        mask = np.ones((ny, nx), dtype=bool)
        return cls(mask, h, origin=(h, h))

    def interior_nodes(self):
        """Interior (i, j) pairs in dense-index order, shape (n_int, 2)."""
        return self._interior_ij

    def interior_points(self):
        """Physical coordinates of interior nodes, shape (n_int, 2)."""
        x0, y0 = self.origin
        return np.column_stack(
            [x0 + self._interior_ij[:, 0] * self.h, y0 + self._interior_ij[:, 1] * self.h]
        )

    def node_point(self, i, j):
        """Physical coordinates of node (i, j)."""
        return (self.origin[0] + i * self.h, self.origin[1] + j * self.h)

    def contains(self, points):
        """Interior test by bilinear interpolation of the mask indicator.

        A point is inside iff it lies within the raster extent and the
        interpolated indicator exceeds 0.5.

        Parameters
        ----------
        points : (..., 2) array or a single (x, y) pair

        Returns
        -------
        bool array matching the leading shape of ``points`` (or a scalar
        bool for a single pair).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = _bilinear(self, self.mask.astype(float), pts)
        inside = vals > 0.5
        if np.asarray(points).ndim == 1:
            return bool(inside[0])
        return inside

    def __eq__(self, other):
        if not isinstance(other, DomainGrid):
            return NotImplemented
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and self.h == other.h
            and self.origin == other.origin
            and np.array_equal(self.mask, other.mask)
        )


def _cell_coords(grid, pts, snap=1e-9):
    """Map physical points to cell indices and corner weights.

    Returns (i0, j0, tx, ty, valid): lower-left corner of the containing
    cell, fractional offsets in [0, 1], and an in-extent flag. Coordinates
    within ``snap`` (relative to h) of a node line are snapped onto it so
    node queries are exact despite float division noise.
    """
    x0, y0 = grid.origin
    u = (pts[:, 0] - x0) / grid.h
    w = (pts[:, 1] - y0) / grid.h
    u = np.where(np.abs(u - np.rint(u)) <= snap, np.rint(u), u)
    w = np.where(np.abs(w - np.rint(w)) <= snap, np.rint(w), w)
    valid = (u >= 0) & (u <= grid.nx - 1) & (w >= 0) & (w <= grid.ny - 1)
    uc = np.clip(u, 0.0, grid.nx - 1.0)
    wc = np.clip(w, 0.0, grid.ny - 1.0)
    i0 = np.minimum(uc.astype(np.int64), grid.nx - 2)
    j0 = np.minimum(wc.astype(np.int64), grid.ny - 2)
    tx = uc - i0
    ty = wc - j0
    return i0, j0, tx, ty, valid


def _bilinear(grid, field, pts):
    """Bilinear interpolation of a (ny, nx) nodal field; 0 outside the extent."""
    i0, j0, tx, ty, valid = _cell_coords(grid, pts)
    v00 = field[j0, i0]
    v10 = field[j0, i0 + 1]
    v01 = field[j0 + 1, i0]
    v11 = field[j0 + 1, i0 + 1]
    out = (
        (1 - tx) * (1 - ty) * v00
        + tx * (1 - ty) * v10
        + (1 - tx) * ty * v01
        + tx * ty * v11
    )
    return np.where(valid, out, 0.0)


# ---------------------------------------------------------------------------
# Mask file formats
# ---------------------------------------------------------------------------


def load_mask(path, width):
    """Load a raster mask file into a :class:`DomainGrid`.

    Supported formats are PGM (P2 ASCII or P5 binary; pixel > maxval/2 is
    interior) and a plain ASCII grid (``nx ny`` header line, then ny lines
    of nx characters from {0,1}; '1' is interior). File row 0 (top of the
    image) maps to the top grid row, i.e. j = ny-1, so images keep their
    visual orientation with y pointing up.

    Parameters
    ----------
    path : str or path-like
        Mask file.
    width : float
        Physical width of the raster; h = width / nx and origin = (0, 0).
    """
    if not width > 0:
        raise ValueError(f"width must be positive, got {width}")
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] in (b"P2", b"P5"):
        mask = _parse_pgm(data)
    else:
        mask = _parse_ascii_grid(data)
    mask = mask[::-1]  # file top row -> highest j
    grid = DomainGrid(mask, h=width / mask.shape[1], origin=(0.0, 0.0))
    return grid


class _Tokens:
    """Whitespace/comment-aware tokenizer over PGM header bytes."""

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def _skip_separators(self):
        while self.pos < len(self.data):
            c = self.data[self.pos]
            if c in b" \t\r\n":
                self.pos += 1
            elif c == ord("#"):
                while self.pos < len(self.data) and self.data[self.pos] not in b"\r\n":
                    self.pos += 1
            else:
                return

    def next_token(self, what):
        self._skip_separators()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos] not in b" \t\r\n#":
            self.pos += 1
        if self.pos == start:
            raise MaskParseError(f"unexpected end of file while reading {what}", start)
        return self.data[start:self.pos], start

    def next_int(self, what):
        tok, start = self.next_token(what)
        try:
            return int(tok)
        except ValueError:
            raise MaskParseError(f"expected integer {what}, got {tok!r}", start) from None


def _parse_pgm(data):
    toks = _Tokens(data)
    magic, _ = toks.next_token("magic")
    nx = toks.next_int("width")
    ny = toks.next_int("height")
    maxval = toks.next_int("maxval")
    if nx <= 0 or ny <= 0:
        raise MaskParseError(f"non-positive dimensions {nx}x{ny}", 2)
    if not 0 < maxval < 65536:
        raise MaskParseError(f"maxval {maxval} out of range", toks.pos)

    if magic == b"P2":
        pixels = np.empty(nx * ny, dtype=np.int64)
        for k in range(nx * ny):
            pixels[k] = toks.next_int("pixel")
    else:  # P5: single separator byte, then raw pixel data
        pos = toks.pos
        if pos >= len(data) or data[pos] not in b" \t\r\n":
            raise MaskParseError("missing separator after maxval", pos)
        pos += 1
        itemsize = 1 if maxval < 256 else 2
        need = nx * ny * itemsize
        if len(data) - pos < need:
            raise MaskParseError(
                f"truncated pixel data: need {need} bytes, have {len(data) - pos}",
                len(data),
            )
        dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
        pixels = np.frombuffer(data, dtype=dtype, count=nx * ny, offset=pos).astype(np.int64)

    if (pixels < 0).any() or (pixels > maxval).any():
        bad = int(np.nonzero((pixels < 0) | (pixels > maxval))[0][0])
        raise MaskParseError(f"pixel value out of range at pixel {bad}", None)
    mask = (pixels > maxval / 2).reshape(ny, nx)
    if not mask.any():
        raise EmptyDomainError("mask has no interior pixels")
    return mask


def _parse_ascii_grid(data):
    toks = _Tokens(data)
    nx = toks.next_int("width")
    ny = toks.next_int("height")
    if nx <= 0 or ny <= 0:
        raise MaskParseError(f"non-positive dimensions {nx}x{ny}", 0)
    mask = np.empty((ny, nx), dtype=bool)
    pos = toks.pos
    for j in range(ny):
        while pos < len(data) and data[pos] in b"\r\n":
            pos += 1
        row = data[pos:pos + nx]
        if len(row) < nx:
            raise MaskParseError(f"truncated row {j}: expected {nx} characters", pos)
        for i, c in enumerate(row):
            if c == ord("1"):
                mask[j, i] = True
            elif c == ord("0"):
                mask[j, i] = False
            else:
                raise MaskParseError(f"invalid character {chr(c)!r} in grid row {j}", pos + i)
        pos += nx
    if not mask.any():
        raise EmptyDomainError("mask has no interior pixels")
    return mask


def write_pgm(path, mask, comment=None):
    """Write a boolean mask as a binary P5 PGM (255 = interior).

    The array's row 0 is stored as the image's bottom row, matching the
    orientation convention of :func:`load_mask`.
    """
    mask = np.asarray(mask, dtype=bool)
    ny, nx = mask.shape
    header = f"P5\n{nx} {ny}\n255\n"
    if comment is not None:
        header = f"P5\n# {comment}\n{nx} {ny}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write((mask[::-1].astype(np.uint8) * 255).tobytes())


# ---------------------------------------------------------------------------
# Shipped shapes and boundary sampling
# ---------------------------------------------------------------------------


def star_mask(n=162, arms=5, r_base=0.24, r_amp=0.05):
    """Star-shaped mask r(theta) = r_base + r_amp*cos(arms*theta) on an n x n raster.

    The star is centered in the unit square; node (i, j) is taken at
    ((i+0.5)/n, (j+0.5)/n) so the shape is symmetric on the raster.
    """
    c = (np.arange(n) + 0.5) / n
    xx, yy = np.meshgrid(c, c)
    dx = xx - 0.5
    dy = yy - 0.5
    r = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    return r <= r_base + r_amp * np.cos(arms * theta)


def star_mask_path():
    """Path to the shipped 162x162 star mask PGM."""
    from importlib.resources import files

    return str(files("harmonicgp") / "masks" / "star.pgm")


def boundary_points(grid, count=73):
    """Sample points uniformly by arc length along the mask's 0.5-contour.

    Uses marching squares on the mask indicator; for disconnected domains
    the points are split between contours in proportion to their length.

    Returns
    -------
    (count, 2) array of physical coordinates.
    """
    from skimage import measure

    contours = measure.find_contours(grid.mask.astype(float), 0.5)
    if not contours:
        raise EmptyDomainError("mask has no boundary contour")

    polylines = []
    lengths = []
    for c in contours:
        # find_contours yields (row, col) = (j, i)
        xy = np.column_stack(
            [grid.origin[0] + c[:, 1] * grid.h, grid.origin[1] + c[:, 0] * grid.h]
        )
        seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        polylines.append((xy, seg))
        lengths.append(seg.sum())
    lengths = np.asarray(lengths)

    # largest-remainder allocation of points across contours
    share = count * lengths / lengths.sum()
    alloc = np.floor(share).astype(int)
    rest = count - alloc.sum()
    if rest > 0:
        order = np.argsort(-(share - alloc))
        alloc[order[:rest]] += 1

    out = []
    for (xy, seg), k in zip(polylines, alloc):
        if k == 0:
            continue
        s = np.concatenate([[0.0], np.cumsum(seg)])
        targets = np.arange(k) * s[-1] / k
        out.append(
            np.column_stack(
                [np.interp(targets, s, xy[:, 0]), np.interp(targets, s, xy[:, 1])]
            )
        )
    return np.vstack(out)
