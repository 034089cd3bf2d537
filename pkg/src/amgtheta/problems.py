"""Benchmark linear systems: three model PDEs on the unit-square family.

All three problems are 5-point finite-difference discretizations on a
uniform grid of ``n x n`` cells whose interior nodes carry the
``(n - 1)^2`` unknowns.  Each system is scaled through by ``h^2`` (times
-1 where needed) so the constant-coefficient stencil reads
``(4, -1, -1, -1, -1)``.

- ``ConstPoisson``: ``-a * lap(u) = f`` on ``(0, 1)^2`` with homogeneous
  Dirichlet boundary and the manufactured solution
  ``u = sin(pi x) sin(pi y)``.
- ``BlockDiffusion``: ``-div(kappa grad u) = 1`` on ``(0, 1)^2`` with zero
  boundary; ``kappa = diag(10^(M r0), 10^(M r1))`` is constant on each of
  ``T x T`` equal blocks, with ``(r0, r1)`` drawn per block from a seeded
  PCG64 generator in row-major block order.  Edge coefficients take the
  harmonic mean of the two cells sharing the edge.
- ``Helmholtz``: ``lap(u) + k^2 u = f`` on ``(-1, 1)^2`` with
  ``u = sin(pi x) cos(pi y)``, ``f = (k^2 - 2 pi^2) u`` (the forcing that
  makes that ``u`` exact), boundary values ``u(+-1, y) = 0`` and
  ``u(x, +-1) = -sin(pi x)`` folded into ``b``.
  The matrix is indefinite once ``k^2`` passes the smallest discrete
  Laplacian eigenvalue.

Assembly is deterministic: equal ``ProblemSpec`` values produce
byte-identical instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from amgtheta.sparse import DenseVector, SparseMatrix, csr_from_triplets

__all__ = [
    "KINDS",
    "ProblemInstance",
    "ProblemSpec",
    "assemble",
    "assemble_block_diffusion",
    "assemble_const_poisson",
    "assemble_helmholtz",
    "spec_from_text",
    "spec_to_text",
]

KINDS = ("ConstPoisson", "BlockDiffusion", "Helmholtz")


@dataclass(frozen=True)
class ProblemSpec:
    """Which system to assemble, and with what parameters.

    Parameters irrelevant to ``kind`` keep their defaults and are ignored
    by the assemblers and the text serialization.

    Attributes
    ----------
    kind : str
        One of ``ConstPoisson``, ``BlockDiffusion``, ``Helmholtz``.
    n : int
        Cells per axis; the grid has ``(n - 1)^2`` interior unknowns.
    coeff_a : float
        Diffusion constant of ``ConstPoisson``, 1 by default.
    wave_k : float
        Helmholtz wavenumber, ``2 pi`` by default.
    blocks : int
        Block partition count ``T`` per axis (``BlockDiffusion``).
    magnitude : float
        Multiscale exponent ``M`` (``BlockDiffusion``).
    seed : int
        RNG seed for the per-block coefficient draws.
    """

    kind: str
    n: int
    coeff_a: float = 1.0
    wave_k: float = 2.0 * math.pi
    blocks: int = 1
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        if self.blocks < 1:
            raise ValueError(f"blocks must be at least 1, got {self.blocks}")
        if self.magnitude < 0:
            raise ValueError(f"magnitude must be nonnegative, got {self.magnitude}")
        if self.wave_k <= 0:
            raise ValueError(f"wave_k must be positive, got {self.wave_k}")


@dataclass(frozen=True)
class ProblemInstance:
    """An assembled system ``A u = b`` plus optional exact nodal samples."""

    a: SparseMatrix
    b: DenseVector
    exact: DenseVector | None
    spec: ProblemSpec


_SPEC_FIELDS = {
    "ConstPoisson": ("kind", "n", "coeff_a"),
    "BlockDiffusion": ("kind", "n", "blocks", "magnitude", "seed"),
    "Helmholtz": ("kind", "n", "wave_k"),
}
_INT_FIELDS = ("n", "blocks", "seed")


def spec_to_text(spec: ProblemSpec) -> str:
    """Serialize to the flat ``key = value`` text format, one line per field."""
    lines = []
    for name in _SPEC_FIELDS[spec.kind]:
        value = getattr(spec, name)
        text = value if isinstance(value, str) else repr(value)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> ProblemSpec:
    """Parse the flat ``key = value`` format back into a ``ProblemSpec``."""
    pairs = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed spec line {raw!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    if "kind" not in pairs:
        raise ValueError("problem spec is missing 'kind'")
    kind = pairs.pop("kind")
    if kind not in KINDS:
        raise ValueError(f"unknown problem kind {kind!r}")
    allowed = set(_SPEC_FIELDS[kind]) - {"kind"}
    kwargs = {}
    for key, value in pairs.items():
        if key not in allowed:
            raise ValueError(f"unexpected key {key!r} for kind {kind}")
        kwargs[key] = int(value) if key in _INT_FIELDS else float(value)
    if "n" not in kwargs:
        raise ValueError("problem spec is missing 'n'")
    return ProblemSpec(kind=kind, **kwargs)


def _interior_nodes(n: int, lo: float, hi: float):
    """1-D interior node coordinates and the mesh width of an n-cell grid."""
    h = (hi - lo) / n
    coords = lo + h * np.arange(1, n, dtype=np.float64)
    return coords, h


def _five_point_edges(m: int):
    """Index pairs of horizontally and vertically adjacent interior nodes.

    Nodes are numbered ``j * m + i`` for x-index ``i`` and y-index ``j``.
    """
    i = np.arange(m, dtype=np.int64)
    j = np.arange(m, dtype=np.int64)
    # Horizontal edges: (i, j) -- (i + 1, j).
    hi, hj = np.meshgrid(i[:-1], j, indexing="ij")
    h_from = hj.ravel() * m + hi.ravel()
    h_to = h_from + 1
    # Vertical edges: (i, j) -- (i, j + 1).
    vi, vj = np.meshgrid(i, j[:-1], indexing="ij")
    v_from = vj.ravel() * m + vi.ravel()
    v_to = v_from + m
    return (h_from, h_to), (v_from, v_to)


def assemble_const_poisson(spec: ProblemSpec) -> ProblemInstance:
    """Constant-coefficient Poisson system with a manufactured solution."""
    if spec.kind != "ConstPoisson":
        raise ValueError(f"expected ConstPoisson spec, got {spec.kind}")
    n, a = spec.n, spec.coeff_a
    m = n - 1
    coords, h = _interior_nodes(n, 0.0, 1.0)
    x, y = np.meshgrid(coords, coords, indexing="ij")
    u = np.sin(np.pi * x) * np.sin(np.pi * y)
    # -a lap(u) = f with u = sin(pi x) sin(pi y) gives f = 2 a pi^2 u.
    f = 2.0 * a * np.pi**2 * u
    exact = u.transpose().ravel()
    b = h * h * f.transpose().ravel()
    (h_from, h_to), (v_from, v_to) = _five_point_edges(m)
    diag_idx = np.arange(m * m, dtype=np.int64)
    rows = np.concatenate([diag_idx, h_from, h_to, v_from, v_to])
    cols = np.concatenate([diag_idx, h_to, h_from, v_to, v_from])
    vals = np.concatenate(
        [
            np.full(m * m, 4.0 * a),
            np.full(2 * h_from.shape[0] + 2 * v_from.shape[0], -a),
        ]
    )
    matrix = csr_from_triplets(m * m, m * m, rows, cols, vals)
    return ProblemInstance(matrix, b, exact, spec)


def assemble_block_diffusion(spec: ProblemSpec) -> ProblemInstance:
    """Blockwise-random diffusion system with harmonic-mean edge weights.

    The coefficient tensor is drawn once per block: a single PCG64 stream
    seeded with ``spec.seed`` yields a ``(T, T, 2)`` array of uniforms in
    row-major block order, giving ``kappa = diag(10^(M r0), 10^(M r1))``.
    With ``magnitude == 0`` every coefficient is 1 and the matrix equals
    the ``ConstPoisson`` matrix entry for entry.

    Raises
    ------
    ValueError
        When ``blocks > n`` (blocks finer than the grid).
    """
    if spec.kind != "BlockDiffusion":
        raise ValueError(f"expected BlockDiffusion spec, got {spec.kind}")
    n, t, mag = spec.n, spec.blocks, spec.magnitude
    if t > n:
        raise ValueError(f"blocks={t} exceeds grid cells per axis n={n}")
    m = n - 1
    _, h = _interior_nodes(n, 0.0, 1.0)
    rng = np.random.default_rng(spec.seed)
    draws = rng.random((t, t, 2))
    kappa = 10.0 ** (mag * draws)
    # Cell (cx, cy) covers [cx h, (cx+1) h] x [cy h, (cy+1) h]; map cell
    # centers onto the T x T block grid.
    centers = (np.arange(n, dtype=np.float64) + 0.5) * h
    block_of = np.minimum((centers * t).astype(np.int64), t - 1)
    cell_kx = kappa[block_of[:, None], block_of[None, :], 0]
    cell_ky = kappa[block_of[:, None], block_of[None, :], 1]

    def harmonic(left, right):
        return 2.0 * left * right / (left + right)

    # Horizontal edge (i, j) -- (i+1, j) at y = (j+1) h sits between cells
    # (i+1, j) and (i+1, j+1); flux crosses it in x.
    i = np.arange(m, dtype=np.int64)
    hx = harmonic(cell_kx[i[:-1, None] + 1, i[None, :]],
                  cell_kx[i[:-1, None] + 1, i[None, :] + 1])
    # Vertical edge (i, j) -- (i, j+1) at x = (i+1) h sits between cells
    # (i, j+1) and (i+1, j+1); flux crosses it in y.
    vy = harmonic(cell_ky[i[:, None], i[None, :-1] + 1],
                  cell_ky[i[:, None] + 1, i[None, :-1] + 1])
    # Boundary edges connect interior nodes to the zero Dirichlet ring and
    # contribute to the diagonal only.
    west = harmonic(cell_kx[0, i], cell_kx[0, i + 1])
    east = harmonic(cell_kx[m, i], cell_kx[m, i + 1])
    south = harmonic(cell_ky[i, 0], cell_ky[i + 1, 0])
    north = harmonic(cell_ky[i, m], cell_ky[i + 1, m])

    (h_from, h_to), (v_from, v_to) = _five_point_edges(m)
    h_w = hx.ravel()
    v_w = vy.ravel()
    diag = np.zeros(m * m, dtype=np.float64)
    np.add.at(diag, h_from, h_w)
    np.add.at(diag, h_to, h_w)
    np.add.at(diag, v_from, v_w)
    np.add.at(diag, v_to, v_w)
    idx_j = np.arange(m, dtype=np.int64)
    diag[idx_j * m + 0] += west
    diag[idx_j * m + (m - 1)] += east
    diag[0 * m + idx_j] += south
    diag[(m - 1) * m + idx_j] += north

    diag_idx = np.arange(m * m, dtype=np.int64)
    rows = np.concatenate([diag_idx, h_from, h_to, v_from, v_to])
    cols = np.concatenate([diag_idx, h_to, h_from, v_to, v_from])
    vals = np.concatenate([diag, -h_w, -h_w, -v_w, -v_w])
    matrix = csr_from_triplets(m * m, m * m, rows, cols, vals)
    b = np.full(m * m, h * h, dtype=np.float64)
    return ProblemInstance(matrix, b, None, spec)


def assemble_helmholtz(spec: ProblemSpec) -> ProblemInstance:
    """Indefinite Helmholtz system on ``(-1, 1)^2``.

    The continuous equation ``lap(u) + k^2 u = f`` is multiplied through
    by ``-h^2``, so the diagonal reads ``4 - k^2 h^2`` and the boundary
    data enters ``b`` with a plus sign.
    """
    if spec.kind != "Helmholtz":
        raise ValueError(f"expected Helmholtz spec, got {spec.kind}")
    n, k = spec.n, spec.wave_k
    m = n - 1
    coords, h = _interior_nodes(n, -1.0, 1.0)
    x, y = np.meshgrid(coords, coords, indexing="ij")
    u = np.sin(np.pi * x) * np.cos(np.pi * y)
    # lap(u) = -2 pi^2 u, so u is exact for f = (k^2 - 2 pi^2) u.
    f = (k * k - 2.0 * np.pi**2) * u
    exact = u.transpose().ravel()
    b_grid = -(h * h) * f
    # Dirichlet lift: u(x, -1) = u(x, 1) = -sin(pi x); u(+-1, y) = 0.
    g = -np.sin(np.pi * coords)
    b_grid[:, 0] += g
    b_grid[:, m - 1] += g
    b = b_grid.transpose().ravel()
    (h_from, h_to), (v_from, v_to) = _five_point_edges(m)
    diag_idx = np.arange(m * m, dtype=np.int64)
    rows = np.concatenate([diag_idx, h_from, h_to, v_from, v_to])
    cols = np.concatenate([diag_idx, h_to, h_from, v_to, v_from])
    vals = np.concatenate(
        [
            np.full(m * m, 4.0 - k * k * h * h),
            np.full(2 * h_from.shape[0] + 2 * v_from.shape[0], -1.0),
        ]
    )
    matrix = csr_from_triplets(m * m, m * m, rows, cols, vals)
    return ProblemInstance(matrix, b, exact, spec)


_ASSEMBLERS = {
    "ConstPoisson": assemble_const_poisson,
    "BlockDiffusion": assemble_block_diffusion,
    "Helmholtz": assemble_helmholtz,
}


def assemble(spec: ProblemSpec) -> ProblemInstance:
    """Dispatch to the assembler for ``spec.kind``."""
    return _ASSEMBLERS[spec.kind](spec)
