"""Symmetric block-sparse matrices stored as their lower block triangle."""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Tuple, Union

import numpy as np
import scipy.sparse as sp

from warpgraph.engine.errors import DimensionMismatch

DEFAULT_BLOCK_DIM = 6


@dataclass(frozen=True, eq=False)
class BlockSparseMatrix:
    """Lower-triangle blocks (row >= col), sorted by (row, col).

    Every diagonal block is present and stored exactly symmetric; the upper
    triangle is implied by symmetry.
    """

    nblocks: int
    block_dim: int
    rows: np.ndarray
    cols: np.ndarray
    blocks: np.ndarray

    def __post_init__(self):
        bd = self.block_dim
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        blocks = np.asarray(self.blocks, dtype=np.float64)
        if blocks.shape != (len(rows), bd, bd) or len(cols) != len(rows):
            raise DimensionMismatch(
                f"{len(rows)} rows, {len(cols)} cols, blocks {blocks.shape} "
                f"for block size {bd}"
            )
        if len(rows) and (
            rows.min() < 0 or rows.max() >= self.nblocks or np.any(cols < 0)
        ):
            raise DimensionMismatch(f"block index outside {self.nblocks} block rows")
        if np.any(cols > rows):
            raise DimensionMismatch("blocks must lie in the lower triangle")

        order = np.lexsort((cols, rows))
        rows, cols, blocks = rows[order], cols[order], blocks[order]
        keys = rows * self.nblocks + cols
        if len(keys) > 1 and np.any(keys[1:] == keys[:-1]):
            raise DimensionMismatch("duplicate block coordinates")

        missing = np.setdiff1d(np.arange(self.nblocks), rows[rows == cols])
        if len(missing):
            rows = np.concatenate([rows, missing])
            cols = np.concatenate([cols, missing])
            blocks = np.concatenate([blocks, np.zeros((len(missing), bd, bd))])
            order = np.lexsort((cols, rows))
            rows, cols, blocks = rows[order], cols[order], blocks[order]

        diag = rows == cols
        lower = np.tril(blocks[diag])
        blocks[diag] = lower + np.swapaxes(np.tril(lower, -1), -1, -2)

        for name, value in (("rows", rows), ("cols", cols), ("blocks", blocks)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.nblocks * self.block_dim

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    @property
    def nnz_blocks(self) -> int:
        return len(self.rows)

    @property
    def structure(self) -> List[np.ndarray]:
        """Sorted column indices of every block row of the full symmetric matrix."""
        off = self.rows != self.cols
        all_rows = np.concatenate([self.rows, self.cols[off]])
        all_cols = np.concatenate([self.cols, self.rows[off]])
        order = np.lexsort((all_cols, all_rows))
        all_rows, all_cols = all_rows[order], all_cols[order]
        bounds = np.searchsorted(all_rows, np.arange(self.nblocks + 1))
        return [all_cols[bounds[k] : bounds[k + 1]] for k in range(self.nblocks)]

    @classmethod
    def from_scipy(cls, mat, block_dim: int = DEFAULT_BLOCK_DIM) -> "BlockSparseMatrix":
        """Takes the lower triangle of a square sparse (or dense) matrix."""
        mat = sp.csr_matrix(mat, dtype=np.float64)
        n = mat.shape[0]
        if mat.shape[1] != n or n % block_dim:
            raise DimensionMismatch(
                f"{mat.shape} is not square with a multiple of {block_dim} rows"
            )
        lower = sp.tril(mat).tobsr(blocksize=(block_dim, block_dim))
        lower.sort_indices()
        nblocks = n // block_dim
        rows = np.repeat(np.arange(nblocks), np.diff(lower.indptr))
        return cls(nblocks, block_dim, rows, lower.indices.copy(), lower.data.copy())

    @classmethod
    def from_dense(cls, A: np.ndarray, block_dim: int = DEFAULT_BLOCK_DIM):
        return cls.from_scipy(sp.csr_matrix(np.asarray(A, dtype=np.float64)), block_dim)

    @classmethod
    def identity(cls, nblocks: int, block_dim: int = DEFAULT_BLOCK_DIM):
        idx = np.arange(nblocks)
        return cls(nblocks, block_dim, idx, idx, np.tile(np.eye(block_dim), (nblocks, 1, 1)))

    def _entries(self, with_upper: bool):
        bd = self.block_dim
        local = np.arange(bd)
        rr = self.rows[:, None, None] * bd + local[None, :, None]
        cc = self.cols[:, None, None] * bd + local[None, None, :]
        rr, cc = np.broadcast_to(rr, self.blocks.shape), np.broadcast_to(cc, self.blocks.shape)
        if not with_upper:
            return rr.ravel(), cc.ravel(), self.blocks.ravel()
        off = self.rows != self.cols
        return (
            np.concatenate([rr.ravel(), cc[off].ravel()]),
            np.concatenate([cc.ravel(), rr[off].ravel()]),
            np.concatenate([self.blocks.ravel(), self.blocks[off].ravel()]),
        )

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        rr, cc, vals = self._entries(with_upper=True)
        mat = sp.coo_matrix((vals, (rr, cc)), shape=self.shape).tocsr()
        mat.sort_indices()
        return mat

    def to_scipy(self) -> sp.csr_matrix:
        """Full symmetric CSR matrix (cached; treat as read-only)."""
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def lower_pattern(self) -> Tuple[np.ndarray, np.ndarray]:
        """Scalar (row, col) coordinates of the stored lower triangle, row >= col."""
        rr, cc, _ = self._entries(with_upper=False)
        keep = rr >= cc
        return rr[keep], cc[keep]

    def diagonal_blocks(self) -> np.ndarray:
        return np.array(self.blocks[self.rows == self.cols])

    def diagonal(self) -> np.ndarray:
        return np.einsum("kii->ki", self.diagonal_blocks()).ravel()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def __matmul__(self, x):
        return self.matvec(x)

    def to_json(self) -> dict:
        return {
            "nblocks": self.nblocks,
            "block_dim": self.block_dim,
            "nnz_blocks": self.nnz_blocks,
        }


LinearOperatorLike = Union[BlockSparseMatrix, np.ndarray, sp.spmatrix]


def as_block_matrix(
    A: LinearOperatorLike, block_dim: int = DEFAULT_BLOCK_DIM
) -> BlockSparseMatrix:
    if isinstance(A, BlockSparseMatrix):
        return A
    if sp.issparse(A):
        return BlockSparseMatrix.from_scipy(A, block_dim)
    return BlockSparseMatrix.from_dense(A, block_dim)


def as_dense(A: LinearOperatorLike) -> np.ndarray:
    if isinstance(A, BlockSparseMatrix):
        return A.to_dense()
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=np.float64)


def operator_of(A: LinearOperatorLike) -> Tuple[Callable[[np.ndarray], np.ndarray], int]:
    """Matrix-vector product and dimension of any supported matrix form."""
    if isinstance(A, BlockSparseMatrix):
        return A.matvec, A.n
    if sp.issparse(A):
        mat = A.tocsr()
        if mat.shape[0] != mat.shape[1]:
            raise DimensionMismatch(f"matrix is not square: {mat.shape}")
        return (lambda x: mat @ x), mat.shape[0]
    dense = np.asarray(A, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise DimensionMismatch(f"matrix is not square: {dense.shape}")
    return (lambda x: dense @ x), dense.shape[0]
