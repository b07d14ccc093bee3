"""Preconditioners z = M^-1 r for PCG."""

import logging
import struct
import time
from abc import ABC, abstractmethod
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from warpgraph.engine.decorators import task
from warpgraph.engine.errors import (
    DimensionMismatch,
    FactorizationFailed,
    FormatError,
    IoError,
    PivotBreakdown,
    SingularBlock,
)
from warpgraph.engine.solver.block_matrix import (
    DEFAULT_BLOCK_DIM,
    BlockSparseMatrix,
    LinearOperatorLike,
    as_block_matrix,
)

DIAGONAL_CLAMP = 1e-6
INITIAL_BOOST = 1e-3
MAX_BOOSTS = 20

NRPC_MAGIC = b"NRPC"
NRPC_HEADER = struct.Struct("<4sBI")
NRPC_COUNT = struct.Struct("<I")
NRPC_SPARSE_ENTRY = np.dtype([("row", "<u4"), ("col", "<u4"), ("val", "<f8")])
TRIL_6 = np.tril_indices(DEFAULT_BLOCK_DIM)


class PreconditionerKind(str, Enum):
    IDENTITY = "identity"
    BLOCK_JACOBI = "block_jacobi"
    INCOMPLETE_CHOLESKY = "incomplete_cholesky"
    LOADED_DENSE = "loaded_dense"
    LOADED_SPARSE = "loaded_sparse"
    LOADED_BLOCKDIAG = "loaded_blockdiag"


class FactorKind(int, Enum):
    """NRPC kind byte."""

    DENSE = 0
    SPARSE = 1
    BLOCKDIAG = 2

    @property
    def preconditioner_kind(self) -> PreconditionerKind:
        return {
            FactorKind.DENSE: PreconditionerKind.LOADED_DENSE,
            FactorKind.SPARSE: PreconditionerKind.LOADED_SPARSE,
            FactorKind.BLOCKDIAG: PreconditionerKind.LOADED_BLOCKDIAG,
        }[self]

    @classmethod
    def parse(cls, value: Union[str, int, "FactorKind"]) -> "FactorKind":
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise FormatError(f"unknown factor kind {value!r}") from None
        try:
            return cls(value)
        except ValueError:
            raise FormatError(f"unknown factor kind byte {value}") from None


class Preconditioner(ABC):
    """Linear SPD operator applied as z = M^-1 r."""

    kind: PreconditionerKind

    def __init__(self, n: int, setup_time: float = 0.0):
        self.n = n
        self.setup_time = setup_time

    @abstractmethod
    def apply(self, r: np.ndarray) -> np.ndarray:
        pass

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.apply(r)

    def to_dense(self) -> np.ndarray:
        """Materializes M^-1 column by column; for small problems only."""
        return np.column_stack([self.apply(col) for col in np.eye(self.n)])

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "n": self.n, "setup_time": self.setup_time}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n})"


class IdentityPreconditioner(Preconditioner):
    kind = PreconditionerKind.IDENTITY

    def apply(self, r: np.ndarray) -> np.ndarray:
        return np.array(r, dtype=np.float64, copy=True)


class BlockJacobiPreconditioner(Preconditioner):
    kind = PreconditionerKind.BLOCK_JACOBI

    def __init__(self, factors: np.ndarray, setup_time: float = 0.0):
        nb, bd, _ = factors.shape
        super().__init__(nb * bd, setup_time)
        self.factors = factors
        self._factors_t = np.swapaxes(factors, -1, -2)

    def apply(self, r: np.ndarray) -> np.ndarray:
        nb, bd, _ = self.factors.shape
        y = np.asarray(r, dtype=np.float64).reshape(nb, bd, 1)
        y = np.linalg.solve(self.factors, y)
        return np.linalg.solve(self._factors_t, y).reshape(-1)


class IncompleteCholeskyPreconditioner(Preconditioner):
    kind = PreconditionerKind.INCOMPLETE_CHOLESKY

    def __init__(self, factor: sp.csr_matrix, boost: float = 0.0, setup_time: float = 0.0):
        super().__init__(factor.shape[0], setup_time)
        self.factor = factor
        self.boost = boost
        self._factor_t = factor.T.tocsr()

    def apply(self, r: np.ndarray) -> np.ndarray:
        y = spsolve_triangular(self.factor, np.asarray(r, dtype=np.float64), lower=True)
        return spsolve_triangular(self._factor_t, y, lower=False)


class LoadedFactorPreconditioner(Preconditioner):
    """M^-1 = L L^T from an externally supplied lower factor, diagonal clamped at tau."""

    def __init__(
        self,
        factor_kind: FactorKind,
        operator: Union[np.ndarray, sp.csr_matrix],
        setup_time: float = 0.0,
        masked_entries: int = 0,
    ):
        n = (
            operator.shape[0] * operator.shape[1]
            if factor_kind is FactorKind.BLOCKDIAG
            else operator.shape[0]
        )
        super().__init__(n, setup_time)
        self.factor_kind = factor_kind
        self.kind = factor_kind.preconditioner_kind
        self.operator = operator
        self.masked_entries = masked_entries

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if self.factor_kind is FactorKind.BLOCKDIAG:
            nb, bd, _ = self.operator.shape
            return np.einsum("kij,kj->ki", self.operator, r.reshape(nb, bd)).reshape(-1)
        return self.operator @ r


def identity(n: int) -> IdentityPreconditioner:
    return IdentityPreconditioner(n)


def block_jacobi(A: LinearOperatorLike) -> BlockJacobiPreconditioner:
    start = time.perf_counter()
    A = as_block_matrix(A)
    diag = A.diagonal_blocks()
    try:
        factors = np.linalg.cholesky(diag)
    except np.linalg.LinAlgError:
        for node, block in enumerate(diag):
            try:
                np.linalg.cholesky(block)
            except np.linalg.LinAlgError:
                raise SingularBlock(node) from None
        raise
    return BlockJacobiPreconditioner(factors, time.perf_counter() - start)


def _ic0(A: BlockSparseMatrix, boost: float) -> sp.csr_matrix:
    """Block IC(0), row by row: L keeps exactly the lower block pattern of A."""
    lower_rows: List[Dict[int, np.ndarray]] = [dict() for _ in range(A.nblocks)]
    diag_factor: List[np.ndarray] = [None] * A.nblocks
    start = np.searchsorted(A.rows, np.arange(A.nblocks + 1))

    for i in range(A.nblocks):
        row_i = lower_rows[i]
        for idx in range(start[i], start[i + 1]):
            k = A.cols[idx]
            block = np.array(A.blocks[idx])
            if k == i:
                block += boost * np.diag(np.diag(block))
                for lik in row_i.values():
                    block -= lik @ lik.T
                try:
                    diag_factor[i] = sla.cholesky(block, lower=True)
                except (np.linalg.LinAlgError, ValueError):
                    raise PivotBreakdown(i) from None
            else:
                for j, lkj in lower_rows[k].items():
                    lij = row_i.get(j)
                    if lij is not None:
                        block -= lij @ lkj.T
                row_i[k] = sla.solve_triangular(diag_factor[k], block.T, lower=True).T

    bd = A.block_dim
    local = np.arange(bd)
    rows, cols, vals = [], [], []
    for i in range(A.nblocks):
        entries = list(lower_rows[i].items()) + [(i, diag_factor[i])]
        for k, block in entries:
            rows.append(np.repeat(i * bd + local, bd))
            cols.append(np.tile(k * bd + local, bd))
            vals.append(block.ravel())
    factor = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=A.shape,
    ).tocsr()
    factor.eliminate_zeros()
    factor.sort_indices()
    return factor


@task(name="incomplete_cholesky")
def incomplete_cholesky(
    A: LinearOperatorLike,
    initial_boost: float = INITIAL_BOOST,
    max_boosts: int = MAX_BOOSTS,
) -> IncompleteCholeskyPreconditioner:
    """IC(0) with a diagonal boost alpha * diag(A) doubled from ``initial_boost`` on pivot failure."""
    start = time.perf_counter()
    A = as_block_matrix(A)
    factor, boost = None, 0.0
    try:
        for attempt in Retrying(
            stop=stop_after_attempt(max_boosts + 1),
            retry=retry_if_exception_type(PivotBreakdown),
        ):
            with attempt:
                number = attempt.retry_state.attempt_number
                boost = 0.0 if number == 1 else initial_boost * 2 ** (number - 2)
                factor = _ic0(A, boost)
    except RetryError as e:
        raise FactorizationFailed(
            f"IC(0) failed after {max_boosts} diagonal boosts: "
            f"{e.last_attempt.exception()}"
        ) from e
    if boost > 0:
        logging.warning(f"IC(0) needed a diagonal boost of {boost:g} x diag(A)")
    return IncompleteCholeskyPreconditioner(factor, boost, time.perf_counter() - start)


def _clamp_dense(M: np.ndarray, tau: float) -> np.ndarray:
    M = 0.5 * (M + M.T)
    idx = np.arange(M.shape[0])
    M[idx, idx] = np.maximum(M[idx, idx], tau)
    return M


def from_factor(
    kind: Union[str, int, FactorKind],
    factor,
    A: Optional[LinearOperatorLike] = None,
    tau: float = DIAGONAL_CLAMP,
) -> LoadedFactorPreconditioner:
    """Builds M^-1 = L L^T from an in-memory lower factor.

    ``factor`` is an (n, n) array for dense, a sparse matrix for sparse and an
    (nblocks, 6, 6) array for blockdiag. A sparse factor is masked to the lower
    scalar pattern of ``A`` when ``A`` is given.
    """
    start = time.perf_counter()
    kind = FactorKind.parse(kind)
    masked = 0
    if kind is FactorKind.DENSE:
        L = np.tril(np.asarray(factor, dtype=np.float64))
        operator = _clamp_dense(L @ L.T, tau)
    elif kind is FactorKind.SPARSE:
        L = sp.tril(sp.csr_matrix(factor, dtype=np.float64)).tocsr()
        if A is not None:
            mask_rows, mask_cols = as_block_matrix(A).lower_pattern()
            mask = sp.csr_matrix(
                (np.ones(len(mask_rows)), (mask_rows, mask_cols)), shape=L.shape
            )
            before = L.count_nonzero()
            L = L.multiply(mask).tocsr()
            L.eliminate_zeros()
            masked = before - L.count_nonzero()
            if masked:
                logging.warning(
                    f"Zeroed {masked} sparse factor entries outside the system pattern"
                )
        M = (L @ L.T).tocsr()
        M = 0.5 * (M + M.T)
        lift = np.maximum(tau - M.diagonal(), 0.0)
        operator = (M + sp.diags(lift)).tocsr()
    else:
        L = np.tril(np.asarray(factor, dtype=np.float64))
        if L.ndim != 3 or L.shape[1:] != (DEFAULT_BLOCK_DIM, DEFAULT_BLOCK_DIM):
            raise DimensionMismatch(f"block-diagonal factor must be (k, 6, 6), got {L.shape}")
        M = L @ np.swapaxes(L, -1, -2)
        M = 0.5 * (M + np.swapaxes(M, -1, -2))
        idx = np.arange(DEFAULT_BLOCK_DIM)
        M[:, idx, idx] = np.maximum(M[:, idx, idx], tau)
        operator = M

    precond = LoadedFactorPreconditioner(
        kind, operator, time.perf_counter() - start, masked_entries=masked
    )
    if A is not None and precond.n != as_block_matrix(A).n:
        raise DimensionMismatch(
            f"factor is {precond.n}-dimensional, system is {as_block_matrix(A).n}"
        )
    return precond


def save_preconditioner(path: Union[str, Path], kind: Union[str, int, FactorKind], factor):
    """Writes a lower factor as NRPC."""
    kind = FactorKind.parse(kind)
    if kind is FactorKind.DENSE:
        L = np.asarray(factor, dtype=np.float64)
        n = L.shape[0]
        payload = L[np.tril_indices(n)].astype("<f8").tobytes()
    elif kind is FactorKind.SPARSE:
        L = sp.tril(sp.coo_matrix(factor, dtype=np.float64)).tocsr()
        L.sort_indices()
        L = L.tocoo()
        n = L.shape[0]
        entries = np.empty(L.nnz, dtype=NRPC_SPARSE_ENTRY)
        entries["row"], entries["col"], entries["val"] = L.row, L.col, L.data
        payload = NRPC_COUNT.pack(L.nnz) + entries.tobytes()
    else:
        L = np.asarray(factor, dtype=np.float64)
        n = L.shape[0] * DEFAULT_BLOCK_DIM
        payload = NRPC_COUNT.pack(L.shape[0]) + (
            L[:, TRIL_6[0], TRIL_6[1]].astype("<f8").tobytes()
        )
    try:
        Path(path).write_bytes(NRPC_HEADER.pack(NRPC_MAGIC, kind.value, n) + payload)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", path=str(path)) from e


def read_factor(path: Union[str, Path]):
    """Parses an NRPC file into (FactorKind, n, lower factor)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", path=str(path)) from e
    path = str(path)
    if len(raw) < NRPC_HEADER.size:
        raise FormatError("truncated NRPC header", path=path)
    magic, kind_byte, n = NRPC_HEADER.unpack_from(raw)
    if magic != NRPC_MAGIC:
        raise FormatError(f"bad magic {magic!r}", path=path)
    try:
        kind = FactorKind.parse(kind_byte)
    except FormatError as e:
        raise FormatError(str(e), path=path) from None
    body = raw[NRPC_HEADER.size :]

    if kind is FactorKind.DENSE:
        count = n * (n + 1) // 2
        if len(body) != 8 * count:
            raise FormatError(f"dense payload is {len(body)} bytes, expected {8 * count}", path=path)
        L = np.zeros((n, n))
        L[np.tril_indices(n)] = np.frombuffer(body, dtype="<f8")
        return kind, n, L

    if len(body) < NRPC_COUNT.size:
        raise FormatError("truncated NRPC count", path=path)
    (count,) = NRPC_COUNT.unpack_from(body)
    body = body[NRPC_COUNT.size :]

    if kind is FactorKind.SPARSE:
        if len(body) != count * NRPC_SPARSE_ENTRY.itemsize:
            raise FormatError(f"sparse payload does not hold {count} entries", path=path)
        entries = np.frombuffer(body, dtype=NRPC_SPARSE_ENTRY)
        rows, cols = entries["row"].astype(np.int64), entries["col"].astype(np.int64)
        if np.any(rows >= n) or np.any(cols > rows):
            raise FormatError("sparse entries must satisfy col <= row < n", path=path)
        L = sp.csr_matrix((entries["val"].astype(np.float64), (rows, cols)), shape=(n, n))
        return kind, n, L

    per_block = len(TRIL_6[0])
    if count * DEFAULT_BLOCK_DIM != n:
        raise FormatError(f"{count} blocks do not cover n = {n}", path=path)
    if len(body) != 8 * per_block * count:
        raise FormatError(f"block-diagonal payload does not hold {count} blocks", path=path)
    L = np.zeros((count, DEFAULT_BLOCK_DIM, DEFAULT_BLOCK_DIM))
    L[:, TRIL_6[0], TRIL_6[1]] = np.frombuffer(body, dtype="<f8").reshape(count, per_block)
    return kind, n, L


def load_preconditioner(
    path: Union[str, Path],
    A: Optional[LinearOperatorLike] = None,
    tau: float = DIAGONAL_CLAMP,
) -> LoadedFactorPreconditioner:
    kind, n, L = read_factor(path)
    if A is not None and as_block_matrix(A).n != n:
        raise DimensionMismatch(f"{path} holds an n = {n} factor, system is {as_block_matrix(A).n}")
    return from_factor(kind, L, A=A, tau=tau)


def make_preconditioner(
    kind: Union[str, PreconditionerKind],
    A: LinearOperatorLike,
    factor_path: Optional[Union[str, Path]] = None,
) -> Preconditioner:
    kind = PreconditionerKind(kind)
    if kind is PreconditionerKind.IDENTITY:
        return identity(as_block_matrix(A).n)
    if kind is PreconditionerKind.BLOCK_JACOBI:
        return block_jacobi(A)
    if kind is PreconditionerKind.INCOMPLETE_CHOLESKY:
        return incomplete_cholesky(A)
    if factor_path is None:
        raise FormatError(f"{kind.value} needs a factor file")
    precond = load_preconditioner(factor_path, A=A)
    if precond.kind is not kind:
        raise FormatError(
            f"{factor_path} holds a {precond.kind.value} factor, {kind.value} requested",
            path=str(factor_path),
        )
    return precond
