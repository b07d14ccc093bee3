"""NRAB dumps of Gauss-Newton systems [A, b]."""

import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from warpgraph.engine.errors import DimensionMismatch, FormatError, IoError
from warpgraph.engine.solver.block_matrix import (
    DEFAULT_BLOCK_DIM,
    BlockSparseMatrix,
    LinearOperatorLike,
    as_block_matrix,
)

NRAB_MAGIC = b"NRAB"
NRAB_HEADER = struct.Struct("<4sIII")
NRAB_BLOCK = np.dtype(
    [("row", "<u4"), ("col", "<u4"), ("values", "<f8", (DEFAULT_BLOCK_DIM * DEFAULT_BLOCK_DIM,))]
)


def encode_system(A: LinearOperatorLike, b: np.ndarray) -> bytes:
    A = as_block_matrix(A)
    b = np.asarray(b, dtype=np.float64)
    if A.block_dim != DEFAULT_BLOCK_DIM:
        raise DimensionMismatch(f"NRAB stores {DEFAULT_BLOCK_DIM}x{DEFAULT_BLOCK_DIM} blocks only")
    if b.shape != (A.n,):
        raise DimensionMismatch(f"b has shape {b.shape}, A is {A.n}x{A.n}")
    records = np.empty(A.nnz_blocks, dtype=NRAB_BLOCK)
    records["row"], records["col"] = A.rows, A.cols
    records["values"] = A.blocks.reshape(A.nnz_blocks, -1)
    header = NRAB_HEADER.pack(NRAB_MAGIC, A.nblocks, A.block_dim, A.nnz_blocks)
    return header + records.tobytes() + b.astype("<f8").tobytes()


def decode_system(raw: bytes, path: str = None) -> Tuple[BlockSparseMatrix, np.ndarray]:
    if len(raw) < NRAB_HEADER.size:
        raise FormatError("truncated NRAB header", path=path)
    magic, nblocks, block_dim, nnz = NRAB_HEADER.unpack_from(raw)
    if magic != NRAB_MAGIC:
        raise FormatError(f"bad magic {magic!r}", path=path)
    if block_dim != DEFAULT_BLOCK_DIM:
        raise FormatError(f"unsupported block_dim {block_dim}", path=path)
    n = nblocks * block_dim
    expected = NRAB_HEADER.size + nnz * NRAB_BLOCK.itemsize + 8 * n
    if len(raw) != expected:
        raise FormatError(f"NRAB is {len(raw)} bytes, expected {expected}", path=path)
    records = np.frombuffer(raw, dtype=NRAB_BLOCK, count=nnz, offset=NRAB_HEADER.size)
    b = np.frombuffer(raw, dtype="<f8", offset=NRAB_HEADER.size + nnz * NRAB_BLOCK.itemsize)
    try:
        A = BlockSparseMatrix(
            nblocks,
            block_dim,
            records["row"].astype(np.int64),
            records["col"].astype(np.int64),
            records["values"].reshape(nnz, block_dim, block_dim).astype(np.float64),
        )
    except DimensionMismatch as e:
        raise FormatError(f"invalid block layout: {e}", path=path) from e
    return A, b.astype(np.float64)


def dump_system(A: LinearOperatorLike, b: np.ndarray, path: Union[str, Path]) -> None:
    payload = encode_system(A, b)
    try:
        Path(path).write_bytes(payload)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", path=str(path)) from e


def load_system(path: Union[str, Path]) -> Tuple[BlockSparseMatrix, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", path=str(path)) from e
    return decode_system(raw, path=str(path))
