"""PCG benchmarking over a corpus of dumped [A, b] systems."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from warpgraph.engine.config import default_thread_count
from warpgraph.engine.decorators import workflow
from warpgraph.engine.errors import IoError, WarpgraphError
from warpgraph.engine.solver import (
    FactorKind,
    PreconditionerKind,
    condition_number,
    exact_inverse_factor,
    load_system,
    make_preconditioner,
    pcg_solve,
    save_preconditioner,
)

CSV_VERSION_LINE = "# warpgraph-csv v1"
ROWS_CSV = "bench_rows.csv"
SUMMARY_CSV = "bench_summary.csv"
CURVES_CSV = "bench_curves.csv"
DEFAULT_KINDS = (
    PreconditionerKind.IDENTITY,
    PreconditionerKind.BLOCK_JACOBI,
    PreconditionerKind.INCOMPLETE_CHOLESKY,
)
DEFAULT_TOL = 1e-6
# iteration cap per unknown when max_iters is not given
ITERS_PER_UNKNOWN = 10

FACTOR_SUFFIXES = {
    FactorKind.DENSE: "dense",
    FactorKind.SPARSE: "sparse",
    FactorKind.BLOCKDIAG: "blockdiag",
}


@dataclass
class BenchRow:
    system: str
    kind: str
    iterations: int
    converged: bool
    final_residual: float
    kappa: float
    setup_time: float
    solve_time: float
    history: List[float] = field(default_factory=list, repr=False)

    def to_record(self) -> dict:
        return {
            "system": self.system,
            "kind": self.kind,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_residual": self.final_residual,
            "kappa": self.kappa,
            "setup_time_nondet": self.setup_time,
            "solve_time_nondet": self.solve_time,
        }


@dataclass
class BenchReport:
    rows: List[BenchRow] = field(default_factory=list)
    failures: List[Tuple[str, str]] = field(default_factory=list)
    systems: int = 0

    @property
    def all_failed(self) -> bool:
        return self.systems > 0 and not self.rows

    def rows_frame(self) -> pd.DataFrame:
        columns = list(BenchRow("", "", 0, False, 0.0, 0.0, 0.0, 0.0).to_record())
        return pd.DataFrame([row.to_record() for row in self.rows], columns=columns)

    def summary(self) -> pd.DataFrame:
        """Per-kind aggregates, recomputable from ``rows_frame``."""
        rows = self.rows_frame()
        if rows.empty:
            return pd.DataFrame(
                columns=[
                    "kind", "systems", "mean_iterations", "median_iterations",
                    "mean_kappa", "median_kappa", "mean_final_residual",
                    "converged_fraction", "mean_setup_time_nondet", "mean_solve_time_nondet",
                ]
            )
        grouped = rows.groupby("kind", sort=False)
        return pd.DataFrame(
            {
                "systems": grouped["system"].count(),
                "mean_iterations": grouped["iterations"].mean(),
                "median_iterations": grouped["iterations"].median(),
                "mean_kappa": grouped["kappa"].mean(),
                "median_kappa": grouped["kappa"].median(),
                "mean_final_residual": grouped["final_residual"].mean(),
                "converged_fraction": grouped["converged"].mean(),
                "mean_setup_time_nondet": grouped["setup_time_nondet"].mean(),
                "mean_solve_time_nondet": grouped["solve_time_nondet"].mean(),
            }
        ).reset_index()

    def curves(self) -> pd.DataFrame:
        """Mean residual per iteration and kind; short histories repeat their last value."""
        records = []
        for kind in dict.fromkeys(row.kind for row in self.rows):
            histories = [row.history for row in self.rows if row.kind == kind and row.history]
            if not histories:
                continue
            length = max(len(h) for h in histories)
            padded = np.array([h + [h[-1]] * (length - len(h)) for h in histories])
            for k, value in enumerate(padded.mean(axis=0)):
                records.append(
                    {"kind": kind, "iteration": k, "mean_residual": float(value), "systems": len(histories)}
                )
        return pd.DataFrame(records, columns=["kind", "iteration", "mean_residual", "systems"])

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        paths = {}
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            for name, frame in (
                (ROWS_CSV, self.rows_frame()),
                (SUMMARY_CSV, self.summary()),
                (CURVES_CSV, self.curves()),
            ):
                path = out_dir / name
                with path.open("w", newline="") as fh:
                    fh.write(CSV_VERSION_LINE + "\n")
                    frame.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")
                paths[name] = path
        except OSError as e:
            raise IoError(f"cannot write benchmark output in {out_dir}: {e}", path=str(out_dir)) from e
        return paths

    def to_json(self) -> dict:
        return {"systems": self.systems, "rows": len(self.rows), "failures": len(self.failures)}


def read_bench_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def discover_systems(corpus: Union[str, Path]) -> List[Path]:
    corpus = Path(corpus)
    if not corpus.is_dir():
        raise IoError(f"corpus directory {corpus} does not exist", path=str(corpus))
    return sorted(corpus.glob("*.nrab"))


def factor_path(factors_dir: Union[str, Path], system: Path, kind: FactorKind) -> Path:
    return Path(factors_dir) / f"{system.stem}.{FACTOR_SUFFIXES[kind]}.nrpc"


def discover_factors(
    system: Path, factors_dir: Optional[Union[str, Path]]
) -> Dict[PreconditionerKind, Path]:
    if factors_dir is None:
        return {}
    found = {}
    for kind in FactorKind:
        path = factor_path(factors_dir, system, kind)
        if path.is_file():
            found[kind.preconditioner_kind] = path
    return found


def write_oracle_factors(systems: Iterable[Path], factors_dir: Union[str, Path]) -> List[Path]:
    """Dense lower factors of A^-1 for every system, the perfect-preconditioner reference."""
    factors_dir = Path(factors_dir)
    factors_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for system in systems:
        A, _ = load_system(system)
        path = factor_path(factors_dir, system, FactorKind.DENSE)
        save_preconditioner(path, FactorKind.DENSE, exact_inverse_factor(A))
        written.append(path)
    return written


class _SystemBench:
    def __init__(
        self,
        kinds: Sequence[PreconditionerKind],
        factors_dir: Optional[Path],
        tol: float,
        max_iters: Optional[int],
        with_kappa: bool,
    ):
        self.kinds = list(kinds)
        self.factors_dir = factors_dir
        self.tol = tol
        self.max_iters = max_iters
        self.with_kappa = with_kappa

    def __call__(self, system: Path) -> Tuple[List[BenchRow], List[Tuple[str, str]]]:
        rows, failures = [], []
        try:
            A, b = load_system(system)
        except WarpgraphError as e:
            logging.warning(f"skipping {system}: {e}")
            return rows, [(system.stem, str(e))]

        jobs = [(kind, None) for kind in self.kinds]
        jobs += list(discover_factors(system, self.factors_dir).items())
        for kind, path in jobs:
            try:
                rows.append(self._run(system.stem, A, b, kind, path))
            except WarpgraphError as e:
                logging.warning(f"{system.stem} / {kind.value}: {e}")
                failures.append((f"{system.stem}:{kind.value}", str(e)))
        return rows, failures

    def _run(self, name, A, b, kind, path) -> BenchRow:
        M = make_preconditioner(kind, A, path)
        max_iters = self.max_iters or ITERS_PER_UNKNOWN * A.n
        _, report = pcg_solve(A, b, M, max_iters=max_iters, tol=0.0, atol=self.tol)
        kappa = float("nan")
        if self.with_kappa:
            precond = None if kind is PreconditionerKind.IDENTITY else M
            kappa = condition_number(A, precond).kappa
        return BenchRow(
            system=name,
            kind=kind.value,
            iterations=report.iterations,
            converged=report.converged,
            final_residual=report.final_residual,
            kappa=kappa,
            setup_time=M.setup_time,
            solve_time=report.wall_time,
            history=list(report.residual_history),
        )


@workflow(name="bench_pcg")
def run_benchmark(
    systems: Sequence[Union[str, Path]],
    kinds: Sequence[Union[str, PreconditionerKind]] = DEFAULT_KINDS,
    factors_dir: Optional[Union[str, Path]] = None,
    tol: float = DEFAULT_TOL,
    max_iters: Optional[int] = None,
    with_kappa: bool = True,
    threads: Optional[int] = None,
) -> BenchReport:
    """Solves every system with every preconditioner kind.

    Rows follow the order of ``systems``, then the order of ``kinds``, then
    any loaded factors found in ``factors_dir``.
    """
    paths = [Path(p) for p in systems]
    bench = _SystemBench(
        [PreconditionerKind(k) for k in kinds],
        Path(factors_dir) if factors_dir is not None else None,
        tol,
        max_iters,
        with_kappa,
    )
    report = BenchReport(systems=len(paths))
    with ThreadPoolExecutor(max_workers=threads or default_thread_count()) as pool:
        for rows, failures in pool.map(bench, paths):
            report.rows.extend(rows)
            report.failures.extend(failures)
    if report.all_failed:
        logging.error(f"every one of the {len(paths)} systems failed")
    return report
