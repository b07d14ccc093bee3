from warpgraph.engine.bench.harness import (
    CSV_VERSION_LINE,
    CURVES_CSV,
    DEFAULT_KINDS,
    ROWS_CSV,
    SUMMARY_CSV,
    BenchReport,
    BenchRow,
    discover_factors,
    discover_systems,
    read_bench_csv,
    run_benchmark,
    write_oracle_factors,
)
from warpgraph.engine.bench.plot import render_curves_svg, write_curves_svg
