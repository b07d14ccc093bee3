import json

import numpy as np
import pytest
from opentelemetry.context import get_value

from tests.conftest import random_spd
from warpgraph.engine.cli.main import EXIT_INPUT, EXIT_OK, build_parser, main
from warpgraph.engine.graph import save_graph_json
from warpgraph.engine.solver import dump_system
from warpgraph.engine.synth import export_scene
from warpgraph.engine.tracing.tracing import ASSOCIATION_KEY


@pytest.fixture
def still_dir(tmp_path, still_scene):
    return export_scene(still_scene, tmp_path / "still")


def _stderr_error(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_gen_synth_writes_one_directory_per_seed_and_level(tmp_path):
    out = tmp_path / "scenes"
    code = main(
        ["--out", str(out), "gen-synth", "--seeds", "0..1", "--levels", "2,4", "--width", "64", "--height", "48"]
    )
    assert code == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["scene_s000_j02", "scene_s000_j04", "scene_s001_j02", "scene_s001_j04"]
    meta = json.loads((out / "scene_s001_j04" / "meta.json").read_text())
    assert meta["jump_level"] == 4
    assert set(meta["pair_filter"]) == {"keep", "covisibility", "photo_error", "reasons"}


def test_eval_of_the_ground_truth_graph_is_zero(tmp_path, small_scene, capsys):
    scene_dir = export_scene(small_scene, tmp_path / "scene")
    save_graph_json(small_scene.gt_graph, tmp_path / "graph.json")
    capsys.readouterr()
    code = main(["eval", "--result", str(tmp_path / "graph.json"), "--gt", str(scene_dir / "gt_flow.json")])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["epe_mean"] == 0.0
    assert report["n_nodes"] == int(small_scene.gt_graph.valid.sum())


def test_track_writes_graph_and_telemetry(tmp_path, still_dir):
    out = tmp_path / "run"
    code = main(
        [
            "--out", str(out),
            "track",
            "--source", str(still_dir / "source"),
            "--target", str(still_dir / "target"),
            "--gt", str(still_dir / "gt_flow.json"),
            "--refine",
            "--dump-systems",
            "--no-timings",
        ]
    )
    assert code == EXIT_OK
    telemetry = json.loads((out / "telemetry.json").read_text())
    assert telemetry["evaluation"]["epe_mean"] < 1e-6
    assert "wall_time" not in telemetry
    assert (out / "graph.json").is_file()
    assert len(list((out / "systems").glob("*.nrab"))) == 3


def test_missing_depth_is_an_input_error(tmp_path, still_dir, capsys):
    (still_dir / "source" / "depth.png").unlink()
    code = main(
        ["--out", str(tmp_path), "track", "--source", str(still_dir / "source"), "--target", str(still_dir / "target")]
    )
    assert code == EXIT_INPUT
    error = _stderr_error(capsys)
    assert error["error"] == "IoError"
    assert error["path"].endswith("depth.png")


def test_bench_pcg_writes_csvs(tmp_path, capsys):
    rng = np.random.default_rng(5)
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for k in range(2):
        dump_system(random_spd(rng, 12, spread=4.0), rng.standard_normal(12), corpus / f"s{k}.nrab")
    out = tmp_path / "bench"
    code = main(
        ["--out", str(out), "--threads", "2", "bench-pcg", "--corpus", str(corpus), "--write-oracle-factors", "--svg"]
    )
    assert code == EXIT_OK
    assert {p.name for p in out.iterdir()} >= {
        "bench_rows.csv",
        "bench_summary.csv",
        "bench_curves.csv",
        "bench_curves.svg",
        "factors",
    }
    assert "loaded_dense" in capsys.readouterr().out


def test_bench_pcg_on_an_empty_corpus(tmp_path, capsys):
    code = main(["--out", str(tmp_path), "bench-pcg", "--corpus", str(tmp_path)])
    assert code == EXIT_INPUT
    assert _stderr_error(capsys)["path"] == str(tmp_path)


def test_dump_systems_needs_a_source(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "dump-systems"]) == EXIT_INPUT
    assert _stderr_error(capsys)["error"] == "ConfigError"


def test_dump_systems_from_exported_scenes(tmp_path, still_dir):
    out = tmp_path / "corpus"
    assert main(["--out", str(out), "--config", str(_one_iteration(tmp_path)), "dump-systems", "--scenes", str(still_dir)]) == EXIT_OK
    assert [p.name for p in out.glob("*.nrab")] == ["still_gn00.nrab"]


def _one_iteration(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"gn_iters": 1}))
    return path


def test_parser_rejects_unknown_preconditioners():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["track", "--source", "a", "--target", "b", "--preconditioner", "jacobi"])


@pytest.mark.parametrize(
    "argv",
    [
        ["--out", "o", "--threads", "3", "--seed", "5", "--config", "c.json", "eval", "--result", "r", "--gt", "g"],
        ["eval", "--result", "r", "--gt", "g", "--out", "o", "--threads", "3", "--seed", "5", "--config", "c.json"],
        ["--out", "o", "--seed", "5", "eval", "--threads", "3", "--config", "c.json", "--result", "r", "--gt", "g"],
    ],
)
def test_global_flags_go_before_or_after_the_subcommand(argv):
    args = build_parser().parse_args(argv)
    assert (args.out, args.threads, args.seed, args.config) == ("o", 3, 5, "c.json")
    assert args.verbose is False


def test_global_defaults_survive_the_subparser():
    args = build_parser().parse_args(["grad-check", "--verbose"])
    assert (args.out, args.threads, args.seed, args.config) == (".", None, 0, None)
    assert args.verbose is True


def test_gen_synth_leaves_no_association_properties_behind(tmp_path):
    argv = ["gen-synth", "--seeds", "0", "--levels", "2", "--width", "64", "--height", "48"]
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_OK
    assert get_value(ASSOCIATION_KEY) is None
