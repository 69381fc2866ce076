"""Command line surface: exit codes, file outputs, reproducibility."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from tubegrounder.cli import main
from tubegrounder.interactor import InteractorDims, InteractorParams

SUBCOMMANDS = (
    "gen-synth",
    "link",
    "train",
    "eval",
    "ground",
    "inspect-attention",
    "gradcheck",
)

GEN_ARGS = [
    "--videos", "12",
    "--test-videos", "4",
    "--frames", "6",
    "--boxes", "3",
    "--concepts", "2",
    "--background-concepts", "4",
    "--feature-dim", "8",
    "--vocab", "4",
    "--tokens", "2",
    "--seed", "7",
]


def gen(out_dir: Path) -> dict[str, Path]:
    assert main(["gen-synth", "--out", str(out_dir), *GEN_ARGS]) == 0
    return {
        "train": out_dir / "train.jsonl",
        "test": out_dir / "test.jsonl",
        "embeddings": out_dir / "embeddings.txt",
    }


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-synth -> link -> train once; reused by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    paths = gen(root / "scenario")
    proposals = root / "proposals.jsonl"
    assert main(["link", "--data", str(paths["train"]), "--out", str(proposals)]) == 0
    run = root / "run"
    assert (
        main(
            [
                "train",
                "--data", str(paths["train"]),
                "--proposals", str(proposals),
                "--embeddings", str(paths["embeddings"]),
                "--out", str(run),
                "--epochs", "2",
                "--batch-size", "4",
                "--hidden", "6",
                "--segments", "2",
                "--seed", "0",
            ]
        )
        == 0
    )
    return {
        **paths,
        "proposals": proposals,
        "run": run,
        "checkpoint": run / "params.json",
    }


def scoring_args(pipeline, data_key="train"):
    return [
        "--data", str(pipeline[data_key]),
        "--proposals", str(pipeline["proposals"]),
        "--embeddings", str(pipeline["embeddings"]),
        "--checkpoint", str(pipeline["checkpoint"]),
        "--segments", "2",
    ]


class TestExitCodes:
    @pytest.mark.parametrize("command", SUBCOMMANDS)
    def test_help_exits_zero_and_documents_flags(self, command, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main([command, "--help"])
        assert excinfo.value.code == 0
        text = capsys.readouterr().out
        assert command in text or "usage" in text

    def test_top_level_help_lists_all_subcommands(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--help"])
        assert excinfo.value.code == 0
        text = capsys.readouterr().out
        for command in SUBCOMMANDS:
            assert command in text

    def test_unknown_flag_exits_one(self, capsys):
        assert main(["gen-synth", "--out", "d", "--bogus-flag", "1"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_unknown_command_exits_one(self):
        assert main(["frobnicate"]) == 1

    def test_missing_file_exits_two_with_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.jsonl"
        code = main(["link", "--data", str(missing), "--out", str(tmp_path / "p.jsonl")])
        assert code == 2
        assert str(missing) in capsys.readouterr().err

    def test_contract_error_exits_two(self, tmp_path, capsys):
        # tokens > 1 with vocab == concepts leaves no filler tokens
        code = main(
            [
                "gen-synth",
                "--out", str(tmp_path),
                "--concepts", "2",
                "--vocab", "2",
                "--tokens", "2",
                "--feature-dim", "8",
                "--background-concepts", "2",
            ]
        )
        assert code == 2
        assert "filler" in capsys.readouterr().err


class TestGenSynth:
    def test_writes_split_files(self, tmp_path):
        paths = gen(tmp_path / "d")
        for path in paths.values():
            assert path.exists(), path
        train_lines = paths["train"].read_text(encoding="utf-8").strip().splitlines()
        test_lines = paths["test"].read_text(encoding="utf-8").strip().splitlines()
        assert len(train_lines) == 8
        assert len(test_lines) == 4

    def test_same_seed_identical_directory_contents(self, tmp_path):
        a = gen(tmp_path / "a")
        b = gen(tmp_path / "b")
        assert sorted(p.name for p in (tmp_path / "a").iterdir()) == sorted(
            p.name for p in (tmp_path / "b").iterdir()
        )
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes(), key


class TestLink:
    def test_writes_proposals_jsonl(self, pipeline):
        lines = pipeline["proposals"].read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) >= 1
        first = json.loads(lines[0])
        assert first["id"] == "synth0000"
        assert all("energy" in tube for tube in first["tubes"])

    def test_link_reproducible(self, pipeline, tmp_path):
        out = tmp_path / "again.jsonl"
        assert main(["link", "--data", str(pipeline["train"]), "--out", str(out)]) == 0
        assert out.read_bytes() == pipeline["proposals"].read_bytes()


class TestTrain:
    def test_outputs_exist(self, pipeline):
        run = pipeline["run"]
        assert (run / "params.json").exists()
        assert (run / "config.json").exists()
        assert (run / "loss.csv").exists()
        checkpoints = sorted((run / "checkpoints").iterdir())
        assert [p.name for p in checkpoints] == ["epoch_001.json", "epoch_002.json"]

    def test_loss_csv_layout(self, pipeline):
        lines = (pipeline["run"] / "loss.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "epoch,mean_total,mean_rank,mean_div"
        assert len(lines) == 3
        for line in lines[1:]:
            epoch, total, rank, div = line.split(",")
            assert np.isfinite(float(total))
            assert np.isfinite(float(rank))
            assert np.isfinite(float(div))
            assert int(epoch) in (1, 2)

    def test_reproducible_from_flags(self, pipeline, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert (
                main(
                    [
                        "train",
                        "--data", str(pipeline["train"]),
                        "--proposals", str(pipeline["proposals"]),
                        "--embeddings", str(pipeline["embeddings"]),
                        "--out", str(out),
                        "--epochs", "2",
                        "--batch-size", "4",
                        "--hidden", "6",
                        "--segments", "2",
                        "--seed", "3",
                    ]
                )
                == 0
            )
            outs.append(out)
        assert (outs[0] / "params.json").read_bytes() == (outs[1] / "params.json").read_bytes()
        assert (outs[0] / "loss.csv").read_bytes() == (outs[1] / "loss.csv").read_bytes()

    def test_config_file_with_flag_override(self, pipeline, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(
            json.dumps(
                {
                    "epochs": 1,
                    "batch_size": 4,
                    "hidden": 6,
                    "segments": 2,
                    "seed": 0,
                }
            ),
            encoding="utf-8",
        )
        out = tmp_path / "run"
        assert (
            main(
                [
                    "train",
                    "--data", str(pipeline["train"]),
                    "--proposals", str(pipeline["proposals"]),
                    "--embeddings", str(pipeline["embeddings"]),
                    "--config", str(cfg_path),
                    "--out", str(out),
                    "--epochs", "2",
                ]
            )
            == 0
        )
        # flag wins over the config file value
        names = sorted(p.name for p in (out / "checkpoints").iterdir())
        assert names == ["epoch_001.json", "epoch_002.json"]

    def test_validation_split_selects_checkpoint(self, pipeline, tmp_path, capsys):
        val_proposals = tmp_path / "val_proposals.jsonl"
        assert (
            main(["link", "--data", str(pipeline["test"]), "--out", str(val_proposals)])
            == 0
        )
        out = tmp_path / "run"
        code = main(
            [
                "train",
                "--data", str(pipeline["train"]),
                "--proposals", str(pipeline["proposals"]),
                "--embeddings", str(pipeline["embeddings"]),
                "--val-data", str(pipeline["test"]),
                "--val-proposals", str(val_proposals),
                "--out", str(out),
                "--epochs", "2",
                "--batch-size", "4",
                "--hidden", "6",
                "--segments", "2",
            ]
        )
        assert code == 0
        assert "validation accuracy at selected epoch" in capsys.readouterr().out


class TestEval:
    def test_untrained_params_still_dominated_by_upper_bound(self, pipeline, tmp_path):
        # dominance must hold for arbitrary (even untrained) parameters
        dims = InteractorDims(visual_in=8, text_in=8, hidden=6)
        checkpoint = tmp_path / "random.json"
        InteractorParams.init(dims, seed=99).save(checkpoint)
        report_path = tmp_path / "report.json"
        args = scoring_args(pipeline)
        args[args.index("--checkpoint") + 1] = str(checkpoint)
        assert (
            main(
                [
                    "eval",
                    *args,
                    "--out", str(report_path),
                    "--trials", "50",
                ]
            )
            == 0
        )
        report = json.loads(report_path.read_text(encoding="utf-8"))
        for eta in ("0.4", "0.5", "0.6"):
            assert report["rows"]["upper_bound"][eta] >= report["rows"]["method"][eta]

    def test_report_csv_and_score_dist(self, pipeline, tmp_path):
        report_path = tmp_path / "report.json"
        csv_path = tmp_path / "report.csv"
        dist_path = tmp_path / "dist.json"
        assert (
            main(
                [
                    "eval",
                    *scoring_args(pipeline),
                    "--out", str(report_path),
                    "--csv", str(csv_path),
                    "--score-dist", str(dist_path),
                    "--trials", "50",
                    "--eta", "0.5",
                ]
            )
            == 0
        )
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["etas"] == [0.5]
        assert len(report["per_video"]) == 8
        lines = csv_path.read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "row,0.5,average"
        dist = json.loads(dist_path.read_text(encoding="utf-8"))
        assert len(dist) == 10
        assert all(
            set(d) == {"decile", "low", "high", "count", "mean_score"} for d in dist
        )

    def test_threads_match_serial(self, pipeline, tmp_path):
        reports = []
        for threads in ("1", "2"):
            path = tmp_path / f"r{threads}.json"
            assert (
                main(
                    [
                        "eval",
                        *scoring_args(pipeline),
                        "--out", str(path),
                        "--trials", "50",
                        "--threads", threads,
                    ]
                )
                == 0
            )
            reports.append(json.loads(path.read_text(encoding="utf-8")))
        assert reports[0] == reports[1]


class TestGroundAndAttention:
    def test_ground_prints_chosen_tube(self, pipeline, capsys):
        assert main(["ground", *scoring_args(pipeline)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["video_id"] == "synth0000"
        assert isinstance(out["chosen_index"], int)
        assert len(out["boxes"]) == 6
        assert {"frame", "x1", "y1", "x2", "y2", "conf"} <= set(out["boxes"][0])

    def test_ground_specific_video(self, pipeline, capsys):
        assert main(["ground", *scoring_args(pipeline), "--video-id", "synth0003"]) == 0
        assert json.loads(capsys.readouterr().out)["video_id"] == "synth0003"

    def test_ground_unknown_video_exits_two(self, pipeline, capsys):
        assert main(["ground", *scoring_args(pipeline), "--video-id", "missing"]) == 2
        assert "missing" in capsys.readouterr().err

    def test_attention_dump_rows_are_token_distributions(self, pipeline, tmp_path):
        out = tmp_path / "attention.json"
        assert (
            main(["inspect-attention", *scoring_args(pipeline), "--out", str(out)]) == 0
        )
        dump = json.loads(out.read_text(encoding="utf-8"))
        assert set(dump) == {"0", "1"}  # one row per visual segment
        for row in dump.values():
            assert len(row) == 2  # one entry per sentence token
            weights = [cell["weight"] for cell in row]
            assert abs(sum(weights) - 1.0) < 1e-9
            assert all(w >= 0 for w in weights)


class TestGradcheck:
    def test_small_dims_under_tolerance(self, capsys):
        assert main(["gradcheck", "--dims", "small"]) == 0
        out = capsys.readouterr().out
        assert "max relative gradient error" in out
        err = float(out.split(":")[1].split("(")[0])
        assert err < 1e-4

    def test_tiny_dims_under_tolerance(self, capsys):
        assert main(["gradcheck", "--dims", "tiny"]) == 0
        err = float(capsys.readouterr().out.split(":")[1].split("(")[0])
        assert err < 1e-4
