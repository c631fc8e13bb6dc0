import json

import numpy as np
import pytest

from wanbench.bench import (REPORT_COLUMNS, RunConfig, average_rows, read_report, render_table,
                            report_figure, run_bench, write_report)
from wanbench.cli import main
from wanbench.codecs import untile
from wanbench.image_core import load_image, save_image
from wanbench.neural import WAN, WanConfig, save_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, blocks):
    root = tmp_path_factory.mktemp("ws")
    src = root / "src"
    src.mkdir()
    for i in range(20):
        save_image(src / f"img{i:02d}.pgm", np.kron(blocks[i], np.ones((2, 2))))
    (src / "broken.pgm").write_bytes(b"P5 10 10 255\n")
    img = untile(blocks[:4], 128, 128)
    save_image(root / "host.pgm", img)
    save_checkpoint(root / "tiny.ckpt", WAN(WanConfig(1, 1, 4, 2), seed=0))
    return root


def test_embed_extract_attack(workspace, capsys):
    ws = workspace
    assert main(["embed", str(ws / "host.pgm"), str(ws / "m.pgm"), "--method", "M3",
                 "--message", "1001", "--aux-out", str(ws / "aux.txt")]) == 0
    assert main(["extract", str(ws / "m.pgm"), "--aux", str(ws / "aux.txt")]) == 0
    assert capsys.readouterr().out.strip() == "1001"
    assert main(["attack", str(ws / "m.pgm"), str(ws / "a.pgm"), "--spec", "jpeg:90"]) == 0
    assert load_image(ws / "a.pgm").shape == (128, 128)


def test_exit_codes(workspace, capsys):
    ws = workspace
    with pytest.raises(SystemExit) as e:
        main(["embed"])
    assert e.value.code == 1
    assert main(["extract", str(ws / "host.pgm")]) == 1  # neither --method nor --aux
    assert main(["extract", str(ws / "missing.pgm"), "--method", "M1"]) == 2
    assert main(["embed", str(ws / "host.pgm"), str(ws / "x.pgm"), "--method", "M1",
                 "--message", "01"]) == 2  # capacity mismatch
    assert main(["attack", str(ws / "host.pgm"), str(ws / "x.pgm"), "--spec", "blur:3"]) == 2
    capsys.readouterr()


def test_dataset_train_wan_attack_aow(workspace, capsys):
    ws = workspace
    assert main(["dataset", "--src", str(ws / "src"), "--out", str(ws / "ds"), "--method", "M3"]) == 0
    manifest = (ws / "ds" / "manifest.tsv").read_text().splitlines()
    assert len(manifest) == 21
    assert [ln.split("\t")[1] for ln in manifest[1:]].count("train") == 14
    run = json.loads((ws / "ds" / "run.json").read_text())
    assert run["command"] == "dataset" and run["aux"]["method"] == "M3"
    assert main(["train", "--manifest", str(ws / "ds" / "manifest.tsv"), "--out", str(ws / "tr"),
                 "--method", "M3", "--epochs", "2", "--batch-size", "4", "--lr", "1e-3",
                 "--wan", "1", "1", "4", "2"]) == 0
    hist = (ws / "tr" / "history.csv").read_text().splitlines()
    assert len(hist) == 3
    assert (ws / "tr" / "run.json").exists()
    assert main(["wan-attack", str(ws / "host.pgm"), str(ws / "w.pgm"),
                 "--checkpoint", str(ws / "tr" / "wan.ckpt")]) == 0
    assert load_image(ws / "w.pgm").shape == (128, 128)
    assert main(["aow", str(ws / "host.pgm"), "--message", "0110", "--method", "M1",
                 "--checkpoint", str(ws / "tr" / "wan.ckpt"), "--out", str(ws / "aow")]) == 0
    for name in ("aow_min.pgm", "aow_max.pgm", "watermarked.pgm", "residual_codec.raw",
                 "residual_wan.raw", "run.json"):
        assert (ws / "aow" / name).exists()
    capsys.readouterr()


def test_bench_and_report(workspace, capsys):
    ws = workspace
    cfg = RunConfig(methods=["M2", "M3"], capacities=[1, 4], attacks=["jpeg:80", "na:2:seed=5"],
                    images={"dir": str(ws / "src")}, checkpoints={"M3": str(ws / "tiny.ckpt")},
                    output_dir=str(ws / "bench"))
    cfg.save(ws / "run.json")
    assert main(["bench", "--config", str(ws / "run.json")]) == 0
    capsys.readouterr()
    rows = read_report(ws / "bench" / "report.csv")
    assert json.dumps(rows) == json.dumps(read_report(ws / "bench" / "report.json"))
    cells = {(r["method"], r["capacity"], r["scenario"]): r for r in rows}
    scenarios = ["non-attack", "WAN", "AoW-min", "AoW-max", "attack:jpeg:80", "attack:na:2:seed=5"]
    for m in ("M2", "M3", "Average"):
        for cap in (1, 4):
            for s in scenarios:
                assert (m, cap, s) in cells
    assert cells[("M2", 1, "non-attack")]["ber"] == 0.0
    assert cells[("M2", 1, "WAN")]["status"] == "missing checkpoint"
    assert cells[("M3", 4, "WAN")]["status"] == "ok"
    assert cells[("M3", 1, "non-attack")]["n"] == 20
    avg = cells[("Average", 1, "non-attack")]
    assert avg["psnr"] == pytest.approx((cells[("M2", 1, "non-attack")]["psnr"]
                                         + cells[("M3", 1, "non-attack")]["psnr"]) / 2, abs=1e-5)
    assert json.loads((ws / "bench" / "run.json").read_text())["format"] == "wanbench-run 1"
    assert main(["report", str(ws / "bench" / "report.json"), "--out", str(ws / "rep")]) == 0
    out = capsys.readouterr().out
    assert "AoW-min" in out and "attack:jpeg:80" in out
    assert (ws / "rep" / "ber_4bit.png").exists() and (ws / "rep" / "psnr_1bit.png").exists()
    assert (ws / "rep" / "table.txt").read_text() == out


def test_plotted_values_equal_report_values(workspace):
    rows = read_report(workspace / "bench" / "report.csv")
    fig = report_figure(rows, 1, "ber")
    ax = fig.axes[0]
    scenarios = [t.get_text() for t in ax.get_xticklabels()]
    methods = [t.get_text() for t in ax.get_legend().get_texts()]
    for container, m in zip(ax.containers, methods):
        for bar, s in zip(container, scenarios):
            expect = [r["ber"] for r in rows if r["method"] == m and r["capacity"] == 1
                      and r["scenario"] == s][0]
            if np.isnan(expect):
                assert np.isnan(bar.get_height())
            else:
                assert bar.get_height() == expect


def test_empty_report_and_averages(tmp_path):
    assert render_table([]).splitlines()[0].split()[:3] == ["method", "bits", "scenario"]
    write_report([], tmp_path)
    assert (tmp_path / "report.csv").read_text().strip() == ",".join(REPORT_COLUMNS)
    assert read_report(tmp_path / "report.json") == []
    rows = [{"method": "M1", "capacity": 1, "scenario": "WAN", "psnr": float("nan"),
             "ssim": float("nan"), "ber": float("nan"), "n": 0, "status": "missing checkpoint"}]
    assert average_rows(rows)[0]["status"] == "no methods"


def test_run_config_validation(tmp_path):
    with pytest.raises(ValueError):
        RunConfig(capacities=[3])
    with pytest.raises(ValueError):
        RunConfig(attacks=["jpeg:0"])
    with pytest.raises(ValueError):
        RunConfig.from_json('{"methods": ["M1"]}')
    with pytest.raises(ValueError):
        RunConfig.from_json('{"format": "wanbench-run 1", "colour": true}')
    cfg = RunConfig(aux={"M1": {"alpha": 6.0}})
    assert RunConfig.from_json(cfg.to_json()) == cfg
    assert cfg.aux_for("M1").alpha == 6.0


def test_bench_is_deterministic(workspace):
    cfg = RunConfig(methods=["M1"], capacities=[1], attacks=["na:3:seed=1"],
                    images={"dir": str(workspace / "src")}, checkpoints={"M1": str(workspace / "tiny.ckpt")})
    from wanbench.bench import report_csv

    assert report_csv(run_bench(cfg)) == report_csv(run_bench(cfg))
