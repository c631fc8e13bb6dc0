"""Benchmark grid, run configuration files and report rendering.

A benchmark row is one (method, capacity, scenario) cell holding the mean
PSNR, SSIM and BER over the test corpus.  Scenarios are ``non-attack``,
``WAN``, ``AoW-min``, ``AoW-max`` and one ``attack:<spec>`` per requested
attack.  Rows that cannot be computed (for instance a missing checkpoint)
are kept with ``status`` set to the reason so the grid is always complete.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import prng
from .aow import select_residuals
from .attacks import AttackSpec, apply_attack
from .codecs import AuxData, default_aux, embed_message, extract_message, tile, untile
from .image_core import ber, load_image, psnr, resize, rgb_to_ycbcr, ssim
from .neural import DESK_WAN, WanConfig, load_checkpoint
from .wan import TrainConfig, attack_blocks

log = logging.getLogger(__name__)

RUN_FORMAT = "wanbench-run 1"
REPORT_FORMAT = "wanbench-report 1"
REPORT_COLUMNS = ("method", "capacity", "scenario", "psnr", "ssim", "ber", "n", "status")
BASE_SCENARIOS = ("non-attack", "WAN", "AoW-min", "AoW-max")
IMAGE_SUFFIXES = (".pgm", ".ppm", ".png")


@dataclass
class RunConfig:
    """Everything a run needs; written next to every output it produces.

    ``images`` is either ``{"dir": path}`` or ``{"builtin": count}`` (crops of
    the bundled held-out photographs).  ``aux`` maps a method to overrides of
    its default aux data; ``checkpoints`` maps a method to a trained network.
    """

    methods: list = field(default_factory=lambda: ["M1", "M2", "M3", "M4"])
    capacities: list = field(default_factory=lambda: [1, 4, 16])
    attacks: list = field(default_factory=lambda: ["jpeg:70", "mb:3", "na:2:seed=0"])
    images: dict = field(default_factory=lambda: {"builtin": 20})
    aux: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    train: dict = field(default_factory=lambda: asdict(TrainConfig()))
    wan: dict = field(default_factory=lambda: asdict(DESK_WAN))
    prn_seed: int = 20220101
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        for c in self.capacities:
            side = math.isqrt(int(c))
            if side * side != c or c < 1:
                raise ValueError(f"capacity {c} is not a square number of 64x64 tiles")
        for spec in self.attacks:
            AttackSpec.parse(spec)
        TrainConfig(**self.train)
        WanConfig(**self.wan)
        for m in self.methods:
            self.aux_for(m)

    def aux_for(self, method: str) -> AuxData:
        base = asdict(default_aux(method, self.prn_seed))
        base.update(self.aux.get(method, {}))
        return AuxData(**base)

    def to_json(self) -> str:
        return json.dumps({"format": RUN_FORMAT, **asdict(self)}, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        if data.pop("format", None) != RUN_FORMAT:
            raise ValueError(f"run config must declare format {RUN_FORMAT!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


# ---------------------------------------------------------------------------
# corpus

def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_gray(path) -> np.ndarray:
    img = load_image(path)
    return img if img.ndim == 2 else np.clip(rgb_to_ycbcr(img)[0], 0, 255)


def corpus_images(cfg: RunConfig, side: int) -> list[np.ndarray]:
    """Test corpus at ``side x side`` (8-bit values)."""
    spec = cfg.images
    if "dir" in spec:
        out = []
        for p in list_images(spec["dir"]):
            try:
                out.append(np.rint(resize(read_gray(p), side, side)))
            except (OSError, ValueError) as exc:
                log.warning("skipping %s: %s", p, exc)
        return out
    if "builtin" in spec:
        from .corpus import HELDOUT_SOURCES, natural_blocks

        count = int(spec["builtin"])
        return list(natural_blocks(count, cfg.seed + 1, sources=HELDOUT_SOURCES, size=side,
                                   min_crop=max(128, side), max_crop=512))
    raise ValueError("images must name a 'dir' or a 'builtin' count")


def message_for(seed: int, index: int, capacity: int) -> np.ndarray:
    """Deterministic message bits for test image ``index``."""
    return (prng.uniform(seed, capacity, offset=index * 4096) < 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# grid

def _row(method, capacity, scenario, stats=None, status="ok"):
    row = {"method": method, "capacity": int(capacity), "scenario": scenario,
           "psnr": math.nan, "ssim": math.nan, "ber": math.nan, "n": 0, "status": status}
    if stats:
        row.update(psnr=float(np.mean(stats["psnr"])), ssim=float(np.mean(stats["ssim"])),
                   ber=float(np.mean(stats["ber"])), n=len(stats["ber"]))
    return row


def _accumulate(stats, original, image, aux, message):
    stats["psnr"].append(psnr(original, image))
    stats["ssim"].append(ssim(original, image))
    stats["ber"].append(ber(message, extract_message(aux, image)))


def bench_method(cfg: RunConfig, method: str, capacity: int, images) -> list[dict]:
    aux = cfg.aux_for(method)
    scenarios = list(BASE_SCENARIOS) + [f"attack:{AttackSpec.parse(s)}" for s in cfg.attacks]
    stats = {s: {"psnr": [], "ssim": [], "ber": []} for s in scenarios}
    net, net_error = None, None
    ckpt = cfg.checkpoints.get(method)
    if ckpt is None:
        net_error = "missing checkpoint"
    else:
        try:
            net, _ = load_checkpoint(ckpt)
        except (OSError, ValueError) as exc:
            net_error = f"unreadable checkpoint: {exc}"
    for k, original in enumerate(images):
        msg = message_for(cfg.seed, k, capacity)
        marked = np.rint(embed_message(aux, original, msg).watermarked)
        _accumulate(stats["non-attack"], original, marked, aux, msg)
        for spec_text in cfg.attacks:
            spec = AttackSpec.parse(spec_text)
            if spec.kind == "na":
                spec = spec.with_seed(spec.seed + k)
            attacked = apply_attack(marked, spec)
            _accumulate(stats[f"attack:{AttackSpec.parse(spec_text)}"], original, attacked, aux, msg)
        if net is None:
            continue
        h, w = original.shape
        attacked = np.rint(untile(attack_blocks(net, tile(marked)), h, w))
        _accumulate(stats["WAN"], original, attacked, aux, msg)
        opposite = np.rint(embed_message(aux, original, 1 - msg).watermarked)
        rt = original - untile(attack_blocks(net, tile(opposite)), h, w)
        r_min, r_max = select_residuals(original - marked, rt)
        _accumulate(stats["AoW-min"], original, np.rint(np.clip(original - r_min, 0, 255)), aux, msg)
        _accumulate(stats["AoW-max"], original, np.rint(np.clip(original - r_max, 0, 255)), aux, msg)
    rows = []
    for s in scenarios:
        if s in ("WAN", "AoW-min", "AoW-max") and net is None:
            rows.append(_row(method, capacity, s, status=net_error))
        elif not images:
            rows.append(_row(method, capacity, s, status="empty corpus"))
        else:
            rows.append(_row(method, capacity, s, stats[s]))
    return rows


def average_rows(rows) -> list[dict]:
    """Arithmetic mean over methods for every (capacity, scenario)."""
    out = []
    keys = []
    for r in rows:
        key = (r["capacity"], r["scenario"])
        if key not in keys:
            keys.append(key)
    for cap, scen in keys:
        ok = [r for r in rows if r["capacity"] == cap and r["scenario"] == scen and r["status"] == "ok"]
        if not ok:
            out.append(_row("Average", cap, scen, status="no methods"))
            continue
        row = _row("Average", cap, scen)
        for k in ("psnr", "ssim", "ber"):
            row[k] = float(np.mean([r[k] for r in ok]))
        row["n"] = int(sum(r["n"] for r in ok))
        out.append(row)
    return out


def run_bench(cfg: RunConfig) -> list[dict]:
    rows = []
    for capacity in cfg.capacities:
        images = corpus_images(cfg, 64 * math.isqrt(int(capacity)))
        for method in cfg.methods:
            log.info("bench %s, %d bit(s), %d images", method, capacity, len(images))
            rows.extend(bench_method(cfg, method, capacity, images))
    return rows + average_rows(rows)


# ---------------------------------------------------------------------------
# report files

def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf"
        return f"{v:.6f}"
    return str(v)


def report_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return _fmt(v)
    if isinstance(v, float):
        return float(_fmt(v))
    return v


def report_json(rows) -> str:
    payload = {"format": REPORT_FORMAT, "columns": list(REPORT_COLUMNS),
               "rows": [{c: _json_value(r[c]) for c in REPORT_COLUMNS} for r in rows]}
    return json.dumps(payload, indent=2) + "\n"


def _parse_value(col, text):
    if col in ("capacity", "n"):
        return int(text)
    if col in ("psnr", "ssim", "ber"):
        return float(text)
    return text


def read_report(path) -> list[dict]:
    """Read a report written as CSV or JSON."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
        if data.get("format") != REPORT_FORMAT:
            raise ValueError(f"{path}: not a benchmark report")
        return [{c: _parse_value(c, str(r[c])) for c in REPORT_COLUMNS} for r in data["rows"]]
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
        raise ValueError(f"{path}: unexpected report columns")
    return [{c: _parse_value(c, r[c]) for c in REPORT_COLUMNS} for r in reader]


def write_report(rows, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "report.csv", out_dir / "report.json"
    csv_path.write_text(report_csv(rows))
    json_path.write_text(report_json(rows))
    return csv_path, json_path


def render_table(rows) -> str:
    """Aligned text table, one line per row."""
    header = ["method", "bits", "scenario", "PSNR", "SSIM", "BER", "n", "status"]
    body = []
    for r in rows:
        body.append([r["method"], str(r["capacity"]), r["scenario"],
                     _short(r["psnr"], 2), _short(r["ssim"], 3), _short(r["ber"], 3),
                     str(r["n"]), r["status"]])
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(x.ljust(w) for x, w in zip(line, widths)).rstrip() for line in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _short(v, digits):
    if math.isnan(v):
        return "-"
    if math.isinf(v):
        return "inf"
    return f"{v:.{digits}f}"


def report_figure(rows, capacity: int, metric: str):
    """Bar chart of one metric for one capacity: scenarios on the x axis and
    one bar per method.  Bar heights are the report values themselves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    label = {"psnr": "PSNR (dB)", "ssim": "SSIM", "ber": "BER"}[metric]
    sub = [r for r in rows if r["capacity"] == capacity]
    scenarios = list(dict.fromkeys(r["scenario"] for r in sub))
    methods = list(dict.fromkeys(r["method"] for r in sub))
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * max(len(scenarios), 1), 3.6))
    width = 0.8 / max(len(methods), 1)
    x = np.arange(len(scenarios))
    for i, m in enumerate(methods):
        vals = []
        for s in scenarios:
            match = [r[metric] for r in sub if r["method"] == m and r["scenario"] == s]
            vals.append(match[0] if match else math.nan)
        ax.bar(x + (i - (len(methods) - 1) / 2) * width, vals, width, label=m)
    ax.set_xticks(x)
    ax.set_xticklabels(scenarios, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(label)
    ax.set_title(f"{label.split()[0]}, {capacity} bit(s) per image")
    if metric in ("ber", "ssim"):
        ax.set_ylim(0, 1)
    if methods:
        ax.legend(fontsize=7, ncol=min(len(methods), 5))
    fig.tight_layout()
    return fig


def plot_report(rows, out_dir, metrics=("psnr", "ber")) -> list[Path]:
    """Write one PNG per (capacity, metric); returns the files written."""
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for cap in sorted({r["capacity"] for r in rows}):
        for metric in metrics:
            fig = report_figure(rows, cap, metric)
            path = out_dir / f"{metric}_{cap}bit.png"
            fig.savefig(path, dpi=110)
            plt.close(fig)
            written.append(path)
    return written
