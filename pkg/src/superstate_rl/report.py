"""Run manifests, CSV output and optional matplotlib figures."""
from __future__ import annotations

import datetime as _dt
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import __version__

TIMESTAMP_KEY = "timestamp"


@dataclass
class RunManifest:
    """Provenance header written at the top of every output file.

    Every line is ``# key: value``.  Only the timestamp line changes between
    reruns with the same command, seed and configuration.
    """

    command: str
    seed: Optional[int]
    model_hash: Optional[str]
    config: dict
    version: str = __version__
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))

    def header(self) -> str:
        cfg = json.dumps(self.config, sort_keys=True, separators=(",", ":"), default=_jsonable)
        lines = [
            f"# command: {self.command}",
            f"# seed: {self.seed if self.seed is not None else '-'}",
            f"# model_hash: {self.model_hash or '-'}",
            f"# config: {cfg}",
            f"# version: {self.version}",
            f"# {TIMESTAMP_KEY}: {self.timestamp}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "RunManifest":
        vals = {}
        for line in text.splitlines():
            if not line.startswith("# "):
                break
            key, _, value = line[2:].partition(": ")
            vals[key] = value
        seed = vals.get("seed", "-")
        return cls(
            command=vals.get("command", ""),
            seed=None if seed == "-" else int(seed),
            model_hash=None if vals.get("model_hash", "-") == "-" else vals["model_hash"],
            config=json.loads(vals.get("config", "{}")),
            version=vals.get("version", ""),
            timestamp=vals.get(TIMESTAMP_KEY, ""),
        )


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    return str(obj)


def fmt(x) -> str:
    """Shortest round-trip text for numbers; booleans as ``true``/``false``."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(float(x))
    if hasattr(x, "item"):
        return fmt(x.item())
    return str(x)


def render_csv(manifest: Optional[RunManifest], header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    if manifest is not None:
        buf.write(manifest.header())
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def strip_timestamp(text: str) -> str:
    """Drop the manifest's timestamp line, for byte comparisons of reruns."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith(f"# {TIMESTAMP_KEY}:"))


# ---------------------------------------------------------------------------
# figures


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # no software/date metadata so reruns give identical files
    meta = {"Software": None} if str(path).endswith(".png") else {"Creator": None, "CreationDate": None}
    if str(path).endswith(".svg"):
        meta = {"Date": None, "Creator": None}
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=meta)


def plot_lines(path, series: dict, xlabel: str, ylabel: str, title: str = "") -> None:
    """One line per ``label -> (x, y)`` entry."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for label, (x, y) in series.items():
        ax.plot(x, y, label=str(label), lw=1.6)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    if len(series) > 1:
        ax.legend(frameon=False)
    _save(fig, path)
    plt.close(fig)
