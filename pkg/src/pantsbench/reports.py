"""Report assembly, deterministic serialization and small SVG plots."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

SCHEMA_VERSION = "1.0"
OUT_ENV = "PANTSBENCH_OUT"


def code_version() -> str:
    """Short content hash of the package sources."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def output_dir(default: str) -> Path:
    d = Path(os.environ.get(OUT_ENV) or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        # JSON has no inf/nan
        return x if math.isfinite(x) else str(x)
    if hasattr(x, "value") and hasattr(x, "name"):
        return x.value
    return x


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def make_report(command: str, config: dict, checks: dict, measured: Optional[dict] = None,
                result=None) -> dict:
    """Stable report layout; ``passed`` is the conjunction of ``checks``."""
    return {
        "schema_version": SCHEMA_VERSION,
        "code_version": code_version(),
        "command": command,
        "config": config,
        "checks": {k: bool(v) for k, v in checks.items()},
        "passed": all(bool(v) for v in checks.values()),
        "measured": measured or {},
        "result": result,
    }


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def write_jsonl(path: Path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.write_text("".join(json.dumps(_plain(r), sort_keys=True) + "\n" for r in records))
    return path


def read_jsonl(path: Path) -> list:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    Path(path).write_text(buf.getvalue())
    return Path(path)


# ---------------------------------------------------------------------------
# SVG

def _svg(width: int, height: int, body: Sequence[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def _colour(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    r = int(255 * t)
    b = int(255 * (1 - t))
    return f"#{r:02x}40{b:02x}"


def _fiber_angles(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Longitude and latitude of fibre vectors, the last coordinate as the pole."""
    w = np.atleast_2d(w)
    if w.shape[1] == 1:
        return np.zeros(len(w)), np.arcsin(np.clip(w[:, 0], -1, 1))
    lon = np.arctan2(w[:, 1], w[:, 0])
    if w.shape[1] == 2:
        return lon, np.zeros(len(w))
    return lon, np.arcsin(np.clip(w[:, -1], -1, 1))


def fiber_scatter_svg(s: np.ndarray, w: np.ndarray, L: float, highlight: Optional[Sequence[int]] = None,
                      title: str = "") -> str:
    """Feet drawn as (longitude, latitude) of the fibre vector, and as (s, latitude)."""
    W, H, pad = 720, 320, 20
    lon, lat = _fiber_angles(np.asarray(w))
    hl = set(highlight or [])
    body = [f'<text x="{pad}" y="14" font-size="12">{title}</text>',
            f'<rect x="{pad}" y="{pad}" width="320" height="280" fill="none" stroke="black"/>',
            f'<rect x="{pad + 360}" y="{pad}" width="320" height="280" fill="none" stroke="black"/>']
    for i in range(len(lon)):
        x1 = pad + 160 + lon[i] / math.pi * 160
        y = pad + 140 - lat[i] / (math.pi / 2) * 140
        x2 = pad + 360 + float(s[i]) / L * 320
        c = "red" if i in hl else "black"
        body.append(f'<circle cx="{x1:.2f}" cy="{y:.2f}" r="2" fill="{c}"/>')
        body.append(f'<circle cx="{x2:.2f}" cy="{y:.2f}" r="2" fill="{c}"/>')
    return _svg(W, H, body)


def heatmap_svg(centers: np.ndarray, values: np.ndarray, title: str = "") -> str:
    """Cell values of one fibre drawn at their (longitude, latitude) centres."""
    W, H, pad = 400, 240, 20
    lon, lat = _fiber_angles(np.asarray(centers))
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    body = [f'<text x="{pad}" y="14" font-size="12">{title} min={lo:.4g} max={hi:.4g}</text>']
    for i in range(len(v)):
        x = pad + 180 + lon[i] / math.pi * 180
        y = pad + 100 - lat[i] / (math.pi / 2) * 100
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="9" fill="{_colour((v[i] - lo) / span)}"/>')
    return _svg(W, H, body)


def disc_svg(points: dict, segments: Sequence[tuple[str, str]] = (), title: str = "") -> str:
    """Hyperboloid points drawn in the Poincare disc of the first two spatial axes."""
    W = H = 360
    c, r0 = W / 2, W / 2 - 20
    body = [f'<text x="10" y="14" font-size="12">{title}</text>',
            f'<circle cx="{c}" cy="{c}" r="{r0}" fill="none" stroke="black"/>']
    xy = {}
    for name, p in points.items():
        p = np.asarray(p, dtype=float)
        x, y = p[1] / (1 + p[0]), p[2] / (1 + p[0]) if len(p) > 2 else 0.0
        xy[name] = (c + r0 * x, c - r0 * y)
    for a, b in segments:
        (x1, y1), (x2, y2) = xy[a], xy[b]
        body.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="gray"/>')
    for name, (x, y) in xy.items():
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="black"/>')
        body.append(f'<text x="{x + 4:.2f}" y="{y - 4:.2f}" font-size="10">{name}</text>')
    return _svg(W, H, body)
