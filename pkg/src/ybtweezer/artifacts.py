"""Deterministic, atomically written output files.

Every artifact carries the schema version, the configuration hash and the
seed. Nothing time-dependent is written, so identical inputs give identical
bytes.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np
from contourpy import contour_generator

from . import SCHEMA_VERSION


def stamp(config_hash: str, seed: int) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config_hash": config_hash, "seed": int(seed)}


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(x) -> str:
    """Shortest round-tripping text for a number; nan stays 'nan'."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) else ("inf" if x == math.inf else "-inf" if x == -math.inf else x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, payload: dict, meta: dict) -> Path:
    body = {**meta, **_clean(payload)}
    return atomic_write(path, json.dumps(body, sort_keys=True, indent=2, allow_nan=False) + "\n")


def write_csv(path, header: list[str], rows, meta: dict) -> Path:
    lines = [f"# {k}={meta[k]}" for k in sorted(meta)]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return atomic_write(path, "\n".join(lines) + "\n")


def read_csv(path) -> tuple[dict, list[str], np.ndarray]:
    meta, rows, header = {}, [], None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                k, _, v = line[2:].partition("=")
                meta[k] = v
            elif header is None:
                header = line.split(",")
            elif line:
                rows.append([float(x) for x in line.split(",")])
    return meta, header, np.array(rows)


def contour_lines(x, y, z, levels) -> dict:
    """Iso-lines of z (rows along y, columns along x) as lists of (x, y) points."""
    z = np.ma.masked_invalid(np.asarray(z, dtype=float))
    gen = contour_generator(np.asarray(x, dtype=float), np.asarray(y, dtype=float), z)
    out = {}
    for lev in levels:
        out[fmt(lev)] = [seg.tolist() for seg in gen.lines(float(lev))]
    return out


def _color(t: float) -> str:
    # dark blue -> teal -> yellow
    stops = [(0.0, (20, 30, 90)), (0.5, (30, 150, 140)), (1.0, (250, 230, 60))]
    t = min(max(t, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(stops, stops[1:]):
        if t <= t1:
            f = (t - t0) / (t1 - t0)
            return "#%02x%02x%02x" % tuple(int(round(a + f * (b - a))) for a, b in zip(c0, c1))
    return "#%02x%02x%02x" % stops[-1][1]


def heatmap_svg(x, y, z, meta: dict, title: str, xlabel: str, ylabel: str, contours: dict | None = None, mark=None) -> str:
    """Minimal SVG heat map with optional contour polylines and a marked cell."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    w, h, pad = 480, 360, 60
    zmin, zmax = np.nanmin(z), np.nanmax(z)
    span = zmax - zmin if zmax > zmin else 1.0

    def px(v, lo, hi, size):
        return size * (v - lo) / (hi - lo) if hi > lo else size / 2

    dx = (x[-1] - x[0]) / max(len(x) - 1, 1) if len(x) > 1 else 1.0
    dy = (y[-1] - y[0]) / max(len(y) - 1, 1) if len(y) > 1 else 1.0
    x0, x1 = x[0] - dx / 2, x[-1] + dx / 2
    y0, y1 = y[0] - dy / 2, y[-1] + dy / 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 2 * pad}" height="{h + 2 * pad}" viewBox="0 0 {w + 2 * pad} {h + 2 * pad}">',
        f"<!-- {json.dumps(meta, sort_keys=True)} -->",
        f'<text x="{pad}" y="{pad / 2}" font-size="14">{title}</text>',
        f'<g transform="translate({pad},{pad})">',
    ]
    cw = w / len(x)
    ch = h / len(y)
    for i in range(len(y)):
        for j in range(len(x)):
            v = z[i, j]
            fill = "#cccccc" if math.isnan(v) else _color((v - zmin) / span)
            parts.append(f'<rect x="{j * cw:.3f}" y="{h - (i + 1) * ch:.3f}" width="{cw:.3f}" height="{ch:.3f}" fill="{fill}"/>')
    for lev, segs in (contours or {}).items():
        for seg in segs:
            pts = " ".join(f"{px(a, x0, x1, w):.3f},{h - px(b, y0, y1, h):.3f}" for a, b in seg)
            parts.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1.5"><title>{lev}</title></polyline>')
    if mark is not None:
        i, j = mark
        parts.append(f'<circle cx="{(j + 0.5) * cw:.3f}" cy="{h - (i + 0.5) * ch:.3f}" r="4" fill="black"/>')
    parts.append("</g>")
    parts.append(f'<text x="{pad + w / 2}" y="{h + 1.6 * pad}" font-size="12" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="{pad / 3}" y="{pad + h / 2}" font-size="12" transform="rotate(-90 {pad / 3} {pad + h / 2})" text-anchor="middle">{ylabel}</text>')
    parts.append(f'<text x="{pad}" y="{h + 1.6 * pad}" font-size="11">{fmt(float(x[0]))}</text>')
    parts.append(f'<text x="{pad + w}" y="{h + 1.6 * pad}" font-size="11" text-anchor="end">{fmt(float(x[-1]))}</text>')
    parts.append(f'<text x="{pad - 4}" y="{pad + h}" font-size="11" text-anchor="end">{fmt(float(y[0]))}</text>')
    parts.append(f'<text x="{pad - 4}" y="{pad + 10}" font-size="11" text-anchor="end">{fmt(float(y[-1]))}</text>')
    parts.append(f'<text x="{pad + w + 4}" y="{pad + h}" font-size="11">min {zmin:.4g} / max {zmax:.4g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_raw_stack(path, array: np.ndarray, meta: dict, extra: dict | None = None) -> Path:
    """Little-endian float64 dump with a JSON sidecar next to it."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    atomic_write(path, arr.tobytes())
    side = {"shape": list(arr.shape), "dtype": "float64", "byte_order": "little", "order": "row-major", **(extra or {})}
    write_json(str(path) + ".json", side, meta)
    return Path(path)


def read_raw_stack(path) -> tuple[np.ndarray, dict]:
    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    return np.fromfile(path, dtype="<f8").reshape(side["shape"]), side
