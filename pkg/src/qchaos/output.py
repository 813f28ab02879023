"""Artifact writers and readers.

Every artifact embeds the fully resolved configuration and the package
version so a run is auditable from its outputs alone.  Trajectory streams
are NDJSON with a header line; field snapshots are raw row-major
little-endian float64 with a JSON sidecar describing the grid; summaries
and criterion reports are plain JSON.  Writers are deterministic byte for
byte given identical inputs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .model import PhaseSpaceField, PhaseSpaceGrid, SpatialGrid

__all__ = [
    "NdjsonWriter",
    "read_ndjson",
    "write_field",
    "read_field",
    "write_json",
    "write_strobe_csv",
    "read_strobe_csv",
    "write_plot_script",
]


def _header(config: dict, version: str, **extra) -> dict:
    h = {"kind": "header", "version": version, "config": config}
    h.update(extra)
    return h


class NdjsonWriter:
    """Line-per-record JSON stream; the first line is a header carrying the
    resolved config and version."""

    def __init__(self, path: str, config: dict, version: str, **extra):
        self.path = path
        self._fh = open(path, "w")
        self._fh.write(json.dumps(_header(config, version, **extra),
                                  sort_keys=True) + "\n")
        self.rows = 0

    def write(self, row: dict) -> None:
        self._fh.write(json.dumps(row, sort_keys=True) + "\n")
        self.rows += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "NdjsonWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_ndjson(path: str) -> tuple[dict, list[dict]]:
    """Returns (header, data rows)."""
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise ValueError(f"{path} lacks an NDJSON header line")
    return lines[0], lines[1:]


def write_field(out_dir: str, label: str, field: PhaseSpaceField,
                config: dict, version: str, **extra) -> str:
    """field-<label>.bin (row-major little-endian float64) plus
    field-<label>.meta.json; returns the .bin path."""
    bin_path = os.path.join(out_dir, f"field-{label}.bin")
    values = np.ascontiguousarray(field.values, dtype="<f8")
    values.tofile(bin_path)
    g = field.grid
    meta = _header(config, version, **extra)
    meta.update({
        "kind": "field-meta",
        "label": label,
        "dtype": "<f8",
        "order": "C",
        "shape": [g.spatial.n, g.n_p],
        "t": field.t,
        "x_min": g.spatial.x_min, "x_max": g.spatial.x_max,
        "n": g.spatial.n, "hbar": g.spatial.hbar,
        "p_min": g.p_min, "p_max": g.p_max, "n_p": g.n_p,
    })
    with open(os.path.join(out_dir, f"field-{label}.meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return bin_path


def read_field(out_dir: str, label: str) -> tuple[PhaseSpaceField, dict]:
    with open(os.path.join(out_dir, f"field-{label}.meta.json")) as fh:
        meta = json.load(fh)
    values = np.fromfile(os.path.join(out_dir, f"field-{label}.bin"),
                         dtype="<f8").reshape(meta["shape"])
    spatial = SpatialGrid(meta["x_min"], meta["x_max"], meta["n"],
                          meta["hbar"])
    grid = PhaseSpaceGrid(spatial, meta["p_min"], meta["p_max"], meta["n_p"])
    return PhaseSpaceField(grid, values, meta["t"]), meta


def write_json(path: str, payload: dict, config: dict, version: str) -> None:
    doc = dict(payload)
    doc["config"] = config
    doc["version"] = version
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_strobe_csv(path: str, points: np.ndarray,
                     period_index: np.ndarray,
                     member: np.ndarray) -> None:
    """Rows (realization, period_index, x, p); points has shape (n, 2)."""
    with open(path, "w") as fh:
        fh.write("realization,period_index,x,p\n")
        for m, j, (x, p) in zip(member, period_index, points):
            fh.write(f"{int(m)},{int(j)},{float(x)!r},{float(p)!r}\n")


def read_strobe_csv(path: str) -> np.ndarray:
    """Return the (x, p) columns of a strobe map file."""
    return np.loadtxt(path, delimiter=",", skiprows=1, usecols=(2, 3),
                      ndmin=2)


_PLOT_SCRIPT = '''\
#!/usr/bin/env python3
"""Render the artifacts in this directory (optional; nothing in the
pipeline depends on images).  Requires matplotlib."""
import glob
import json
import os.path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

here = os.path.dirname(os.path.abspath(__file__))

for meta_path in sorted(glob.glob(os.path.join(here, "field-*.meta.json"))):
    meta = json.load(open(meta_path))
    label = meta["label"]
    vals = np.fromfile(os.path.join(here, f"field-{label}.bin"),
                       dtype=meta["dtype"]).reshape(meta["shape"])
    fig, ax = plt.subplots()
    im = ax.imshow(vals.T, origin="lower", aspect="auto",
                   extent=[meta["x_min"], meta["x_max"],
                           meta["p_min"], meta["p_max"]])
    fig.colorbar(im, ax=ax)
    ax.set(xlabel="x", ylabel="p", title=label)
    fig.savefig(os.path.join(here, f"field-{label}.png"), dpi=150)
    plt.close(fig)

for nd_path in sorted(glob.glob(os.path.join(here, "trajectory-*.ndjson"))):
    rows = [json.loads(l) for l in open(nd_path) if l.strip()]
    rows = [r for r in rows if r.get("kind") != "header"]
    if not rows or "t" not in rows[0]:
        continue
    keys = [k for k in rows[0] if k not in ("t", "i", "kind")]
    fig, ax = plt.subplots()
    t = [r["t"] for r in rows]
    for key in keys:
        ax.plot(t, [r.get(key) for r in rows], label=key, lw=0.7)
    ax.set(xlabel="t", title=os.path.basename(nd_path))
    ax.legend(fontsize=6)
    stem = os.path.splitext(os.path.basename(nd_path))[0]
    fig.savefig(os.path.join(here, stem + ".png"), dpi=150)
    plt.close(fig)

csv_path = os.path.join(here, "strobe.csv")
if os.path.exists(csv_path):
    pts = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    fig, ax = plt.subplots()
    ax.plot(pts[:, 1], pts[:, 2], ".", ms=1)
    ax.set(xlabel="x", ylabel="p", title="stroboscopic map")
    fig.savefig(os.path.join(here, "strobe.png"), dpi=150)
    plt.close(fig)

print("plots written next to the artifacts")
'''


def write_plot_script(out_dir: str) -> str:
    path = os.path.join(out_dir, "plot.py")
    with open(path, "w") as fh:
        fh.write(_PLOT_SCRIPT)
    os.chmod(path, 0o755)
    return path
