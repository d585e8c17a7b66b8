"""Deterministic CSV/JSON writers, state files and plot-script emission.

Floats are written with 17 significant digits, keys in sorted order, rows in
the order given.  Every CSV starts with ``#`` comment lines carrying the
config hash; JSON documents carry it under the ``config_hash`` key.
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .geometry import Mesh, _radial_mesh, _tri_mesh
from .newton import PlasmaConfig, make_state

__all__ = [
    "fmt",
    "dumps",
    "config_hash",
    "write_csv",
    "write_json",
    "save_state",
    "load_state",
    "plot_script",
]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _json(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_json(obj[k], indent, level + 1)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        return "[\n" + ",\n".join(pad + _json(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            t = "%.17g" % x
            return t if any(c in t for c in ".en") else t + ".0"   # stay a float on reload
        return json.dumps(str(x))       # JSON has no NaN/inf literals
    return json.dumps(str(obj), ensure_ascii=False)


def dumps(obj, indent: int = 2) -> str:
    return _json(obj, indent, 0) + "\n"


def config_hash(config_dict: dict) -> str:
    canon = json.dumps(config_dict, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_csv(path, columns, rows, chash: str, comments=()) -> Path:
    path = Path(path)
    lines = [f"# config_hash: {chash}"] + [f"# {c}" for c in comments]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path, obj: dict, chash: str) -> Path:
    path = Path(path)
    doc = dict(obj)
    doc["config_hash"] = chash
    path.write_text(dumps(doc))
    return path


def save_state(path, state) -> None:
    """Write a solved state together with its mesh to a ``.npz`` file."""
    m = state.mesh
    np.savez(path, kind=m.kind, dim=m.dim, nodes=m.nodes, cells=m.cells, boundary=m.boundary,
             lam=state.lam, alpha=state.alpha, psi=state.psi.values, p=state.config.p,
             newton_tol=state.config.newton_tol)


def load_state(path):
    with np.load(path, allow_pickle=False) as z:
        kind, dim = str(z["kind"]), int(z["dim"])
        if kind == "radial":
            mesh: Mesh = _radial_mesh(z["nodes"][:, 0], dim)
        else:
            mesh = _tri_mesh(z["nodes"], z["cells"], z["boundary"])
        cfg = PlasmaConfig(p=float(z["p"]), N=dim, newton_tol=float(z["newton_tol"]))
        return make_state(mesh, cfg, float(z["lam"]), float(z["alpha"]), z["psi"].copy())


def plot_script(csv_name: str, x: str, ys, chash: str, title: str = "") -> str:
    """Source of a small matplotlib script plotting columns of ``csv_name``."""
    ys = list(ys)
    return (
        f"# config_hash: {chash}\n"
        "# generated plotting helper; needs numpy and matplotlib\n"
        "import numpy as np\n"
        "import matplotlib.pyplot as plt\n\n"
        f"data = np.genfromtxt({csv_name!r}, delimiter=',', names=True, comments='#')\n"
        f"fig, axes = plt.subplots(1, {len(ys)}, figsize=({4 * len(ys)}, 3.5))\n"
        f"axes = np.atleast_1d(axes)\n"
        f"for ax, col in zip(axes, {ys!r}):\n"
        f"    ax.plot(data[{x!r}], data[col], '.-')\n"
        f"    ax.set_xlabel({x!r})\n"
        "    ax.set_ylabel(col)\n"
        f"fig.suptitle({title!r})\n"
        "fig.tight_layout()\n"
        f"fig.savefig({csv_name.rsplit('.', 1)[0] + '.png'!r}, dpi=120)\n"
    )
