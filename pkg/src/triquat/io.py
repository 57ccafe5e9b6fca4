"""Map-field file I/O: textual and binary grid files plus a JSON sidecar.

Textual files (.txt/.dat) carry a one-line JSON header with (m, n, lo, hi,
res) followed by row-major node values, one node per line.  Binary files
(.npz) carry the same header fields as arrays.  Saving writes a
"<file>.provenance.json" sidecar describing where the data came from.
"""

from __future__ import annotations

import getpass
import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .fields import GridSpec, MapField

_TEXT_SUFFIXES = {".txt", ".dat"}


def _header(u: MapField) -> dict:
    g = u.grid
    return {"m": g.m, "n": u.n, "lo": list(g.lo), "hi": list(g.hi), "res": list(g.res)}


def save_map_field(path, u: MapField, provenance: str = "") -> Path:
    """Write a map field; the format follows the file suffix."""
    path = Path(path)
    header = _header(u)
    flat = u.values.reshape(-1, u.target_dim)
    if path.suffix in _TEXT_SUFFIXES:
        with open(path, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            np.savetxt(fh, flat, fmt="%.17g")
    elif path.suffix == ".npz":
        np.savez_compressed(path, values=u.values,
                            **{k: np.asarray(v) for k, v in header.items()})
    else:
        raise ConfigError(f"unknown map file suffix '{path.suffix}' (use .txt, .dat, .npz)")
    sidecar = {
        "file": path.name,
        "written_by": f"triquat {__version__}",
        "user": getpass.getuser(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "provenance": provenance,
        "header": header,
    }
    Path(str(path) + ".provenance.json").write_text(json.dumps(sidecar, indent=2))
    return path


def load_map_field(path) -> MapField:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"map file not found: {path}")
    if path.suffix in _TEXT_SUFFIXES:
        with open(path) as fh:
            first = fh.readline()
            try:
                header = json.loads(first)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad map file header: {exc}") from exc
            flat = np.loadtxt(fh, ndmin=2)
    elif path.suffix == ".npz":
        with np.load(path) as data:
            try:
                header = {"m": int(data["m"]), "n": int(data["n"]),
                          "lo": data["lo"].tolist(), "hi": data["hi"].tolist(),
                          "res": data["res"].tolist()}
            except KeyError as exc:
                raise ConfigError(f"map file missing header field {exc}") from exc
            values = data["values"]
        grid = GridSpec(header["m"], tuple(header["lo"]), tuple(header["hi"]),
                        tuple(header["res"]))
        return MapField(grid, header["n"], values)
    else:
        raise ConfigError(f"unknown map file suffix '{path.suffix}'")
    for key in ("m", "n", "lo", "hi", "res"):
        if key not in header:
            raise ConfigError(f"map file header lacks '{key}'")
    grid = GridSpec(int(header["m"]), tuple(header["lo"]), tuple(header["hi"]),
                    tuple(header["res"]))
    values = flat.reshape(grid.res + (4 * int(header["n"]),))
    return MapField(grid, int(header["n"]), values)
