"""File formats: parameters as JSON, observations as CSV."""
import csv
import json

import numpy as np

from .errors import NonFiniteError
from .model import NetworkParams, Observations


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def params_to_dict(params):
    return {
        "n": params.n,
        "A": params.A.tolist(),
        "u": params.u.tolist(),
        "l": params.l.tolist(),
        "d": params.d.tolist(),
        "c": params.c.tolist(),
        "sigma": params.sigma,
    }


def params_from_dict(obj):
    missing = [k for k in ("n", "A", "u", "l", "d", "c") if k not in obj]
    if missing:
        raise FormatError(f"params file is missing field(s): {', '.join(missing)}")
    n = obj["n"]
    A = np.asarray(obj["A"], dtype=float)
    if A.shape != (n, n):
        raise FormatError(f"field A has shape {A.shape}, expected ({n}, {n})")
    for key in ("u", "l", "d", "c"):
        if len(obj[key]) != n:
            raise FormatError(f"field {key} has length {len(obj[key])}, expected {n}")
    try:
        return NetworkParams(A=A, u=obj["u"], l=obj["l"], d=obj["d"], c=obj["c"],
                             sigma=obj.get("sigma", 0.0))
    except (ValueError, NonFiniteError) as exc:
        raise FormatError(f"invalid params: {exc}") from exc


def write_params(path, params):
    # json writes floats with repr, which round-trips exactly
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh, indent=1)
        fh.write("\n")


def read_params(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    return params_from_dict(obj)


def write_observations(path, obs):
    """CSV with header ``t,x1,...,xn`` and 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(obs.n)])
        for t, row in zip(obs.times, obs.states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def read_observations(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0].strip() != "t":
        raise FormatError(f"{path}: header must start with 't'")
    n = len(header) - 1
    data = np.empty((len(rows) - 1, n + 1))
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != n + 1:
            raise FormatError(f"{path}: row {k} has {len(row)} fields, expected {n + 1}")
        try:
            data[k - 2] = [float(v) for v in row]
        except ValueError:
            raise FormatError(f"{path}: row {k} contains a non-numeric value") from None
    try:
        return Observations(data[:, 0], data[:, 1:])
    except (ValueError, NonFiniteError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_table(path, header, rows, footer=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
        if footer:
            for line in footer:
                fh.write(f"# {line}\n")
