"""Report assembly and byte-stable emission of report.json, CSV tables and the manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np

PACKAGE = "latentreuse"


def load_schema(name: str) -> dict:
    return json.loads(resources.files(PACKAGE).joinpath("schemas", name).read_text())


# --------------------------------------------------------------------------
# quantities and tables


def analytic(value):
    return {"value": _num(value), "provenance": "analytic"}


def mc(value, stderr):
    return {"value": _num(value), "stderr": _num(stderr), "provenance": "mc"}


def given(value):
    return {"value": _num(value), "provenance": "input"}


def from_estimate(est):
    """A RiskEstimate as an ``mc`` quantity."""
    return mc(est.value, est.stderr)


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


class Table:
    """Column-typed table; MC columns get a companion ``<name>_se`` column."""

    def __init__(self, columns):
        self.columns = []
        for name, prov in columns:
            self.columns.append({"name": name, "provenance": prov})
            if prov == "mc":
                self.columns.append({"name": f"{name}_se", "provenance": "mc_se"})
        self.rows = []

    def add(self, **values):
        row = []
        for col in self.columns:
            name = col["name"]
            if col["provenance"] == "mc_se":
                continue
            v = values.get(name)
            if col["provenance"] == "mc":
                est = v if v is not None else (None, None)
                if hasattr(est, "stderr"):
                    est = (est.value, est.stderr)
                row += [_cell(est[0]), _cell(est[1])]
            else:
                row.append(_cell(v))
        self.rows.append(row)

    def to_dict(self):
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


def _cell(v):
    if v is None or isinstance(v, (str, bool)):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    return _num(v)


# --------------------------------------------------------------------------
# canonical serialization


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == int(x) and abs(x) < 1e16:
        return repr(float(x))
    return format(x, ".17g")


def canonical_json(obj, indent: int = 2) -> str:
    """Sorted keys, 17-significant-digit floats, non-finite floats as null."""
    out = io.StringIO()

    def emit(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, dict):
            if not o:
                out.write("{}")
                return
            out.write("{\n")
            keys = sorted(o)
            for i, k in enumerate(keys):
                out.write(pad + json.dumps(str(k)) + ": ")
                emit(o[k], level + 1)
                out.write(",\n" if i < len(keys) - 1 else "\n")
            out.write(end + "}")
        elif isinstance(o, (list, tuple, np.ndarray)):
            seq = list(o)
            if not seq:
                out.write("[]")
                return
            out.write("[\n")
            for i, v in enumerate(seq):
                out.write(pad)
                emit(v, level + 1)
                out.write(",\n" if i < len(seq) - 1 else "\n")
            out.write(end + "]")
        elif o is None:
            out.write("null")
        elif isinstance(o, (bool, np.bool_)):
            out.write("true" if o else "false")
        elif isinstance(o, (int, np.integer)):
            out.write(str(int(o)))
        elif isinstance(o, (float, np.floating)):
            out.write(_fmt_float(float(o)))
        elif isinstance(o, str):
            out.write(json.dumps(o))
        else:
            raise TypeError(f"cannot serialize {type(o).__name__}")

    emit(obj, 0)
    out.write("\n")
    return out.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _fmt_float(v) if math.isfinite(v) else ""
    return str(v)


def table_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow([c["name"] for c in table["columns"]])
    for row in table["rows"]:
        w.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# writing


def validate_report(report: dict):
    jsonschema.validate(report, load_schema("report.schema.json"))


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {
        "package": pkg,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": metadata.version("scipy"),
    }


def write_report(report: dict | None, out_dir, extra_files: dict | None = None) -> list:
    """Write report.json, one CSV per table and manifest.json; return the paths.

    ``extra_files`` maps relative paths to text (e.g. sample CSVs).  An empty
    report yields the manifest alone.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if report:
        validate_report(report)
        text = canonical_json(report)
        (out / "report.json").write_text(text, newline="\n")
        files["report.json"] = text
        tables = report.get("tables", {})
        if tables:
            (out / "tables").mkdir(exist_ok=True)
        for name in sorted(tables):
            body = table_csv(tables[name])
            with open(out / "tables" / f"{name}.csv", "w", newline="") as fh:
                fh.write(body)
            files[f"tables/{name}.csv"] = body
    for rel, body in sorted((extra_files or {}).items()):
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(body)
        files[rel] = body
    manifest = {
        "preset": (report or {}).get("preset"),
        "seed": (report or {}).get("seed"),
        "versions": _versions(),
        "files": {k: hashlib.sha256(v.encode()).hexdigest() for k, v in sorted(files.items())},
    }
    (out / "manifest.json").write_text(canonical_json(manifest), newline="\n")
    return [out / k for k in sorted(files)] + [out / "manifest.json"]
