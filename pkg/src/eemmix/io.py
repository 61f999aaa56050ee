"""File formats: EEM CSV grids, the dataset manifest, and output tables.

EEM CSV layout::

    em\\ex,240.0,245.0,...
    300.0,0.12,0.31,...
    302.0,0.11,,...

The first row holds ascending excitation wavelengths, the first column
ascending emission wavelengths. Blank body cells are masked-out pixels.
Lines starting with ``#`` before the header are comments.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .core import (
    EemGrid,
    MixtureDesign,
    ReplicateSet,
    ValidationError,
    WavelengthAxis,
    build_mask,
    parse_mask_rule,
)

log = logging.getLogger(__name__)

CORNER = "em\\ex"

DEFAULT_OPTIONS = {
    "mask_rule": "strictly_longer",
    "floor": 1e-6,
    "alpha": 0.05,
    "bins": 50,
    "seed": 0,
    "dof": "model",
}


def fmt(x) -> str:
    """Shortest round-trip text for a number; booleans and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(x)
    if x is None:
        return ""
    return str(x)


def header_line(options: dict) -> str:
    return f"# eemmix {__version__} " + json.dumps(options, sort_keys=True)


# -- EEM CSV -----------------------------------------------------------------

def _read_rows(path: Path) -> list[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    rows = []
    started = False
    for lineno, line in enumerate(lines, start=1):
        if not started and (line.startswith("#") or not line.strip()):
            continue
        started = True
        if not line.strip():
            continue
        rows.append((lineno, next(csv.reader([line]))))
    return rows


def _number(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{where}: non-numeric cell {text!r}") from None


def parse_eem_csv(path) -> EemGrid:
    """Read one EEM grid; blank cells become masked-out pixels."""
    path = Path(path)
    rows = _read_rows(path)
    if len(rows) < 2:
        raise ValidationError(f"{path}: needs a header row and at least one emission row")
    lineno, header = rows[0]
    if header[0].strip() != CORNER:
        raise ValidationError(f"{path}:{lineno}: first cell must be {CORNER!r}")
    ex = [_number(c, f"{path}:{lineno}:{k + 2}") for k, c in enumerate(header[1:])]
    width = len(header)
    em = []
    body = np.full((len(rows) - 1, len(ex)), np.nan)
    mask = np.zeros(body.shape, dtype=bool)
    for r, (lineno, row) in enumerate(rows[1:]):
        if len(row) != width:
            raise ValidationError(
                f"{path}:{lineno}: ragged row with {len(row)} cells, expected {width}")
        em.append(_number(row[0], f"{path}:{lineno}:1"))
        for c, cell in enumerate(row[1:]):
            if cell.strip():
                body[r, c] = _number(cell, f"{path}:{lineno}:{c + 2}")
                mask[r, c] = np.isfinite(body[r, c])
    try:
        ex_axis = WavelengthAxis.from_values(ex)
        em_axis = WavelengthAxis.from_values(em)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return EemGrid(ex_axis, em_axis, body, mask)


def write_eem_csv(grid: EemGrid, path, comment: str | None = None,
                  values: np.ndarray | None = None) -> None:
    """Write ``grid`` (or ``values`` on its layout) with masked pixels blank."""
    values = grid.intensities if values is None else np.asarray(values)
    buf = io.StringIO()
    if comment:
        buf.write(comment + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([CORNER] + [fmt(float(x)) for x in grid.excitation.values])
    for r, em in enumerate(grid.emission.values):
        w.writerow([fmt(float(em))] + [fmt(values[r, c]) if grid.mask[r, c] else ""
                                       for c in range(grid.excitation.count)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# -- manifest ----------------------------------------------------------------

@dataclass
class Manifest:
    """Declarative description of a dataset of replicate EEM files.

    JSON layout::

        {"dataset": "study",
         "options": {"mask_rule": "strictly_longer", "floor": 1e-06, ...},
         "samples": [{"id": "s1", "role": "endmember"},
                     {"id": "m1", "role": "mixture", "weights": [0.0, 0.5, 0.5]}],
         "files": [{"path": "s1_r1.csv", "sample": "s1", "replicate": 1}, ...]}

    Endmember order is the order of ``role == "endmember"`` entries. File paths
    are relative to the manifest's directory.
    """

    dataset: str
    samples: list[dict]
    files: list[dict]
    options: dict = field(default_factory=dict)
    root: Path = Path(".")

    @property
    def endmember_ids(self) -> list[str]:
        return [s["id"] for s in self.samples if s["role"] == "endmember"]

    @property
    def mixture_ids(self) -> list[str]:
        return [s["id"] for s in self.samples if s["role"] == "mixture"]

    @property
    def design(self) -> MixtureDesign:
        return MixtureDesign(tuple(self.endmember_ids),
                             {s["id"]: tuple(s["weights"]) for s in self.samples
                              if s["role"] == "mixture"})

    def resolved_options(self, overrides: dict | None = None) -> dict:
        opts = dict(DEFAULT_OPTIONS)
        opts.update(self.options)
        opts.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return opts

    def to_json(self) -> str:
        doc = {"dataset": self.dataset, "options": self.options,
               "samples": self.samples, "files": self.files}
        return json.dumps(doc, indent=2) + "\n"

    def validate(self) -> None:
        ids = [s.get("id") for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate sample ids in manifest")
        s = len(self.endmember_ids)
        for smp in self.samples:
            if smp.get("role") not in ("endmember", "mixture"):
                raise ValidationError(f"sample {smp.get('id')!r}: role must be endmember or mixture")
            if smp["role"] == "mixture":
                w = smp.get("weights")
                if w is None or len(w) != s:
                    raise ValidationError(
                        f"mixture {smp['id']!r}: needs {s} weights, one per endmember")
        by_sample: dict[str, list[int]] = {i: [] for i in ids}
        for f in self.files:
            if f.get("sample") not in by_sample:
                raise ValidationError(f"file {f.get('path')!r}: unknown sample {f.get('sample')!r}")
            by_sample[f["sample"]].append(int(f["replicate"]))
            if not (self.root / f["path"]).is_file():
                raise ValidationError(f"file not found: {self.root / f['path']}")
        for sid, reps in by_sample.items():
            if sorted(reps) != list(range(1, len(reps) + 1)):
                raise ValidationError(
                    f"sample {sid!r}: replicate indices must be 1..n without gaps, got {sorted(reps)}")
        parse_mask_rule(self.resolved_options()["mask_rule"])


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    for key in ("samples", "files"):
        if key not in doc:
            raise ValidationError(f"{path}: missing {key!r}")
    m = Manifest(doc.get("dataset", path.stem), doc["samples"], doc["files"],
                 doc.get("options", {}), path.parent)
    m.validate()
    return m


@dataclass
class Dataset:
    manifest: Manifest
    endmembers: list[ReplicateSet]
    mixtures: list[ReplicateSet]
    dropped_pixels: int = 0

    @property
    def samples(self) -> list[ReplicateSet]:
        return [*self.endmembers, *self.mixtures]


def load_dataset(manifest: Manifest, mask_rule: str | None = None) -> Dataset:
    """Read every file and apply one shared mask.

    The mask is the mask rule intersected with the non-blank pixels of every
    file, so all replicate sets share an identical layout.
    """
    rule = parse_mask_rule(mask_rule or manifest.resolved_options()["mask_rule"])
    grids = {}
    for f in manifest.files:
        grids[(f["sample"], int(f["replicate"]))] = parse_eem_csv(manifest.root / f["path"])
    first = next(iter(grids.values()))
    for key, g in grids.items():
        if g.excitation != first.excitation or g.emission != first.emission:
            raise ValidationError(f"sample {key[0]!r} replicate {key[1]}: wavelength axes differ")
    rule_mask = build_mask(first.excitation, first.emission, rule)
    mask = rule_mask.copy()
    for g in grids.values():
        mask &= g.mask
    dropped = int(rule_mask.sum() - mask.sum())
    if dropped:
        log.warning("%d rule-valid pixels are blank in at least one file and were masked", dropped)

    def rset(smp):
        n = sum(1 for k in grids if k[0] == smp["id"])
        reps = [EemGrid(first.excitation, first.emission,
                        np.where(mask, grids[(smp["id"], i)].intensities, np.nan), mask)
                for i in range(1, n + 1)]
        return ReplicateSet(smp["id"], reps, smp.get("weights"))

    ends = [rset(s) for s in manifest.samples if s["role"] == "endmember"]
    mixes = [rset(s) for s in manifest.samples if s["role"] == "mixture"]
    return Dataset(manifest, ends, mixes, dropped)


# -- output tables -----------------------------------------------------------

def write_table(path, columns: Sequence[str], rows: Iterable[Sequence], options: dict,
                delimiter: str = "\t") -> Path:
    """Delimited table preceded by a reproducibility header comment."""
    buf = io.StringIO()
    buf.write(header_line(options) + "\n")
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_table(path, delimiter: str = "\t") -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if not ln.startswith("#")]
    rows = list(csv.reader(lines, delimiter=delimiter))
    return rows[0], rows[1:]


def write_scene(scene, directory, options: dict | None = None, dataset: str = "synthetic") -> Path:
    """Export a synthetic scene as EEM CSV files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    options = dict(options or {})
    comment = header_line(options)
    samples, files = [], []
    for rset in scene.endmembers:
        samples.append({"id": rset.sample_id, "role": "endmember"})
    for rset in scene.mixtures.values():
        samples.append({"id": rset.sample_id, "role": "mixture",
                        "weights": [float(x) for x in rset.weights]})
    for rset in scene.samples:
        for i, grid in enumerate(rset.replicates, start=1):
            name = f"{rset.sample_id}_r{i}.csv"
            write_eem_csv(grid, directory / name, comment=comment)
            files.append({"path": name, "sample": rset.sample_id, "replicate": i})
    manifest = Manifest(dataset, samples, files, options, directory)
    path = directory / "manifest.json"
    path.write_text(manifest.to_json(), encoding="utf-8")
    return path
