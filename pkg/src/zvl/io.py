"""Reading and writing ratings, ballots, tallies, models and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import Predictor, StarCalibration
from .core import FactorModel, RatingMatrix
from .metrics import ranking_from_scores
from .voting import OrdinalBallot

MODEL_MAGIC = "zvl-model"
MODEL_VERSION = 1
FORMATS = ("movielens-tab", "csv")


@dataclass
class DatasetDescriptor:
    """Where a ratings file lives and how its raw ids map to dense ones.

    ``user_ids[d]`` is the raw id of dense user ``d``.  Left empty, the
    mapping is built by :func:`load_ratings`; given, it is used as is and any
    raw id outside it is an error.
    """

    path: Path
    format: str = "movielens-tab"
    scale: int | None = None
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.path = Path(self.path)
        if self.format not in FORMATS:
            raise ValueError(f"unknown ratings format {self.format!r}; expected one of {FORMATS}")


def _dense(raw: list[str]) -> tuple[list[str], dict[str, int]]:
    """Sorted unique raw ids (numerically when they all parse as ints)."""
    uniq = set(raw)
    try:
        ordered = sorted(uniq, key=int)
    except ValueError:
        ordered = sorted(uniq)
    return ordered, {r: d for d, r in enumerate(ordered)}


def _read_rows(desc: DatasetDescriptor):
    with open(desc.path, newline="", encoding="utf-8") as fh:
        if desc.format == "csv":
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ValueError(f"{desc.path}: empty file")
            if [h.strip() for h in header[:3]] != ["user", "item", "rating"]:
                raise ValueError(f"{desc.path}:1: expected header user,item,rating")
            for lineno, row in enumerate(reader, start=2):
                if row:
                    yield lineno, row
        else:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if line.strip():
                    yield lineno, line.split("\t")


def load_ratings(desc: DatasetDescriptor) -> RatingMatrix:
    users, items, stars = [], [], []
    seen: dict[tuple[str, str], int] = {}
    for lineno, row in _read_rows(desc):
        if len(row) < 3:
            raise ValueError(f"{desc.path}:{lineno}: expected at least 3 fields, got {len(row)}")
        u, i, r = (x.strip() for x in row[:3])
        try:
            star = int(r)
        except ValueError:
            raise ValueError(f"{desc.path}:{lineno}: rating {r!r} is not an integer") from None
        if star < 1 or (desc.scale is not None and star > desc.scale):
            raise ValueError(f"{desc.path}:{lineno}: rating {star} outside the star scale")
        if (u, i) in seen:
            raise ValueError(f"{desc.path}:{lineno}: duplicate rating for (user={u}, item={i}), "
                             f"first seen on line {seen[(u, i)]}")
        seen[(u, i)] = lineno
        users.append(u)
        items.append(i)
        stars.append(star)
    if not stars:
        raise ValueError(f"{desc.path}: no ratings found")
    if desc.user_ids and desc.item_ids:
        umap = {r: d for d, r in enumerate(desc.user_ids)}
        imap = {r: d for d, r in enumerate(desc.item_ids)}
        unknown = [u for u in users if u not in umap][:1] + [i for i in items if i not in imap][:1]
        if unknown:
            raise ValueError(f"{desc.path}: id {unknown[0]!r} is not in the supplied id map")
    else:
        desc.user_ids, umap = _dense(users)
        desc.item_ids, imap = _dense(items)
    scale = desc.scale if desc.scale is not None else max(stars)
    return RatingMatrix(len(desc.user_ids), len(desc.item_ids), scale,
                        np.array([umap[u] for u in users]), np.array([imap[i] for i in items]),
                        np.array(stars))


def write_ratings(matrix: RatingMatrix, path, fmt: str = "movielens-tab",
                  desc: DatasetDescriptor | None = None) -> None:
    """Write entries, translating dense ids back through ``desc`` when given.

    The TSV timestamp column is always 0.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown ratings format {fmt!r}")
    users = [str(u) for u in range(matrix.n_users)] if desc is None else desc.user_ids
    items = [str(i) for i in range(matrix.n_items)] if desc is None else desc.item_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            fh.write("user,item,rating\n")
        sep, tail = (",", "") if fmt == "csv" else ("\t", "\t0")
        for u, i, s in matrix.entries():
            fh.write(f"{users[u]}{sep}{items[i]}{sep}{s}{tail}\n")


def write_id_map(desc: DatasetDescriptor, path) -> None:
    Path(path).write_text(json.dumps({"users": desc.user_ids, "items": desc.item_ids}), encoding="utf-8")


def read_id_map(path) -> tuple[list[str], list[str]]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return [str(u) for u in d["users"]], [str(i) for i in d["items"]]


def load_ballots(path) -> tuple[list[OrdinalBallot], int]:
    """Ballots CSV ``voter,rank1,rank2,...``; returns ballots and candidate count."""
    ballots = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "voter":
            raise ValueError(f"{path}:1: expected header voter,rank1,...")
        for lineno, row in enumerate(reader, start=2):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            try:
                voter, ranking = int(cells[0]), tuple(int(c) for c in cells[1:])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: ids must be integers") from None
            if not ranking:
                raise ValueError(f"{path}:{lineno}: ballot of voter {voter} is empty")
            ballots.append(OrdinalBallot(voter, ranking))
    if not ballots:
        raise ValueError(f"{path}: no ballots found")
    n = 1 + max(max(b.ranking) for b in ballots)
    return ballots, n


def write_tally(scores, path, labels=None) -> None:
    """Tally CSV ``candidate,score,rank``; rank 1 is the winner."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = list(range(scores.size)) if labels is None else labels
    rank = np.empty(scores.size, dtype=np.int64)
    rank[ranking_from_scores(scores)] = np.arange(1, scores.size + 1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("candidate,score,rank\n")
        for c in range(scores.size):
            fh.write(f"{labels[c]},{float(scores[c])!r},{int(rank[c])}\n")


def _floats(line: str, expected: int, where: str) -> list[float]:
    parts = line.split()
    if len(parts) != expected:
        raise ValueError(f"model file shape mismatch at {where}: expected {expected} values, got {len(parts)}")
    return [float(p) for p in parts]


def save_model(model: FactorModel, path) -> None:
    """Versioned text; ``repr`` of a float64 round-trips exactly."""
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}", "kind factor-model",
             f"dim {model.dim}", f"users {model.n_users}", f"items {model.n_items}", "U"]
    lines += [" ".join(repr(float(x)) for x in row) for row in model.U]
    lines.append("V")
    lines += [" ".join(repr(float(x)) for x in row) for row in model.V]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _header(lines: list[str], path) -> dict[str, str]:
    if not lines or lines[0].split() != [MODEL_MAGIC, str(MODEL_VERSION)]:
        raise ValueError(f"{path}: not a {MODEL_MAGIC} v{MODEL_VERSION} file")
    out = {}
    for line in lines[1:]:
        parts = line.split(None, 1)
        if len(parts) != 2:
            break
        out[parts[0]] = parts[1]
    return out


def load_model(path) -> FactorModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = _header(lines, path)
    if head.get("kind") != "factor-model":
        raise ValueError(f"{path}: not a factor model")
    try:
        dim, n_users, n_items = int(head["dim"]), int(head["users"]), int(head["items"])
    except (KeyError, ValueError):
        raise ValueError(f"{path}: malformed model header") from None
    if "U" not in lines:
        raise ValueError(f"{path}: shape mismatch, no U section")
    start = lines.index("U") + 1
    if len(lines) < start + n_users + 1 + n_items:
        raise ValueError(f"{path}: shape mismatch, file truncated")
    U = [_floats(lines[start + r], dim, f"U row {r}") for r in range(n_users)]
    if lines[start + n_users] != "V":
        raise ValueError(f"{path}: shape mismatch, expected V section after {n_users} user rows")
    vstart = start + n_users + 1
    V = [_floats(lines[vstart + r], dim, f"V row {r}") for r in range(n_items)]
    return FactorModel(np.array(U, dtype=np.float64).reshape(n_users, dim),
                       np.array(V, dtype=np.float64).reshape(n_items, dim))


def save_predictor(pred: Predictor, path) -> None:
    """Factor models use the model format plus an optional calibration line;
    the heuristics get a one-section variant of the same header."""
    if pred.kind == "factor-model":
        save_model(pred.payload, path)
        extra = [f"scale {pred.scale}"]
        if pred.calibration is not None:
            extra.append("calibration " + " ".join(repr(t) for t in pred.calibration.thresholds))
        text = Path(path).read_text(encoding="utf-8").splitlines()
        Path(path).write_text("\n".join(text[:2] + extra + text[2:]) + "\n", encoding="utf-8")
        return
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}", f"kind {pred.kind}", f"scale {pred.scale}"]
    if pred.kind == "item-mean":
        means = np.asarray(pred.payload, dtype=np.float64)
        lines += [f"items {means.size}", "means", " ".join(repr(float(x)) for x in means)]
    else:
        lines += [f"value {pred.payload!r}"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_predictor(path) -> Predictor:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = _header(lines, path)
    kind = head.get("kind")
    scale = int(head.get("scale", 5))
    if kind == "factor-model":
        cal = None
        if "calibration" in head:
            cal = StarCalibration(tuple(float(x) for x in head["calibration"].split()))
        return Predictor.factor(load_model(path), scale, cal)
    if kind == "item-mean":
        n = int(head["items"])
        means = _floats(lines[lines.index("means") + 1], n, "means")
        return Predictor("item-mean", np.array(means), scale)
    if kind == "global-mean":
        return Predictor("global-mean", float(head["value"]), scale)
    if kind == "uniform-random":
        return Predictor("uniform-random", int(head["value"]), scale)
    raise ValueError(f"{path}: unknown predictor kind {kind!r}")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: list[str]
    config: dict
    seed: int | None
    inputs: dict[str, str]
    outputs: list[str]
    version: str = __version__

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2, sort_keys=True, default=str) + "\n",
                              encoding="utf-8")
