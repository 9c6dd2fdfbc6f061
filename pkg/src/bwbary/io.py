"""File formats and dataset wrappers: the text/binary matrix bundle, the
scale-location measure layer, and schema-validated simulation reports."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import jsonschema

from .barycenter import SampleSet, SolverConfig, solve_barycenter
from .exceptions import (
    DimensionMismatchError,
    ParseError,
    ValidationError,
)
from .geometry import bw_distance_sq
from .hermitian import COMPLEX, PsdMatrix, REAL, as_psd

TEXT_MAGIC = "BWB v1"
BINARY_MAGIC = b"BWBB v1\n"
SCHEMA_NAME = "report_schema_v1"


@dataclass
class MatrixBundle:
    """A validated collection of PSD matrices with optional weights."""

    matrices: list
    weights: np.ndarray | None = None
    mode: str = REAL

    def __post_init__(self):
        if not self.matrices:
            raise ValidationError("bundle must contain at least one matrix")
        dims = {m.dim for m in self.matrices}
        if len(dims) > 1:
            raise DimensionMismatchError(f"mixed dimensions in bundle: {sorted(dims)}")
        modes = {m.mode for m in self.matrices}
        if modes != {self.mode}:
            raise ValidationError(f"bundle mode {self.mode!r} does not match matrices")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (len(self.matrices),):
                raise ValidationError("weights length does not match matrix count")
            if np.any(w < 0):
                raise ValidationError("weights must be nonnegative")
            total = float(w.sum())
            if abs(total - 1.0) > 1e-12:
                raise ValidationError(f"weights sum to {total!r}, expected 1")
            self.weights = w

    @property
    def dim(self) -> int:
        return self.matrices[0].dim

    def __len__(self) -> int:
        return len(self.matrices)

    def to_sample_set(self) -> SampleSet:
        return SampleSet([m.array for m in self.matrices], weights=self.weights,
                         mode=self.mode)


def _format_scalar(value, mode: str) -> str:
    if mode == COMPLEX:
        re, im = float(np.real(value)), float(np.imag(value))
        sign = "+" if im >= 0 else "-"
        return f"{re!r}{sign}{abs(im)!r}i"
    return repr(float(np.real(value)))


def _parse_scalar(token: str, mode: str, path, line):
    try:
        if mode == REAL:
            return float(token)
        if not token.endswith("i"):
            raise ValueError("complex entry must end in 'i'")
        body = token[:-1]
        split = None
        for pos in range(len(body) - 1, 0, -1):
            if body[pos] in "+-" and body[pos - 1] not in "eE":
                split = pos
                break
        if split is None:
            raise ValueError("missing imaginary part")
        return complex(float(body[:split]), float(body[split:]))
    except ValueError as exc:
        raise ParseError(f"bad entry {token!r}: {exc}", path=path, line=line) from exc


def save_bundle(bundle: MatrixBundle, path, binary: bool = False) -> None:
    """Write a bundle; text by default, little-endian binary with binary=True."""
    path = Path(path)
    if binary:
        _save_binary(bundle, path)
        return
    d, n = bundle.dim, len(bundle)
    lines = [f"{TEXT_MAGIC} {d} {bundle.mode} {n}"]
    if bundle.weights is not None:
        lines.append("weights: " + " ".join(repr(float(w)) for w in bundle.weights))
    for mat in bundle.matrices:
        for row in mat.array:
            lines.append(" ".join(_format_scalar(v, bundle.mode) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _save_binary(bundle: MatrixBundle, path: Path) -> None:
    d, n = bundle.dim, len(bundle)
    mode_flag = 1 if bundle.mode == COMPLEX else 0
    flags = 1 if bundle.weights is not None else 0
    header = BINARY_MAGIC + struct.pack("<IBBQ", d, mode_flag, flags, n)
    chunks = [header]
    if bundle.weights is not None:
        chunks.append(np.asarray(bundle.weights, dtype="<f8").tobytes())
    dtype = "<c16" if bundle.mode == COMPLEX else "<f8"
    stack = np.stack([m.array for m in bundle.matrices]).astype(dtype)
    chunks.append(stack.tobytes())
    path.write_bytes(b"".join(chunks))


def load_bundle(path) -> MatrixBundle:
    """Read a bundle, dispatching on the text/binary magic; every matrix is
    re-validated (Hermitian symmetry, PSD spectrum) on load."""
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(BINARY_MAGIC):
        return _load_binary(raw, path)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}", path=path) from exc
    return _load_text(text, path)


def _wrap_matrix(arr, mode, index, path):
    try:
        return PsdMatrix(arr, mode=mode)
    except ValidationError as exc:
        raise ValidationError(f"{path}: matrix {index}: {exc}") from exc


def _load_text(text: str, path: Path) -> MatrixBundle:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", path=path, line=1)
    header = lines[0].split()
    if len(header) != 5 or " ".join(header[:2]) != TEXT_MAGIC:
        raise ParseError(f"bad header {lines[0]!r}", path=path, line=1)
    try:
        d = int(header[2])
        n = int(header[4])
    except ValueError as exc:
        raise ParseError(f"bad header {lines[0]!r}", path=path, line=1) from exc
    mode = header[3]
    if mode not in (REAL, COMPLEX):
        raise ParseError(f"unknown mode {mode!r}", path=path, line=1)
    if d < 1 or n < 1:
        raise ParseError(f"bad dimensions d={d}, n={n}", path=path, line=1)
    idx = 1
    weights = None
    if idx < len(lines) and lines[idx].startswith("weights:"):
        tokens = lines[idx].split(":", 1)[1].split()
        if len(tokens) != n:
            raise ParseError(f"expected {n} weights, got {len(tokens)}",
                             path=path, line=idx + 1)
        try:
            weights = np.array([float(t) for t in tokens])
        except ValueError as exc:
            raise ParseError(f"bad weight: {exc}", path=path, line=idx + 1) from exc
        idx += 1
    dtype = np.complex128 if mode == COMPLEX else np.float64
    matrices = []
    for i in range(n):
        rows = []
        for _ in range(d):
            if idx >= len(lines):
                raise ParseError(f"unexpected end of file in matrix {i}",
                                 path=path, line=len(lines))
            tokens = lines[idx].split()
            if len(tokens) != d:
                raise ParseError(f"expected {d} entries, got {len(tokens)}",
                                 path=path, line=idx + 1)
            rows.append([_parse_scalar(t, mode, path, idx + 1) for t in tokens])
            idx += 1
        matrices.append(_wrap_matrix(np.array(rows, dtype=dtype), mode, i, path))
    for lineno, line in enumerate(lines[idx:], start=idx + 1):
        if line.strip():
            raise ParseError("trailing content after payload", path=path, line=lineno)
    return MatrixBundle(matrices, weights=weights, mode=mode)


def _load_binary(raw: bytes, path: Path) -> MatrixBundle:
    offset = len(BINARY_MAGIC)
    try:
        d, mode_flag, flags, n = struct.unpack_from("<IBBQ", raw, offset)
    except struct.error as exc:
        raise ParseError(f"truncated binary header: {exc}", path=path) from exc
    offset += struct.calcsize("<IBBQ")
    mode = COMPLEX if mode_flag else REAL
    weights = None
    if flags & 1:
        need = 8 * n
        if len(raw) < offset + need:
            raise ParseError("truncated weights block", path=path)
        weights = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).copy()
        offset += need
    itemsize = 16 if mode == COMPLEX else 8
    need = itemsize * n * d * d
    if len(raw) < offset + need:
        raise ParseError("truncated payload", path=path)
    dtype = "<c16" if mode == COMPLEX else "<f8"
    stack = np.frombuffer(raw, dtype=dtype, count=n * d * d, offset=offset)
    stack = stack.reshape(n, d, d)
    matrices = [_wrap_matrix(stack[i], mode, i, path) for i in range(n)]
    return MatrixBundle(matrices, weights=weights, mode=mode)


@dataclass
class LocationScaleMeasure:
    """A measure in a scale-location family, identified by mean and covariance."""

    mean: np.ndarray
    covariance: PsdMatrix

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.covariance = as_psd(self.covariance)
        if self.mean.shape != (self.covariance.dim,):
            raise DimensionMismatchError(
                f"mean length {self.mean.shape[0]} != covariance dim"
                f" {self.covariance.dim}"
            )


def w2_distance_sq(a: LocationScaleMeasure, b: LocationScaleMeasure) -> float:
    """Squared 2-Wasserstein distance within a scale-location family:
    ||m1 - m2||^2 + d_BW^2(S1, S2)."""
    if a.mean.shape != b.mean.shape:
        raise DimensionMismatchError("mean dimensions differ")
    gap = float(np.sum((a.mean - b.mean) ** 2))
    return gap + bw_distance_sq(a.covariance, b.covariance)


def scale_location_barycenter(measures, weights=None,
                              config: SolverConfig | None = None) -> LocationScaleMeasure:
    """Barycenter of scale-location measures: Euclidean mean of the means,
    unconstrained barycenter of the covariances."""
    measures = list(measures)
    if not measures:
        raise ValidationError("need at least one measure")
    n = len(measures)
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
    mean = np.einsum("n,nd->d", w, np.stack([m.mean for m in measures]))
    covs = SampleSet([m.covariance.array for m in measures], weights=weights)
    result = solve_barycenter(covs, config=config)
    return LocationScaleMeasure(mean, result.barycenter)


# ---------------------------------------------------------------------------
# Simulation reports: versioned JSON schema plus CSV emission.
# ---------------------------------------------------------------------------


def report_schema() -> dict:
    text = resources.files("bwbary").joinpath(f"schemas/{SCHEMA_NAME}.json").read_text()
    return json.loads(text)


def validate_report(data: dict) -> None:
    try:
        jsonschema.validate(data, report_schema())
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"report does not match {SCHEMA_NAME}: {exc.message}")


def save_report(report, path) -> None:
    """Serialize a SimulationReport (or its dict form) as schema-valid JSON.

    The byte stream is a pure function of the report contents, so identical
    runs produce identical files.
    """
    data = report.to_dict() if hasattr(report, "to_dict") else report
    validate_report(data)
    Path(path).write_text(
        json.dumps(data, separators=(",", ":"), sort_keys=False) + "\n",
        encoding="utf-8",
    )


def load_report(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path, line=exc.lineno) from exc
    validate_report(data)
    return data


def write_report_csv(report, directory) -> list:
    """One CSV per (statistic, n) with columns replicate,value."""
    data = report.to_dict() if hasattr(report, "to_dict") else report
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    stats = ("fnorm", "dbw", "variance") if data["kind"] == "clt" else (
        "fnorm_rel", "dbw_err")
    for block in data["per_n"]:
        n = block["n"]
        for stat in stats:
            out = directory / f"{stat}_n{n}.csv"
            with out.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["replicate", "value"])
                for rec in block["replicates"]:
                    writer.writerow([rec["replicate"], repr(float(rec[stat]))])
            written.append(out)
    return written
