"""Binary pattern stacks, signal and fODF files, checkpoints and kernel caches.

All binary formats are little-endian and start with a four-byte magic and a
``u16`` format version. Readers raise `FormatError` on anything they do not
recognise; a write-read-write cycle reproduces a file byte for byte.
"""

from dataclasses import asdict, dataclass
import csv
import hashlib
import io
import json
from pathlib import Path
import struct
from typing import Sequence

import numpy as np
import torch

from .errors import FormatError, InputError
from .forward_model import (
    FODF,
    EllipsoidKernelParams,
    FibreOrientation,
    KernelBank,
    build_kernel_bank,
    register_kernel_bank,
)
from .harmonics import SHCoeffs, SphericalSignal, n_coeffs
from .healpix import CapMask, HealpixGrid, build_grid, cap_mask
from .network import NetParams, SphericalUNet
from .projection import MicroscopeGeometry, PatternCentroid, ScatteringPattern
from .synthetic import SyntheticSpec

VERSION = 1

STACK_MAGIC = b"SLIP"
SIGNAL_MAGIC = b"SLIS"
FODF_MAGIC = b"SLIF"
CHECKPOINT_MAGIC = b"SLIC"
KERNEL_MAGIC = b"SLIK"

_STACK_HEADER = struct.Struct("<4sHIHHB")
_SIGNAL_HEADER = struct.Struct("<4sHIH")
_FODF_HEADER = struct.Struct("<4sHIIH")
_JSON_HEADER = struct.Struct("<4sHI")
_FLOAT32_TAG = 1


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(f"{self.path}: truncated file")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout: struct.Struct) -> tuple:
        return layout.unpack(self.take(layout.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).copy()

    def finish(self):
        if self.offset != len(self.data):
            extra = len(self.data) - self.offset
            raise FormatError(f"{self.path}: {extra} trailing bytes")


def _check_magic(path, magic: bytes, version: int, expected: bytes):
    if magic != expected:
        raise FormatError(f"{path}: not a {expected.decode()} file (magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")


def _read(path) -> _Reader:
    try:
        return _Reader(Path(path).read_bytes(), path)
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e


# Pattern stacks


@dataclass(frozen=True, eq=False)
class PatternStack:
    """Patterns of uniform shape with optional per-pattern groundtruth."""

    patterns: tuple[ScatteringPattern, ...]
    groundtruth: tuple[SyntheticSpec | None, ...] = ()
    centroids: tuple[PatternCentroid | None, ...] = ()

    def __post_init__(self):
        patterns = tuple(self.patterns)
        shapes = {p.intensities.shape for p in patterns}
        if len(shapes) > 1:
            raise InputError(f"patterns of a stack differ in shape: {sorted(shapes)}")
        for name in ("groundtruth", "centroids"):
            values = tuple(getattr(self, name)) or (None,) * len(patterns)
            if len(values) != len(patterns):
                raise InputError(
                    f"{name} has {len(values)} entries for {len(patterns)} patterns"
                )
            object.__setattr__(self, name, values)
        object.__setattr__(self, "patterns", patterns)

    @property
    def count(self) -> int:
        return len(self.patterns)

    @property
    def height(self) -> int:
        return self.patterns[0].height if self.patterns else 0

    @property
    def width(self) -> int:
        return self.patterns[0].width if self.patterns else 0

    def __len__(self) -> int:
        return self.count


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def spec_to_json(spec: SyntheticSpec) -> dict:
    return {
        "fibres": [[o.phi, o.theta, w] for o, w in spec.fibres],
        "noise": spec.noise,
        "seed": spec.seed,
        "kernel": asdict(spec.kernel),
        "geometry": asdict(spec.geometry),
    }


def spec_from_json(entry: dict) -> SyntheticSpec:
    try:
        kernel = entry["kernel"]
        return SyntheticSpec(
            fibres=tuple(
                (FibreOrientation(phi, theta), w) for phi, theta, w in entry["fibres"]
            ),
            noise=entry["noise"],
            kernel=EllipsoidKernelParams(
                kernel["alpha"],
                kernel["sigma_k"],
                tuple(kernel["x_c"]),
                kernel["normalize"],
            ),
            geometry=MicroscopeGeometry(**entry["geometry"]),
            seed=entry["seed"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed groundtruth entry: {e}") from e


def write_stack(path, stack: PatternStack):
    if stack.height > 0xFFFF or stack.width > 0xFFFF:
        raise InputError("pattern dimensions exceed the stack format limits")
    buffer = io.BytesIO()
    buffer.write(
        _STACK_HEADER.pack(
            STACK_MAGIC, VERSION, stack.count, stack.width, stack.height, _FLOAT32_TAG
        )
    )
    for pattern in stack.patterns:
        buffer.write(pattern.intensities.astype("<f4").tobytes())
    Path(path).write_bytes(buffer.getvalue())

    sidecar = {}
    for index, (spec, centroid) in enumerate(zip(stack.groundtruth, stack.centroids)):
        entry = {}
        if spec is not None:
            entry.update(spec_to_json(spec))
        if centroid is not None:
            entry["centroid"] = [centroid.x_c, centroid.y_c]
        if entry:
            sidecar[str(index)] = entry
    if sidecar:
        sidecar_path(path).write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    elif sidecar_path(path).exists():
        sidecar_path(path).unlink()


def read_stack(path) -> PatternStack:
    reader = _read(path)
    magic, version, count, width, height, dtype = reader.unpack(_STACK_HEADER)
    _check_magic(path, magic, version, STACK_MAGIC)
    if dtype != _FLOAT32_TAG:
        raise FormatError(f"{path}: unknown dtype tag {dtype}")
    patterns = []
    for _ in range(count):
        raster = reader.array("<f4", width * height).reshape(height, width)
        try:
            patterns.append(ScatteringPattern(raster.astype(np.float64)))
        except InputError as e:
            raise FormatError(f"{path}: {e}") from e
    reader.finish()

    groundtruth: list[SyntheticSpec | None] = [None] * count
    centroids: list[PatternCentroid | None] = [None] * count
    sidecar = sidecar_path(path)
    if sidecar.exists():
        try:
            entries = json.loads(sidecar.read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"{sidecar}: {e}") from e
        for key, entry in entries.items():
            try:
                index = int(key)
            except ValueError as e:
                raise FormatError(f"{sidecar}: pattern index {key!r}") from e
            if not 0 <= index < count:
                raise FormatError(f"{sidecar}: pattern index {index} out of range")
            if "fibres" in entry:
                groundtruth[index] = spec_from_json(entry)
            if "centroid" in entry:
                centroids[index] = PatternCentroid(*map(float, entry["centroid"]))
    return PatternStack(tuple(patterns), tuple(groundtruth), tuple(centroids))


# Projected signals


def write_signals(path, signals: Sequence[SphericalSignal]):
    n_side = signals[0].grid.n_side if signals else 1
    if any(s.grid.n_side != n_side for s in signals):
        raise InputError("signals of one file must share a grid")
    buffer = io.BytesIO()
    buffer.write(_SIGNAL_HEADER.pack(SIGNAL_MAGIC, VERSION, len(signals), n_side))
    for signal in signals:
        buffer.write(signal.values.astype("<f8").tobytes())
        buffer.write(signal.valid.astype(np.uint8).tobytes())
    Path(path).write_bytes(buffer.getvalue())


def read_signals(path) -> list[SphericalSignal]:
    reader = _read(path)
    magic, version, count, n_side = reader.unpack(_SIGNAL_HEADER)
    _check_magic(path, magic, version, SIGNAL_MAGIC)
    grid = build_grid(n_side)
    signals = []
    for _ in range(count):
        values = reader.array("<f8", grid.n_pix)
        valid = reader.array("u1", grid.n_pix).astype(bool)
        signals.append(SphericalSignal(grid, values, valid))
    reader.finish()
    return signals


# fODF files


def write_fodfs(path, fodfs: Sequence[FODF]):
    """Atom axes once, then per pattern the weights and the SH coefficients."""
    if not fodfs:
        raise InputError("no fODFs to write")
    axes, l_max = fodfs[0].axes, fodfs[0].sh.l_max
    for fodf in fodfs:
        if fodf.sh.l_max != l_max or not np.array_equal(fodf.axes, axes):
            raise InputError("fODFs of one file must share atoms and l_max")
    buffer = io.BytesIO()
    buffer.write(
        _FODF_HEADER.pack(FODF_MAGIC, VERSION, len(fodfs), axes.shape[0], l_max)
    )
    buffer.write(axes.astype("<f8").tobytes())
    for fodf in fodfs:
        buffer.write(fodf.weights.astype("<f8").tobytes())
        buffer.write(fodf.sh.values.astype("<f8").tobytes())
    Path(path).write_bytes(buffer.getvalue())


def read_fodfs(path) -> list[FODF]:
    reader = _read(path)
    magic, version, count, n_atoms, l_max = reader.unpack(_FODF_HEADER)
    _check_magic(path, magic, version, FODF_MAGIC)
    if l_max % 2:
        raise FormatError(f"{path}: odd l_max {l_max}")
    axes = reader.array("<f8", 3 * n_atoms).reshape(n_atoms, 3)
    fodfs = []
    for _ in range(count):
        weights = reader.array("<f8", n_atoms)
        sh = SHCoeffs(l_max, reader.array("<f8", n_coeffs(l_max)))
        fodfs.append(FODF(weights, sh, axes))
    reader.finish()
    return fodfs


# Checkpoints


def _json_block(magic: bytes, header: dict, payload: bytes) -> bytes:
    text = json.dumps(header, sort_keys=True).encode()
    return _JSON_HEADER.pack(magic, VERSION, len(text)) + text + payload


def _read_json_block(path, expected: bytes) -> tuple[dict, _Reader]:
    reader = _read(path)
    magic, version, length = reader.unpack(_JSON_HEADER)
    _check_magic(path, magic, version, expected)
    try:
        header = json.loads(reader.take(length))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: corrupt header: {e}") from e
    return header, reader


def architecture(params: NetParams) -> dict:
    return {
        **asdict(params),
        "widths": list(params.widths),
        "n_side_chain": list(params.n_side_chain),
    }


def architecture_hash(params: NetParams, shapes: list) -> str:
    text = json.dumps(
        {"architecture": architecture(params), "parameters": shapes}, sort_keys=True
    )
    return hashlib.sha256(text.encode()).hexdigest()


def _parameter_shapes(net: SphericalUNet) -> list:
    # ordered as the payload is written
    return [[name, list(p.shape)] for name, p in net.state_dict().items()]


def write_checkpoint(path, net: SphericalUNet):
    shapes = _parameter_shapes(net)
    header = {
        "architecture": architecture(net.params),
        "parameters": shapes,
        "hash": architecture_hash(net.params, shapes),
    }
    blob = b"".join(
        p.detach().numpy().astype("<f8").tobytes()
        for p in net.state_dict().values()
    )
    Path(path).write_bytes(_json_block(CHECKPOINT_MAGIC, header, blob))


def read_checkpoint(path, expected: NetParams | None = None) -> SphericalUNet:
    """Rebuild the network; any header mismatch raises `FormatError`."""
    header, reader = _read_json_block(path, CHECKPOINT_MAGIC)
    try:
        stored = dict(header["architecture"])
        stored.pop("n_side_chain")
        stored["widths"] = tuple(stored["widths"])
        params = NetParams(**stored)
        shapes = header["parameters"]
        digest = header["hash"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed checkpoint header: {e}") from e
    if architecture(params) != header["architecture"]:
        raise FormatError(f"{path}: inconsistent level chain in checkpoint header")
    if digest != architecture_hash(params, shapes):
        raise FormatError(f"{path}: architecture hash mismatch")
    if expected is not None and expected != params:
        raise FormatError(
            f"{path}: checkpoint architecture {params} differs from {expected}"
        )

    net = SphericalUNet(params)
    if shapes != _parameter_shapes(net):
        raise FormatError(f"{path}: parameter layout does not match the network")
    state = {}
    for name, shape in shapes:
        size = int(np.prod(shape, dtype=np.int64))
        state[name] = torch.from_numpy(reader.array("<f8", size).reshape(shape))
    reader.finish()
    net.load_state_dict(state)
    return net


# Kernel caches


def _kernel_header(directions, params: EllipsoidKernelParams, mask: CapMask) -> dict:
    return {
        "n_side": mask.grid.n_side,
        "theta_max": mask.theta_max,
        "kernel": asdict(params),
        "directions": [[d.phi, d.theta] for d in directions],
    }


def write_kernel_bank(path, bank: KernelBank):
    header = _kernel_header(bank.directions, bank.params, bank.mask)
    blob = np.asfortranarray(bank.matrix).astype("<f8").tobytes(order="F")
    Path(path).write_bytes(_json_block(KERNEL_MAGIC, header, blob))


def read_kernel_bank(path) -> KernelBank:
    header, reader = _read_json_block(path, KERNEL_MAGIC)
    try:
        grid = build_grid(header["n_side"])
        mask = cap_mask(grid, header["theta_max"])
        kernel = header["kernel"]
        params = EllipsoidKernelParams(
            kernel["alpha"],
            kernel["sigma_k"],
            tuple(kernel["x_c"]),
            kernel["normalize"],
        )
        directions = tuple(
            FibreOrientation(phi, theta) for phi, theta in header["directions"]
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed kernel cache header: {e}") from e
    n_rows = mask.n_included
    matrix = reader.array("<f8", n_rows * len(directions))
    reader.finish()
    matrix = np.ascontiguousarray(matrix.reshape(n_rows, len(directions), order="F"))
    matrix.setflags(write=False)
    return KernelBank(directions, params, mask, matrix)


def load_or_build_kernel_bank(
    path,
    directions,
    params: EllipsoidKernelParams,
    grid: HealpixGrid,
    mask: CapMask,
) -> KernelBank:
    """Kernel bank from the cache at ``path``, rebuilt when the cache is stale."""
    directions = tuple(directions)
    path = Path(path)
    if path.exists():
        try:
            bank = read_kernel_bank(path)
        except FormatError:
            bank = None
        if bank is not None and bank.cache_key == KernelBank(
            directions, params, mask, bank.matrix
        ).cache_key:
            register_kernel_bank(bank)
            return bank
    bank = build_kernel_bank(directions, params, grid, mask)
    write_kernel_bank(path, bank)
    return bank


# Evaluation tables


def write_table(path, rows: Sequence[dict]):
    """Comma-separated table with a header row."""
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as stream:
        writer = csv.DictWriter(stream, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def format_table(rows: Sequence[dict]) -> str:
    """Aligned plain-text rendering of ``rows``."""
    if not rows:
        return ""
    columns = list(rows[0])

    def cell(value):
        return f"{value:.4f}" if isinstance(value, float) else str(value)

    cells = [[cell(row[c]) for c in columns] for row in rows]
    widths = [
        max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)
    ]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)
