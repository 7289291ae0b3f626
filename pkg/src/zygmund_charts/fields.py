"""Grid discretization, field containers and ZYGF file I/O."""

from __future__ import annotations

import argparse
import itertools
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import scipy.fft as sp_fft

MIN_SIZE = 16
ZYGF_MAGIC = b"ZYGF"
ZYGF_VERSION = 1
KIND_SCALAR = 0
KIND_FORM = 1
KIND_FRAME = 2
KIND_MATRIX = 3
ANTISYMMETRY_TOL = 1e-12


class FieldError(ValueError):
    def __init__(self, message: str, category: str = "unknown"):
        super().__init__(message)
        self.category = category


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on the torus [-L, L)^ndim."""

    ndim: int
    sizes: tuple[int, ...]
    half_width: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        object.__setattr__(self, "half_width", float(self.half_width))
        if self.ndim not in (1, 2, 3):
            raise FieldError(f"ndim must be 1, 2 or 3, got {self.ndim}", "grid")
        if len(self.sizes) != self.ndim:
            raise FieldError(
                f"expected {self.ndim} sizes, got {len(self.sizes)}", "grid"
            )
        for n in self.sizes:
            if n < MIN_SIZE or n & (n - 1):
                raise FieldError(
                    f"grid sizes must be powers of two >= {MIN_SIZE}, got {n}",
                    "grid",
                )
        if not self.half_width > 0:
            raise FieldError("half_width must be positive", "grid")

    @classmethod
    def cube(cls, ndim: int, size: int, half_width: float = 2.0) -> "GridSpec":
        return cls(ndim, (size,) * ndim, half_width)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sizes

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(2.0 * self.half_width / n for n in self.sizes)

    @property
    def size(self) -> int:
        return int(np.prod(self.sizes))

    def axis_nodes(self, axis: int) -> np.ndarray:
        n = self.sizes[axis]
        return -self.half_width + np.arange(n) * self.spacing[axis]

    def nodes(self) -> tuple[np.ndarray, ...]:
        axes = [self.axis_nodes(a) for a in range(self.ndim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x**2 for x in self.nodes()))


def _require_same_spec(*specs: GridSpec) -> GridSpec:
    first = specs[0]
    for other in specs[1:]:
        if other != first:
            raise FieldError(
                f"fields live on different grids: {first} vs {other}",
                "spec-mismatch",
            )
    return first


@dataclass(frozen=True, eq=False)
class ScalarField:
    spec: GridSpec
    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.shape != self.spec.shape:
            if samples.size != self.spec.size:
                raise FieldError(
                    f"expected {self.spec.size} samples, got {samples.size}",
                    "shape",
                )
            samples = samples.reshape(self.spec.shape)
        if not np.all(np.isfinite(samples)):
            raise FieldError("field contains non-finite samples", "non-finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "ScalarField":
        return cls(spec, np.zeros(spec.shape))

    @classmethod
    def constant(cls, spec: GridSpec, value: float) -> "ScalarField":
        return cls(spec, np.full(spec.shape, float(value)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def _other(self, other) -> np.ndarray | float:
        if isinstance(other, ScalarField):
            _require_same_spec(self.spec, other.spec)
            return other.samples
        return float(other)

    def __add__(self, other) -> "ScalarField":
        return ScalarField(self.spec, self.samples + self._other(other))

    __radd__ = __add__

    def __sub__(self, other) -> "ScalarField":
        return ScalarField(self.spec, self.samples - self._other(other))

    def __rsub__(self, other) -> "ScalarField":
        return ScalarField(self.spec, self._other(other) - self.samples)

    def __mul__(self, other) -> "ScalarField":
        return ScalarField(self.spec, self.samples * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "ScalarField":
        return ScalarField(self.spec, self.samples / self._other(other))

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.spec, -self.samples)


def multi_indices(ndim: int, degree: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations(range(ndim), degree))


def permutation_sign(indices: Iterable[int]) -> int:
    """Sign of the permutation sorting `indices`; 0 on repeated entries."""
    items = list(indices)
    if len(set(items)) != len(items):
        return 0
    sign = 1
    for a in range(len(items)):
        for b in range(a + 1, len(items)):
            if items[a] > items[b]:
                sign = -sign
    return sign


@dataclass(frozen=True, eq=False)
class FormField:
    """Degree-k form; components keyed by strictly increasing multi-indices."""

    degree: int
    components: dict[tuple[int, ...], ScalarField]

    def __post_init__(self):
        if not self.components:
            raise FieldError("a form needs at least one component", "degree")
        spec = _require_same_spec(*(c.spec for c in self.components.values()))
        if not 0 <= self.degree <= spec.ndim:
            raise FieldError(
                f"degree {self.degree} impossible in dimension {spec.ndim}",
                "degree",
            )
        expected = multi_indices(spec.ndim, self.degree)
        if sorted(self.components) != expected:
            raise FieldError(
                f"degree-{self.degree} form needs components {expected}", "degree"
            )
        ordered = {idx: self.components[idx] for idx in expected}
        object.__setattr__(self, "components", ordered)

    @property
    def spec(self) -> GridSpec:
        return next(iter(self.components.values())).spec

    @classmethod
    def zeros(cls, spec: GridSpec, degree: int) -> "FormField":
        return cls(
            degree,
            {idx: ScalarField.zeros(spec) for idx in multi_indices(spec.ndim, degree)},
        )

    @classmethod
    def from_scalar(cls, f: ScalarField) -> "FormField":
        return cls(0, {(): f})

    @classmethod
    def from_arrays(
        cls, spec: GridSpec, degree: int, arrays: Iterable[np.ndarray]
    ) -> "FormField":
        idxs = multi_indices(spec.ndim, degree)
        values = list(arrays)
        if len(values) != len(idxs):
            raise FieldError(f"expected {len(idxs)} component arrays", "degree")
        return cls(degree, {i: ScalarField(spec, a) for i, a in zip(idxs, values)})

    @classmethod
    def coordinate(cls, spec: GridSpec, axis: int) -> "FormField":
        """The constant 1-form dx^axis."""
        comps = {
            (a,): ScalarField.constant(spec, 1.0 if a == axis else 0.0)
            for a in range(spec.ndim)
        }
        return cls(1, comps)

    def scalar(self) -> ScalarField:
        if self.degree != 0:
            raise FieldError("only degree-0 forms are scalars", "degree")
        return self.components[()]

    def sup_norm(self) -> float:
        return max(c.sup_norm() for c in self.components.values())

    def map(self, fn: Callable[[ScalarField], ScalarField]) -> "FormField":
        return FormField(self.degree, {i: fn(c) for i, c in self.components.items()})

    def _combine(self, other: "FormField", op) -> "FormField":
        if other.degree != self.degree:
            raise FieldError("forms of different degree", "degree")
        return FormField(
            self.degree,
            {i: op(c, other.components[i]) for i, c in self.components.items()},
        )

    def __add__(self, other: "FormField") -> "FormField":
        return self._combine(other, lambda a, b: a + b)

    def __sub__(self, other: "FormField") -> "FormField":
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, other) -> "FormField":
        return self.map(lambda c: c * other)

    __rmul__ = __mul__

    def __neg__(self) -> "FormField":
        return self.map(lambda c: -c)


@dataclass(frozen=True, eq=False)
class VectorField:
    components: tuple[ScalarField, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        spec = _require_same_spec(*(c.spec for c in comps))
        if len(comps) != spec.ndim:
            raise FieldError(
                f"vector field needs {spec.ndim} components, got {len(comps)}",
                "shape",
            )
        object.__setattr__(self, "components", comps)

    @property
    def spec(self) -> GridSpec:
        return self.components[0].spec

    @classmethod
    def coordinate(cls, spec: GridSpec, axis: int) -> "VectorField":
        return cls(
            tuple(
                ScalarField.constant(spec, 1.0 if a == axis else 0.0)
                for a in range(spec.ndim)
            )
        )

    @classmethod
    def from_array(cls, spec: GridSpec, array: np.ndarray) -> "VectorField":
        return cls(tuple(ScalarField(spec, a) for a in array))

    def to_array(self) -> np.ndarray:
        return np.stack([c.samples for c in self.components])


@dataclass(frozen=True, eq=False)
class Frame:
    """q vector fields with optional structure coefficients c[i][j][k]."""

    vfs: tuple[VectorField, ...]
    c: tuple[tuple[tuple[ScalarField, ...], ...], ...] | None = None

    def __post_init__(self):
        vfs = tuple(self.vfs)
        if not vfs:
            raise FieldError("a frame needs at least one vector field", "shape")
        _require_same_spec(*(v.spec for v in vfs))
        object.__setattr__(self, "vfs", vfs)
        if self.c is None:
            return
        q = len(vfs)
        c = tuple(tuple(tuple(row) for row in plane) for plane in self.c)
        if len(c) != q or any(len(p) != q or any(len(r) != q for r in p) for p in c):
            raise FieldError(f"structure coefficients must be {q}x{q}x{q}", "shape")
        for i in range(q):
            for j in range(q):
                for k in range(q):
                    a = c[i][j][k].samples
                    b = c[j][i][k].samples
                    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1.0)
                    if np.max(np.abs(a + b)) > ANTISYMMETRY_TOL * scale:
                        raise FieldError(
                            f"c[{i}][{j}][{k}] is not antisymmetric in (i, j)",
                            "shape",
                        )
        object.__setattr__(self, "c", c)

    @property
    def q(self) -> int:
        return len(self.vfs)

    @property
    def spec(self) -> GridSpec:
        return self.vfs[0].spec

    def matrix(self, count: int | None = None) -> "MatrixField":
        """Rows are vector fields, columns coordinate directions."""
        count = self.q if count is None else count
        return MatrixField(tuple(self.vfs[i].components for i in range(count)))


@dataclass(frozen=True, eq=False)
class MatrixField:
    entries: tuple[tuple[ScalarField, ...], ...]

    def __post_init__(self):
        entries = tuple(tuple(row) for row in self.entries)
        if not entries or not entries[0]:
            raise FieldError("empty matrix field", "shape")
        if any(len(row) != len(entries[0]) for row in entries):
            raise FieldError("ragged matrix field", "shape")
        _require_same_spec(*(e.spec for row in entries for e in row))
        object.__setattr__(self, "entries", entries)

    @property
    def rows(self) -> int:
        return len(self.entries)

    @property
    def cols(self) -> int:
        return len(self.entries[0])

    @property
    def spec(self) -> GridSpec:
        return self.entries[0][0].spec

    @cached_property
    def array(self) -> np.ndarray:
        return np.stack([np.stack([e.samples for e in row]) for row in self.entries])

    @classmethod
    def from_array(cls, spec: GridSpec, array: np.ndarray) -> "MatrixField":
        return cls(tuple(tuple(ScalarField(spec, e) for e in row) for row in array))

    @classmethod
    def zeros(cls, spec: GridSpec, rows: int, cols: int) -> "MatrixField":
        return cls.from_array(spec, np.zeros((rows, cols) + spec.shape))

    @classmethod
    def identity(cls, spec: GridSpec) -> "MatrixField":
        eye = np.eye(spec.ndim).reshape((spec.ndim, spec.ndim) + (1,) * spec.ndim)
        return cls.from_array(spec, np.broadcast_to(eye, eye.shape[:2] + spec.shape))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.array)))

    def map(self, fn: Callable[[ScalarField], ScalarField]) -> "MatrixField":
        return MatrixField(tuple(tuple(fn(e) for e in row) for row in self.entries))

    def __add__(self, other: "MatrixField") -> "MatrixField":
        _require_same_spec(self.spec, other.spec)
        return MatrixField.from_array(self.spec, self.array + other.array)

    def __sub__(self, other: "MatrixField") -> "MatrixField":
        _require_same_spec(self.spec, other.spec)
        return MatrixField.from_array(self.spec, self.array - other.array)

    def __mul__(self, other) -> "MatrixField":
        if isinstance(other, ScalarField):
            return MatrixField.from_array(self.spec, self.array * other.samples)
        return MatrixField.from_array(self.spec, self.array * float(other))

    __rmul__ = __mul__


def det_array(m: np.ndarray) -> np.ndarray:
    """Samplewise determinant of an (n, n, *grid) array, n <= 3, by cofactors."""
    n = m.shape[0]
    if n == 1:
        return m[0, 0].copy()
    if n == 2:
        return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if n == 3:
        return (
            m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
            - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
            + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
        )
    raise FieldError(f"cofactor algebra supports n <= 3, got {n}", "shape")


def inv_array(m: np.ndarray, det: np.ndarray | None = None) -> np.ndarray:
    """Samplewise inverse by the adjugate; caller screens near-singular nodes."""
    n = m.shape[0]
    det = det_array(m) if det is None else det
    adj = np.empty_like(m)
    if n == 1:
        adj[0, 0] = 1.0
    elif n == 2:
        adj[0, 0] = m[1, 1]
        adj[0, 1] = -m[0, 1]
        adj[1, 0] = -m[1, 0]
        adj[1, 1] = m[0, 0]
    else:
        for i in range(3):
            for j in range(3):
                rows = [r for r in range(3) if r != j]
                cols = [c for c in range(3) if c != i]
                minor = (
                    m[rows[0], cols[0]] * m[rows[1], cols[1]]
                    - m[rows[0], cols[1]] * m[rows[1], cols[0]]
                )
                adj[i, j] = (-1) ** (i + j) * minor
    return adj / det


def matmul_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ik...,kj...->ij...", a, b)


def sample_function(spec: GridSpec, rule: Callable[..., np.ndarray]) -> ScalarField:
    """Evaluate a vectorized pointwise rule f(x0, x1, ...) at every node."""
    with np.errstate(all="ignore"):
        values = np.asarray(rule(*spec.nodes()), dtype=np.float64)
    values = np.broadcast_to(values, spec.shape).copy()
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        raise FieldError(f"rule returned {bad} non-finite values", "non-finite")
    return ScalarField(spec, values)


def one_sided_power(y: np.ndarray, p: float) -> np.ndarray:
    """max(0, y)^p with the convention 1_{y>=0} at p = 0."""
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        if p == 0:
            return np.where(y >= 0, 1.0, 0.0)
        return np.where(y >= 0, np.abs(y) ** p, 0.0)


def cell_average_power(y: np.ndarray, p: float, h: float) -> np.ndarray:
    """Average of max(0, .)^p over [y - h/2, y + h/2]; finite for p > -1."""
    if p <= -1:
        raise FieldError(f"cell averages need p > -1, got {p}", "non-finite")
    y = np.asarray(y, dtype=np.float64)
    q = p + 1.0
    upper = one_sided_power(y + 0.5 * h, q)
    lower = one_sided_power(y - 0.5 * h, q)
    return (upper - lower) / (q * h)


def smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def radial_profile(r: np.ndarray, inner: float, outer: float) -> np.ndarray:
    if not 0 <= inner < outer:
        raise FieldError(f"need 0 <= inner < outer, got {inner}, {outer}", "grid")
    return smooth_step((outer - np.asarray(r)) / (outer - inner))


def radial_cutoff(spec: GridSpec, inner: float, outer: float) -> ScalarField:
    """1 on |x| <= inner, 0 on |x| >= outer."""
    if outer >= spec.half_width:
        raise FieldError("cutoff support must fit inside the torus", "grid")
    return ScalarField(spec, radial_profile(spec.radius(), inner, outer))


def band_limited_field(
    spec: GridSpec, kmax: float, rng: np.random.Generator
) -> ScalarField:
    """Random real field whose angular wavenumbers satisfy |k| <= kmax."""
    noise = rng.standard_normal(spec.shape)
    spectrum = sp_fft.rfftn(noise)
    ks = [2 * np.pi * sp_fft.fftfreq(n, d=h) for n, h in zip(spec.sizes, spec.spacing)]
    ks[-1] = 2 * np.pi * sp_fft.rfftfreq(spec.sizes[-1], d=spec.spacing[-1])
    grids = np.meshgrid(*ks, indexing="ij")
    kmag = np.sqrt(sum(k**2 for k in grids))
    spectrum[kmag > kmax] = 0.0
    values = sp_fft.irfftn(spectrum, s=spec.shape)
    peak = np.max(np.abs(values))
    return ScalarField(spec, values / peak if peak > 0 else values)


def _header(kind: int, spec: GridSpec) -> bytes:
    parts = [ZYGF_MAGIC, struct.pack("<III", ZYGF_VERSION, kind, spec.ndim)]
    parts.append(struct.pack(f"<{spec.ndim}I", *spec.sizes))
    parts.append(struct.pack("<d", spec.half_width))
    return b"".join(parts)


def _payload(fields: Iterable[ScalarField]) -> bytes:
    return b"".join(
        np.ascontiguousarray(f.samples, dtype="<f8").tobytes() for f in fields
    )


def field_io_write(path: Path, obj) -> None:
    path = Path(path)
    if isinstance(obj, ScalarField):
        blob = _header(KIND_SCALAR, obj.spec) + _payload([obj])
    elif isinstance(obj, FormField):
        spec = obj.spec
        idxs = list(obj.components)
        head = struct.pack("<II", obj.degree, len(idxs))
        flat = [i for idx in idxs for i in idx]
        head += struct.pack(f"<{len(flat)}I", *flat)
        blob = _header(KIND_FORM, spec) + head + _payload(obj.components.values())
    elif isinstance(obj, Frame):
        spec = obj.spec
        head = struct.pack("<II", obj.q, 0 if obj.c is None else 1)
        fields = [comp for vf in obj.vfs for comp in vf.components]
        if obj.c is not None:
            fields += [ck for plane in obj.c for row in plane for ck in row]
        blob = _header(KIND_FRAME, spec) + head + _payload(fields)
    elif isinstance(obj, MatrixField):
        head = struct.pack("<II", obj.rows, obj.cols)
        fields = [e for row in obj.entries for e in row]
        blob = _header(KIND_MATRIX, obj.spec) + head + _payload(fields)
    else:
        raise FieldError(f"cannot write {type(obj).__name__}", "format")
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + ".tmp")
    temp_path.write_bytes(blob)
    temp_path.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise FieldError("truncated ZYGF file", "format")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def fields(self, spec: GridSpec, count: int) -> list[ScalarField]:
        size = spec.size * 8
        out = []
        for _ in range(count):
            if self.offset + size > len(self.data):
                raise FieldError("truncated ZYGF payload", "format")
            chunk = np.frombuffer(self.data, dtype="<f8", count=spec.size,
                                  offset=self.offset)
            self.offset += size
            out.append(ScalarField(spec, chunk.astype(np.float64).reshape(spec.shape)))
        return out


def field_io_read(path: Path):
    data = Path(path).read_bytes()
    if data[:4] != ZYGF_MAGIC:
        raise FieldError(f"{path} is not a ZYGF file", "format")
    reader = _Reader(data)
    reader.offset = 4
    version, kind, ndim = reader.take("<III")
    if version != ZYGF_VERSION:
        raise FieldError(f"unsupported ZYGF version {version}", "format")
    sizes = reader.take(f"<{ndim}I")
    (half_width,) = reader.take("<d")
    spec = GridSpec(ndim, tuple(sizes), half_width)
    if kind == KIND_SCALAR:
        result = reader.fields(spec, 1)[0]
    elif kind == KIND_FORM:
        degree, count = reader.take("<II")
        flat = reader.take(f"<{degree * count}I") if degree * count else ()
        idxs = [tuple(flat[i * degree:(i + 1) * degree]) for i in range(count)]
        result = FormField(degree, dict(zip(idxs, reader.fields(spec, count))))
    elif kind == KIND_FRAME:
        q, has_c = reader.take("<II")
        comps = reader.fields(spec, q * ndim)
        vfs = tuple(
            VectorField(tuple(comps[i * ndim:(i + 1) * ndim])) for i in range(q)
        )
        c = None
        if has_c:
            flat_c = reader.fields(spec, q**3)
            c = tuple(
                tuple(tuple(flat_c[(i * q + j) * q + k] for k in range(q))
                      for j in range(q))
                for i in range(q)
            )
        result = Frame(vfs, c)
    elif kind == KIND_MATRIX:
        rows, cols = reader.take("<II")
        flat_m = reader.fields(spec, rows * cols)
        result = MatrixField(
            tuple(tuple(flat_m[r * cols:(r + 1) * cols]) for r in range(rows))
        )
    else:
        raise FieldError(f"unknown ZYGF kind {kind}", "format")
    if reader.offset != len(data):
        raise FieldError("trailing bytes after ZYGF payload", "format")
    return result



def main():
    parser = argparse.ArgumentParser(description="Write a 1-D one-sided power field.")
    parser.add_argument("--exponent", type=float, default=0.7)
    parser.add_argument("--size", type=int, default=4096)
    parser.add_argument("--out", default="cusp.zygf")
    args = parser.parse_args()
    spec = GridSpec(1, (args.size,))
    chi = radial_cutoff(spec, 0.25, 0.5)
    f = sample_function(spec, lambda y: one_sided_power(y, args.exponent)) * chi
    field_io_write(Path(args.out), f)
    print(f"Wrote {args.out}")


if __name__ == "__main__":
    main()
