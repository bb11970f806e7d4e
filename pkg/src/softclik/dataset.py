"""Actuation -> centerline samples from the rod solver, with a binary file format.

File layout (little endian)::

    offset  size  field
    0       8     magic b"SOFTCLIK"
    8       4     u32 version (1)
    12      4     u32 m
    16      4     u32 n_s
    20      4     u32 d
    24      8     u64 N
    32      8     u64 seed
    40      8     u64 rod parameter hash
    48      8     u64 failed-sample count
    56      8     reserved (zero)
    64      ...   f64 q_matrix (N, m), then f64 shapes (N, n_s, d), row-major
"""

from __future__ import annotations

import csv
import logging
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import FIBER_BOX, Box, sample_rng, uniform_grid
from .rod_model import RodParams, solve_bvp_batch

log = logging.getLogger(__name__)

MAGIC = b"SOFTCLIK"
VERSION = 1
HEADER = struct.Struct("<8sIIIIQQQQ8x")
assert HEADER.size == 64

MAX_RETRIES = 3
MAX_FAILURE_RATE = 0.01


class FormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class GenerationError(RuntimeError):
    pass


@dataclass
class Dataset:
    q: np.ndarray  # (N, m)
    shapes: np.ndarray  # (N, n_s, d)
    seed: int = 0
    rod_hash: int = 0
    failed: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype="<f8")
        self.shapes = np.ascontiguousarray(self.shapes, dtype="<f8")
        if self.q.ndim != 2 or self.shapes.ndim != 3 or self.q.shape[0] != self.shapes.shape[0]:
            raise ValueError(f"inconsistent shapes q{self.q.shape} vs shapes{self.shapes.shape}")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.shapes))):
            raise ValueError("dataset contains non-finite values")

    @property
    def N(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.q.shape[1]

    @property
    def n_s(self) -> int:
        return self.shapes.shape[1]

    @property
    def d(self) -> int:
        return self.shapes.shape[2]

    @property
    def grid(self) -> np.ndarray:
        return uniform_grid(self.n_s)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.q[idx], self.shapes[idx], self.seed, self.rod_hash, 0, dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            (self.seed, self.rod_hash, self.failed) == (other.seed, other.rod_hash, other.failed)
            and self.q.shape == other.q.shape
            and self.shapes.shape == other.shapes.shape
            and self.q.tobytes() == other.q.tobytes()
            and self.shapes.tobytes() == other.shapes.tobytes()
        )


def _draw(box: Box, seed: int, slot: int, attempt: int) -> np.ndarray:
    rng = sample_rng(seed, slot)
    draws = rng.uniform(box.lo, box.hi, size=(attempt + 1, box.m))
    return draws[attempt]


def _solve_chunk(args):
    p, Q, n_s, tol = args
    shapes, _, ok = solve_bvp_batch(p, Q, n_s, tol)
    return shapes, ok


def _worker_count(workers):
    if workers is None:
        workers = int(os.environ.get("SOFTCLIK_THREADS", "1"))
    cap = os.environ.get("SOFTCLIK_THREADS")
    if cap:
        workers = min(workers, int(cap))
    return max(1, workers)


def generate(p: RodParams, box: Box = FIBER_BOX, N: int = 20_000, n_s: int = 100, seed: int = 0,
             workers: int | None = None, chunk: int = 512, tol: float = 1e-10) -> Dataset:
    """Sample activations uniformly in ``box`` and solve the rod for each.

    Slot ``i`` draws from a stream keyed on ``seed ^ i``; a failed solve is
    replaced by the slot's next draw, at most ``MAX_RETRIES`` times. The result
    is identical for any ``workers`` and ``chunk``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if box.m != p.m:
        raise ValueError(f"box has {box.m} coordinates, rod has {p.m} fibers")
    workers = _worker_count(workers)
    t0 = time.perf_counter()

    q = np.empty((N, p.m))
    shapes = np.empty((N, n_s, 3))
    done = np.zeros(N, dtype=bool)
    pending = np.arange(N)
    failures = 0
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for attempt in range(MAX_RETRIES + 1):
            if pending.size == 0:
                break
            Q = np.stack([_draw(box, seed, int(i), attempt) for i in pending])
            jobs = [(p, Q[k:k + chunk], n_s, tol) for k in range(0, len(pending), chunk)]
            results = list(pool.map(_solve_chunk, jobs) if pool else map(_solve_chunk, jobs))
            sh = np.concatenate([r[0] for r in results])
            ok = np.concatenate([r[1] for r in results])
            failures += int(np.sum(~ok))
            q[pending[ok]], shapes[pending[ok]] = Q[ok], sh[ok]
            done[pending[ok]] = True
            pending = pending[~ok]
    finally:
        if pool:
            pool.shutdown()

    lost = pending.size
    if lost > MAX_FAILURE_RATE * N:
        raise GenerationError(f"{lost} of {N} samples failed after {MAX_RETRIES} retries; "
                              "check the rod parameters")
    if lost:
        log.warning("dropping %d unrecoverable sample(s)", lost)
    ds = Dataset(q[done], shapes[done], seed=seed, rod_hash=p.digest(), failed=failures)
    ds.meta.update(wall_time=time.perf_counter() - t0, generated_at=time.time(),
                   unrecoverable=int(lost), workers=workers)
    return ds


def split(ds: Dataset, fractions=(0.64, 0.16, 0.20), seed: int = 0):
    """Seeded disjoint train/validation/test split.

    Sizes are floored, then the leftover samples go to the parts with the
    largest fractional remainders (earlier parts win ties).
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.size != 3 or np.any(fr < 0.0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    exact = fr * ds.N
    sizes = np.floor(exact).astype(int)
    order = np.argsort(-(exact - sizes), kind="stable")
    sizes[order[: ds.N - sizes.sum()]] += 1
    perm = np.random.Generator(np.random.Philox(key=seed)).permutation(ds.N)
    bounds = np.cumsum(sizes)[:-1]
    return tuple(ds.subset(np.sort(part)) for part in np.split(perm, bounds))


def to_bytes(ds: Dataset) -> bytes:
    head = HEADER.pack(MAGIC, VERSION, ds.m, ds.n_s, ds.d, ds.N, ds.seed & (2**64 - 1),
                       ds.rod_hash & (2**64 - 1), ds.failed)
    return head + ds.q.tobytes() + ds.shapes.tobytes()


def from_bytes(blob: bytes) -> Dataset:
    if len(blob) < HEADER.size:
        raise FormatError(f"file shorter than the {HEADER.size}-byte header", len(blob))
    magic, version, m, n_s, d, N, seed, rod_hash, failed = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 8)
    if any(blob[HEADER.size - 8:HEADER.size]):
        raise FormatError("reserved header bytes are not zero", HEADER.size - 8)
    if m < 1 or n_s < 2 or d < 1:
        raise FormatError(f"invalid dimensions m={m} n_s={n_s} d={d}", 12)
    n_q, n_r = N * m, N * n_s * d
    expected = HEADER.size + 8 * (n_q + n_r)
    if len(blob) != expected:
        raise FormatError(f"expected {expected} bytes, found {len(blob)}", min(len(blob), expected))
    q = np.frombuffer(blob, dtype="<f8", count=n_q, offset=HEADER.size).reshape(N, m)
    shapes = np.frombuffer(blob, dtype="<f8", count=n_r, offset=HEADER.size + 8 * n_q)
    try:
        return Dataset(q.copy(), shapes.reshape(N, n_s, d).copy(), seed, rod_hash, failed)
    except ValueError as exc:
        raise FormatError(str(exc), HEADER.size) from exc


def save(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ds))


def load(path) -> Dataset:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def export_csv(ds: Dataset, path) -> None:
    """One row per (sample, node)."""
    grid = ds.grid
    coords = "xyz"[: ds.d] if ds.d <= 3 else [f"x{k}" for k in range(ds.d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "node", "s"] + [f"q{i + 1}" for i in range(ds.m)] + list(coords))
        for i in range(ds.N):
            qi = [repr(float(v)) for v in ds.q[i]]
            for k in range(ds.n_s):
                w.writerow([i, k, repr(float(grid[k]))] + qi
                           + [repr(float(v)) for v in ds.shapes[i, k]])
