"""Grid geometry, periodic indexing, the ocean state container and snapshot I/O.

Fields are stored as numpy arrays of shape (ny, nx) in C order, so the x index
j runs fastest in memory and an element is addressed as ``field[k, j]``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"DCST"
SNAPSHOT_VERSION = 1
STATE_DTYPE = np.float32


@dataclass(frozen=True)
class PhysParams:
    g: float = 9.806
    f: float = 1.405e-4
    H_eq: float = 230.0

    def __post_init__(self):
        if not self.g > 0 or not self.H_eq > 0 or self.f == 0:
            raise ValueError(f"invalid physical parameters: {self}")

    @property
    def gb_coeff(self) -> float:
        """g*H_eq/f, the factor linking eta gradients to balanced transports."""
        return self.g * self.H_eq / self.f


@dataclass(frozen=True)
class ModelGrid:
    nx: int
    ny: int
    dx: float
    dy: float
    periodic: bool = True

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("cell sizes must be positive")
        if not self.periodic:
            raise ValueError("only doubly periodic domains are supported")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def Lx(self) -> float:
        return self.nx * self.dx

    @property
    def Ly(self) -> float:
        return self.ny * self.dy

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_state(self) -> int:
        return 3 * self.nx * self.ny

    def cell_center(self, j: int, k: int) -> tuple[float, float]:
        return ((j + 0.5) * self.dx, (k + 0.5) * self.dy)


@dataclass(frozen=True)
class CoarseGrid:
    """Decimated grid carrying random numbers.

    Coarse point (a, b) sits on the center of fine cell
    (a*c_omega + offset_j, b*c_omega + offset_k).
    """

    grid: ModelGrid
    c_omega: int = 5
    offset_j: int = 0
    offset_k: int = 0

    def __post_init__(self):
        c = self.c_omega
        if c < 1 or c % 2 == 0:
            raise ValueError(f"c_omega must be odd and positive, got {c}")
        if self.grid.nx % c or self.grid.ny % c:
            raise ValueError(f"grid {self.grid.nx}x{self.grid.ny} not divisible by c_omega={c}")
        if not (0 <= self.offset_j < c and 0 <= self.offset_k < c):
            raise ValueError("offsets must lie in [0, c_omega)")
        if self.nx < 4 or self.ny < 4:
            raise ValueError("coarse grid needs at least 4x4 points for bicubic interpolation")

    @property
    def nx(self) -> int:
        return self.grid.nx // self.c_omega

    @property
    def ny(self) -> int:
        return self.grid.ny // self.c_omega

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def n_points(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return self.c_omega * self.grid.dx

    @property
    def dy(self) -> float:
        return self.c_omega * self.grid.dy

    def fine_cell(self, a: int, b: int) -> tuple[int, int]:
        return (a * self.c_omega + self.offset_j, b * self.c_omega + self.offset_k)

    def position(self, a: int, b: int) -> tuple[float, float]:
        return self.grid.cell_center(*self.fine_cell(a, b))

    def coarse_point(self, j: int, k: int) -> tuple[int, int]:
        """Coarse point co-located with fine cell (j, k); error if there is none."""
        c = self.c_omega
        j, k = wrap_index(j, k, self.grid)
        if (j - self.offset_j) % c or (k - self.offset_k) % c:
            raise ValueError(
                f"cell ({j},{k}) is not co-located with a coarse point at offsets "
                f"({self.offset_j},{self.offset_k}); align the coarse grid first"
            )
        return ((j - self.offset_j) // c, (k - self.offset_k) // c)

    def nearest_point(self, j: int, k: int) -> tuple[int, int]:
        """Coarse point whose fine cell is nearest to fine cell (j, k)."""
        c = self.c_omega
        a = int(math.floor((j - self.offset_j) / c + 0.5)) % self.nx
        b = int(math.floor((k - self.offset_k) / c + 0.5)) % self.ny
        return (a, b)


@dataclass
class OceanState:
    eta: np.ndarray
    hu: np.ndarray
    hv: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.eta = np.ascontiguousarray(self.eta, dtype=STATE_DTYPE)
        self.hu = np.ascontiguousarray(self.hu, dtype=STATE_DTYPE)
        self.hv = np.ascontiguousarray(self.hv, dtype=STATE_DTYPE)
        if not (self.eta.shape == self.hu.shape == self.hv.shape) or self.eta.ndim != 2:
            raise ValueError("eta, hu, hv must be 2-D arrays of identical shape")
        self.t = float(self.t)

    @classmethod
    def at_rest(cls, grid: ModelGrid, t: float = 0.0) -> "OceanState":
        z = np.zeros(grid.shape, STATE_DTYPE)
        return cls(z, z.copy(), z.copy(), t)

    @property
    def shape(self) -> tuple[int, int]:
        return self.eta.shape

    def copy(self) -> "OceanState":
        return OceanState(self.eta.copy(), self.hu.copy(), self.hv.copy(), self.t)

    def stacked(self) -> np.ndarray:
        return np.stack([self.eta, self.hu, self.hv])

    @classmethod
    def from_stacked(cls, arr: np.ndarray, t: float) -> "OceanState":
        return cls(arr[0].copy(), arr[1].copy(), arr[2].copy(), t)

    def validate(self, phys: PhysParams) -> None:
        for name in ("eta", "hu", "hv"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite values in {name}")
        if np.min(self.eta) + phys.H_eq <= 0:
            raise ValueError("dry cell: H_eq + eta <= 0")

    def equals(self, other: "OceanState") -> bool:
        return (
            self.t == other.t
            and np.array_equal(self.eta, other.eta)
            and np.array_equal(self.hu, other.hu)
            and np.array_equal(self.hv, other.hv)
        )


def wrap_index(j: int, k: int, grid: ModelGrid) -> tuple[int, int]:
    return (int(j) % grid.nx, int(k) % grid.ny)


def locate_cell(x: float, y: float, grid: ModelGrid) -> tuple[int, int]:
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite position ({x}, {y})")
    j = int(math.floor((x % grid.Lx) / grid.dx))
    k = int(math.floor((y % grid.Ly) / grid.dy))
    # x % Lx can round up to Lx for tiny negative x
    return (min(j, grid.nx - 1), min(k, grid.ny - 1))


def locate_cells(x: np.ndarray, y: np.ndarray, grid: ModelGrid) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized locate_cell."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite position")
    j = np.minimum(np.floor(np.mod(x, grid.Lx) / grid.dx).astype(np.int64), grid.nx - 1)
    k = np.minimum(np.floor(np.mod(y, grid.Ly) / grid.dy).astype(np.int64), grid.ny - 1)
    return j, k


def align_coarse_offset(obs_cell: tuple[int, int], coarse: CoarseGrid) -> CoarseGrid:
    j, k = wrap_index(obs_cell[0], obs_cell[1], coarse.grid)
    c = coarse.c_omega
    return replace(coarse, offset_j=j % c, offset_k=k % c)


def write_snapshot(path: str | Path, state: OceanState, version: int = SNAPSHOT_VERSION) -> None:
    ny, nx = state.shape
    header = SNAPSHOT_MAGIC + struct.pack("<IIId", version, nx, ny, state.t)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (state.eta, state.hu, state.hv):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_snapshot(path: str | Path) -> OceanState:
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a state snapshot")
    version, nx, ny, t = struct.unpack_from("<IIId", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    n = nx * ny
    off = 4 + struct.calcsize("<IIId")
    if len(data) != off + 3 * 4 * n:
        raise ValueError(f"{path}: truncated snapshot")
    fields = np.frombuffer(data, dtype="<f4", count=3 * n, offset=off).reshape(3, ny, nx)
    return OceanState(fields[0].copy(), fields[1].copy(), fields[2].copy(), t)


__all__ = [
    "PhysParams",
    "ModelGrid",
    "CoarseGrid",
    "OceanState",
    "wrap_index",
    "locate_cell",
    "locate_cells",
    "align_coarse_offset",
    "write_snapshot",
    "read_snapshot",
]
