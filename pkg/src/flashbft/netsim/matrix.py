"""One-way latency matrices and their CSV format.

File format: a header row of region labels, then one row per region with
comma-separated delays in milliseconds.  Files holding round-trip times
(e.g. cloudping grids) are loaded with ``rtt=True`` which halves every entry.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class LatencyMatrix:
    labels: tuple
    delays: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=float)
        n = len(self.labels)
        if d.shape != (n, n):
            raise ValueError(f"matrix shape {d.shape} does not match {n} labels")
        if not np.all(np.isfinite(d)):
            raise ValueError("delays must be finite")
        if np.any(d < 0):
            raise ValueError("delays must be non-negative")
        if np.any(np.diag(d) != 0):
            raise ValueError("diagonal must be zero")
        d.setflags(write=False)
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        return len(self.labels)

    def __eq__(self, other):
        return (
            isinstance(other, LatencyMatrix)
            and self.labels == other.labels
            and np.array_equal(self.delays, other.delays)
        )

    def __hash__(self):
        return hash((self.labels, self.delays.tobytes()))

    def __getitem__(self, ij):
        return float(self.delays[ij])

    def scaled(self, factor: float) -> "LatencyMatrix":
        return LatencyMatrix(self.labels, self.delays * factor)

    def with_link_factors(self, factors: dict) -> "LatencyMatrix":
        d = self.delays.copy()
        for (i, j), f in factors.items():
            d[i, j] *= f
        return LatencyMatrix(self.labels, d)

    def submatrix(self, idx) -> "LatencyMatrix":
        idx = list(idx)
        return LatencyMatrix([self.labels[i] for i in idx], self.delays[np.ix_(idx, idx)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.labels)
        for row in self.delays:
            w.writerow([f"{x:.3f}".rstrip("0").rstrip(".") if x else "0" for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, rtt: bool = False) -> "LatencyMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        if not rows:
            raise ValueError("empty matrix file")
        labels = [c.strip() for c in rows[0]]
        body = rows[1:]
        if len(body) != len(labels):
            raise ValueError(f"expected {len(labels)} rows, found {len(body)}")
        data = []
        for lineno, row in enumerate(body, 2):
            if len(row) != len(labels):
                raise ValueError(f"line {lineno}: expected {len(labels)} values, found {len(row)}")
            try:
                data.append([float(c) for c in row])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        d = np.array(data)
        if rtt:
            d = d / 2.0
        return cls(labels, d)

    @classmethod
    def load(cls, path, rtt: bool = False) -> "LatencyMatrix":
        return cls.from_csv(Path(path).read_text(), rtt=rtt)

    @classmethod
    def uniform(cls, n: int, delay: float) -> "LatencyMatrix":
        d = np.full((n, n), float(delay))
        np.fill_diagonal(d, 0.0)
        return cls([f"r{i}" for i in range(n)], d)


# Region coordinates (lat, lon) of the 21 AWS regions used for the shipped
# snapshot, in cloudping's alphabetical grid order.
AWS21_REGIONS = [
    ("af-south-1", -33.92, 18.42),
    ("ap-east-1", 22.32, 114.17),
    ("ap-northeast-1", 35.68, 139.69),
    ("ap-northeast-2", 37.57, 126.98),
    ("ap-northeast-3", 34.69, 135.50),
    ("ap-south-1", 19.08, 72.88),
    ("ap-southeast-1", 1.35, 103.82),
    ("ap-southeast-2", -33.87, 151.21),
    ("ca-central-1", 45.50, -73.57),
    ("eu-central-1", 50.11, 8.68),
    ("eu-north-1", 59.33, 18.07),
    ("eu-south-1", 45.46, 9.19),
    ("eu-west-1", 53.35, -6.26),
    ("eu-west-2", 51.51, -0.13),
    ("eu-west-3", 48.86, 2.35),
    ("me-south-1", 26.07, 50.56),
    ("sa-east-1", -23.55, -46.63),
    ("us-east-1", 38.90, -77.44),
    ("us-east-2", 39.96, -83.00),
    ("us-west-1", 37.35, -121.96),
    ("us-west-2", 45.84, -119.70),
]


# 51 metropolitan sites with the regional skew of commercial proxy networks
# (mostly Europe and North America), alphabetical by city.
WORLD51_CITIES = [
    ("amsterdam", 52.37, 4.90), ("atlanta", 33.75, -84.39), ("auckland", -36.85, 174.76),
    ("bangkok", 13.76, 100.50), ("barcelona", 41.39, 2.17), ("berlin", 52.52, 13.40),
    ("bogota", 4.71, -74.07), ("brussels", 50.85, 4.35), ("bucharest", 44.43, 26.10),
    ("budapest", 47.50, 19.04), ("buenos-aires", -34.60, -58.38), ("chicago", 41.88, -87.63),
    ("copenhagen", 55.68, 12.57), ("dallas", 32.78, -96.80), ("denver", 39.74, -104.99),
    ("dubai", 25.20, 55.27), ("dublin", 53.35, -6.26), ("frankfurt", 50.11, 8.68),
    ("helsinki", 60.17, 24.94), ("hong-kong", 22.32, 114.17), ("istanbul", 41.01, 28.98),
    ("johannesburg", -26.20, 28.05), ("lisbon", 38.72, -9.14), ("london", 51.51, -0.13),
    ("los-angeles", 34.05, -118.24), ("madrid", 40.42, -3.70), ("miami", 25.76, -80.19),
    ("milan", 45.46, 9.19), ("montreal", 45.50, -73.57), ("moscow", 55.76, 37.62),
    ("mumbai", 19.08, 72.88), ("new-york", 40.71, -74.01), ("oslo", 59.91, 10.75),
    ("paris", 48.86, 2.35), ("prague", 50.08, 14.44), ("san-francisco", 37.77, -122.42),
    ("santiago", -33.45, -70.67), ("sao-paulo", -23.55, -46.63), ("seattle", 47.61, -122.33),
    ("seoul", 37.57, 126.98), ("singapore", 1.35, 103.82), ("sofia", 42.70, 23.32),
    ("stockholm", 59.33, 18.07), ("sydney", -33.87, 151.21), ("tel-aviv", 32.09, 34.78),
    ("tokyo", 35.68, 139.69), ("toronto", 43.65, -79.38), ("vienna", 48.21, 16.37),
    ("warsaw", 52.23, 21.01), ("washington", 38.90, -77.04), ("zurich", 47.38, 8.54),
]


def great_circle_km(a, b) -> float:
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * 6371.0 * math.asin(min(1.0, math.sqrt(h)))


def geo_matrix(sites, inflation: float = 1.35, fiber_km_per_ms: float = 200.0, base_ms: float = 2.0) -> LatencyMatrix:
    """One-way delays from site coordinates: routed distance over fiber speed plus a fixed overhead."""
    n = len(sites)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                km = great_circle_km(sites[i][1:], sites[j][1:])
                d[i, j] = round(km * inflation / fiber_km_per_ms + base_ms, 1)
    return LatencyMatrix([s[0] for s in sites], d)


def random_geo_sites(n: int, rng) -> list:
    """Sites spread over populated latitudes; used for synthetic large matrices."""
    sites = []
    for i in range(n):
        lat = float(rng.uniform(-45, 62))
        lon = float(rng.uniform(-125, 150))
        sites.append((f"site{i:02d}", lat, lon))
    return sites


def random_metric_matrix(n: int, rng) -> LatencyMatrix:
    """Symmetric matrix satisfying the triangle inequality (points on a plane)."""
    pts = rng.uniform(0, 100, size=(n, 2))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    d = np.round(d, 3)
    np.fill_diagonal(d, 0.0)
    return LatencyMatrix([f"r{i}" for i in range(n)], d)


def data_path(name: str) -> Path:
    return Path(__file__).resolve().parent.parent / "data" / name
