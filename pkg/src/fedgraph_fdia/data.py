"""Load profiles, attack injection and persisted detection datasets."""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grid import GridGraph

ATTACK_KINDS = ("random_uniform", "random_gaussian", "replay", "scale")
STD_FRACTION = 0.01


class ProfileError(ValueError):
    def __init__(self, message, row=None, column=None):
        self.row, self.column = row, column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------- profiles


@dataclass(frozen=True)
class LoadProfile:
    """Hourly (p, q) per bus; ``values`` has shape (T, n_buses, 2)."""

    values: np.ndarray

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values[..., 0]

    @property
    def q(self):
        return self.values[..., 1]


def scale_profile(series, base):
    """Affine map of ``series`` to mean ``base`` and std ``0.01 * |base|``."""
    x = np.asarray(series, dtype=float)
    if base == 0:
        warnings.warn("zero base load: scaled series is identically zero", RuntimeWarning, stacklevel=2)
        return np.zeros_like(x)
    std = x.std()
    if std == 0:
        raise ProfileError("cannot scale a zero-variance series")
    return base + STD_FRACTION * abs(base) * (x - x.mean()) / std


def _scale_buses(shapes, grid):
    """shapes: (T, n) standardized-or-raw per-bus series -> LoadProfile."""
    T, n = shapes.shape
    out = np.zeros((T, n, 2))
    for v, bus in enumerate(grid.buses):
        for k, base in enumerate((bus.base_load_p, bus.base_load_q)):
            if base != 0:
                out[:, v, k] = scale_profile(shapes[:, v], base)
    return LoadProfile(out)


def synthesize_profiles(grid: GridGraph, T: int, seed: int = 0, *,
                        daily_amplitude=1.0, weekly_amplitude=0.5,
                        noise_amplitude=0.3, common_noise_share=0.9,
                        noise_persistence=0.9):
    """Seeded stand-in for a measured system load curve.

    Each bus gets the same daily (24 h) and weekly (168 h) sinusoids plus
    Gaussian noise of std ``noise_amplitude``. A share of the noise variance is
    a system-wide AR(1) process (weather-like, common to all buses); the rest
    is independent per bus. Reactive power follows the active-power shape
    (constant power factor). Every series is then passed through
    :func:`scale_profile`.
    """
    if T < 1:
        raise ValueError("profile length must be positive")
    rng = np.random.default_rng(seed)
    n = grid.n_buses
    t = np.arange(T)
    shape = (daily_amplitude * np.sin(2 * np.pi * t / 24 - np.pi / 2)
             + weekly_amplitude * np.sin(2 * np.pi * t / 168))
    common = np.zeros(T)
    innov = rng.standard_normal(T) * np.sqrt(1 - noise_persistence ** 2)
    common[0] = rng.standard_normal()
    for k in range(1, T):
        common[k] = noise_persistence * common[k - 1] + innov[k]
    idio = rng.standard_normal((T, n))
    noise = noise_amplitude * (np.sqrt(common_noise_share) * common[:, None]
                               + np.sqrt(1 - common_noise_share) * idio)
    shapes = shape[:, None] + noise
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return _scale_buses(shapes, grid)


def ingest_profiles(path, grid: GridGraph):
    """Read an hourly load CSV (header row, numeric cells).

    Column ``k`` feeds bus ``k``; columns are reused cyclically when there are
    fewer columns than buses.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ProfileError("empty profile file") from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise ProfileError("header has empty column names", row=1)
        rows = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise ProfileError(f"expected {len(header)} cells, found {len(row)}", row=row_no)
            vals = []
            for name, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ProfileError(f"non-numeric cell {cell!r}", row=row_no, column=name) from None
                if not np.isfinite(vals[-1]):
                    raise ProfileError(f"non-finite cell {cell!r}", row=row_no, column=name)
            rows.append(vals)
    if not rows:
        raise ProfileError("profile file has no data rows")
    data = np.asarray(rows)
    cols = data[:, np.arange(grid.n_buses) % data.shape[1]]
    for k in range(data.shape[1]):
        if data[:, k].std() == 0:
            raise ProfileError("column has zero variance", column=header[k])
    return _scale_buses(cols, grid)


# ---------------------------------------------------------------- attacks


@dataclass(frozen=True)
class AttackSpec:
    """One attack generator.

    ``a``/``b`` bound the uniform perturbation in units of the bus base load;
    ``sigma_z`` scales the Gaussian perturbation in units of the series std;
    ``delta`` is the replay lag in timesteps; ``alpha_s`` the scale factor.
    """

    kind: str
    a: float = -0.1
    b: float = 0.1
    sigma_z: float = 1.0
    delta: int = 12
    alpha_s: float = 1.2
    target_fraction: float = 0.3

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.a < self.b:
            raise ValueError("uniform attack needs a < b")
        if self.sigma_z <= 0:
            raise ValueError("sigma_z must be positive")
        if self.delta < 1:
            raise ValueError("replay offset must be >= 1")
        if self.alpha_s <= 0 or self.alpha_s == 1:
            raise ValueError("scale factor must be positive and != 1")
        if not 0 < self.target_fraction <= 1:
            raise ValueError("target fraction must be in (0, 1]")

    @classmethod
    def unchecked(cls, **kwargs):
        """Build a spec without invariant checks (degenerate test cases)."""
        spec = object.__new__(cls)
        for f, default in _SPEC_DEFAULTS.items():
            object.__setattr__(spec, f, kwargs.get(f, default))
        return spec


_SPEC_DEFAULTS = {"kind": "random_uniform", "a": -0.1, "b": 0.1, "sigma_z": 1.0,
                  "delta": 12, "alpha_s": 1.2, "target_fraction": 0.3}


def inject_attack(window, spec: AttackSpec, rng, base=None, series_std=None):
    """Attack the final timestep of ``window`` (n_buses, W, 2) at a random bus subset.

    ``base`` (n_buses, 2) scales uniform perturbations and restricts targets to
    buses with a non-zero base load; ``series_std`` scales Gaussian ones. Both
    default to ones. Returns ``(attacked_window, labels)``.
    """
    rng = np.random.default_rng(rng)
    window = np.asarray(window)
    n, W, F = window.shape
    base = np.ones((n, F)) if base is None else np.asarray(base, dtype=float)
    series_std = np.ones((n, F)) if series_std is None else np.asarray(series_std, dtype=float)
    if spec.kind == "replay" and spec.delta >= W:
        raise ValueError(f"replay offset {spec.delta} needs a window longer than {W}")
    candidates = np.flatnonzero(np.any(base != 0, axis=1))
    if candidates.size == 0:
        raise ValueError("no bus has a non-zero base load to attack")
    k = max(1, int(round(spec.target_fraction * candidates.size)))
    targets = np.sort(rng.choice(candidates, size=k, replace=False))

    out = window.astype(float, copy=True)
    last = out[targets, -1, :]
    if spec.kind == "random_uniform":
        alpha = rng.uniform(spec.a, spec.b, size=last.shape) if spec.a < spec.b else np.full(last.shape, spec.a)
        out[targets, -1, :] = last + alpha * np.abs(base[targets])
    elif spec.kind == "random_gaussian":
        out[targets, -1, :] = last + rng.normal(0.0, 1.0, size=last.shape) * spec.sigma_z * series_std[targets]
    elif spec.kind == "replay":
        out[targets, -1, :] = out[targets, -1 - spec.delta, :]
    else:
        out[targets, -1, :] = spec.alpha_s * last
    labels = np.zeros(n, dtype=np.uint8)
    labels[targets] = 1
    return out, labels


@dataclass(frozen=True)
class AttackConfig:
    attack_fraction: float = 0.5
    kinds: tuple[str, ...] = ATTACK_KINDS
    uniform_low: float = -0.1
    uniform_high: float = 0.1
    sigma_z: float = 1.0
    delta: int = 12
    scale_choices: tuple[float, ...] = (0.8, 1.2)
    target_fraction: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "scale_choices", tuple(float(s) for s in self.scale_choices))
        if not 0 <= self.attack_fraction <= 1:
            raise ValueError("attack_fraction must be in [0, 1]")
        if not self.kinds or any(k not in ATTACK_KINDS for k in self.kinds):
            raise ValueError(f"kinds must be a non-empty subset of {ATTACK_KINDS}")
        self.spec(self.kinds[0], self.scale_choices[0])

    def spec(self, kind, alpha_s):
        return AttackSpec(kind, self.uniform_low, self.uniform_high, self.sigma_z,
                          self.delta, alpha_s, self.target_fraction)

    def to_dict(self):
        d = asdict(self)
        d["kinds"] = list(self.kinds)
        d["scale_choices"] = list(self.scale_choices)
        return d


# ---------------------------------------------------------------- datasets


@dataclass
class Dataset:
    """Windows (N, n_buses, W, 2) float32 with per-bus labels (N, n_buses) uint8."""

    windows: np.ndarray
    labels: np.ndarray
    origins: np.ndarray
    kinds: list[str]
    split: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.windows.ndim != 4:
            raise DatasetError("windows must be (samples, buses, timesteps, features)")
        if self.labels.shape != self.windows.shape[:2]:
            raise DatasetError("labels must be (samples, buses)")
        if len(self.origins) != len(self.windows) or len(self.kinds) != len(self.windows):
            raise DatasetError("origins/kinds length must match the sample count")

    def __len__(self):
        return self.windows.shape[0]

    @property
    def n_buses(self):
        return self.windows.shape[1]

    @property
    def window(self):
        return self.windows.shape[2]


def build_dataset(grid: GridGraph, profile: LoadProfile, window: int = 24,
                  attack: AttackConfig | None = None, test_ratio: float = 0.2,
                  seed: int = 0, n_samples: int | None = None):
    """Slide a window over the profile, attack a fraction of samples, split by time.

    The first ``N - floor(test_ratio * N)`` samples form the training split.
    Attack kinds are balanced across the attacked samples.
    """
    attack = attack or AttackConfig()
    T = profile.length
    if profile.values.shape[1] != grid.n_buses:
        raise DatasetError("profile bus count does not match the grid")
    available = T - window + 1
    if n_samples is None:
        n_samples = available
    if window < 1 or n_samples < 1 or n_samples > available:
        raise DatasetError(
            f"profile of length {T} yields {max(available, 0)} windows of {window}; {n_samples} requested"
        )
    if attack.delta >= window and "replay" in attack.kinds and attack.attack_fraction > 0:
        raise DatasetError(f"replay offset {attack.delta} needs a window longer than {window}")
    rng = np.random.default_rng(seed)
    values = profile.values
    base = grid.base_loads
    series_std = values.std(axis=0)
    # (N, n, F, W) view -> (N, n, W, F)
    view = sliding_window_view(values[: n_samples + window - 1], window, axis=0)
    windows = np.ascontiguousarray(view.transpose(0, 1, 3, 2), dtype=np.float32)
    labels = np.zeros((n_samples, grid.n_buses), dtype=np.uint8)
    kinds = ["none"] * n_samples

    n_att = int(round(attack.attack_fraction * n_samples))
    attacked = np.sort(rng.permutation(n_samples)[:n_att])
    kind_seq = np.resize(np.array(attack.kinds), n_att)
    rng.shuffle(kind_seq)
    for i, kind in zip(attacked, kind_seq):
        alpha_s = float(rng.choice(attack.scale_choices))
        spec = attack.spec(str(kind), alpha_s)
        benign = view[i].transpose(0, 2, 1)
        clean = windows[i, :, -1, :].copy()
        while True:
            out, lab = inject_attack(benign, spec, rng, base=base, series_std=series_std)
            final = out[:, -1, :].astype(np.float32)
            # a perturbation below float32 resolution would leave a labelled bus unchanged
            if np.all(np.any(final != clean, axis=1)[lab == 1]):
                break
        windows[i, :, -1, :] = final
        labels[i] = lab
        kinds[i] = str(kind)

    n_test = int(np.floor(test_ratio * n_samples))
    n_train = n_samples - n_test
    meta = {"grid": grid.name, "window": window, "seed": seed, "attack": attack.to_dict(),
            "test_ratio": test_ratio, "n_samples": n_samples}
    origins = np.arange(n_samples)
    train = Dataset(windows[:n_train], labels[:n_train], origins[:n_train], kinds[:n_train],
                    "train", dict(meta))
    test = Dataset(windows[n_train:], labels[n_train:], origins[n_train:], kinds[n_train:],
                   "test", dict(meta))
    return train, test


def _record_dtype(n_buses, window, n_features):
    return np.dtype([("x", "<f4", (n_buses, window, n_features)), ("y", "u1", (n_buses,))])


def save_dataset(ds: Dataset, directory):
    """Write ``meta`` (JSON) and ``samples`` (packed little-endian records)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, W, F = ds.windows.shape[1:]
    rec = np.empty(len(ds), dtype=_record_dtype(n, W, F))
    rec["x"] = ds.windows
    rec["y"] = ds.labels
    (directory / "samples").write_bytes(rec.tobytes())
    meta = dict(ds.meta)
    meta.update({"split": ds.split, "count": len(ds), "n_buses": n, "window": W,
                 "n_features": F, "origins": [int(o) for o in ds.origins], "kinds": list(ds.kinds),
                 "positives": int(ds.labels.sum())})
    (directory / "meta").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta").read_text())
        raw = (directory / "samples").read_bytes()
    except FileNotFoundError as exc:
        raise DatasetError(f"{directory} is not a dataset directory") from exc
    try:
        dtype = _record_dtype(meta["n_buses"], meta["window"], meta["n_features"])
    except KeyError as exc:
        raise DatasetError(f"dataset meta is missing {exc}") from None
    if len(raw) != meta["count"] * dtype.itemsize:
        raise DatasetError(f"samples file size {len(raw)} does not match meta")
    rec = np.frombuffer(raw, dtype=dtype)
    extra = {k: v for k, v in meta.items()
             if k not in ("split", "count", "origins", "kinds", "positives", "n_buses", "n_features")}
    return Dataset(rec["x"].copy(), rec["y"].copy(), np.asarray(meta["origins"], dtype=int),
                   list(meta["kinds"]), meta["split"], extra)


def dataset_digest(directory) -> str:
    h = hashlib.sha256()
    h.update((Path(directory) / "samples").read_bytes())
    return h.hexdigest()[:16]
