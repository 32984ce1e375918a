"""Point-cloud cases on disk, normalization statistics and dataset splits.

A case is a directory holding ``manifest.json`` and ``points.csv``.  The CSV
has one header row and the columns

    x, y[, z], chi, sdf, onehot_inlet, onehot_outlet, onehot_wall,
    onehot_interface, D, F[, u_x, u_y[, u_z], p]

with every float written to 17 significant digits, so a save/load round
trip is exact.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CaseFormatError, ConfigurationError, ValidationError
from .geometry import BOUNDARY_TAGS, INLET, INTERFACE, INTERIOR, OUTLET, WALL
from .physics import FluidProperties, PorousCoefficients

SCHEMA_VERSION = 1
SDF_TOLERANCE = 1e-9
STD_FLOOR = 1e-12
_FMT = "%.17g"


@dataclass(frozen=True)
class CaseMeta:
    kind: str = "generic"  # mms | duct | ingested | generic
    inlet_speed: float = 0.0
    inlet_angle_deg: float = 0.0
    rho: float = 1.0
    mu: float = 1.0
    D: float = 0.0
    F: float = 0.0
    provenance: str = ""
    solid_indices: tuple = ()  # points on solid (non-porous) surfaces, ingested 3D cases only

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    @property
    def inlet_velocity(self):
        a = math.radians(self.inlet_angle_deg)
        return np.array([self.inlet_speed * math.cos(a), self.inlet_speed * math.sin(a)])


def coordinate_names(dim):
    return ["x", "y", "z"][:dim]


def velocity_names(dim):
    return ["u_x", "u_y", "u_z"][:dim]


def columns(dim, with_reference):
    cols = coordinate_names(dim) + ["chi", "sdf"] + [f"onehot_{t}" for t in BOUNDARY_TAGS] + ["D", "F"]
    if with_reference:
        cols += velocity_names(dim) + ["p"]
    return cols


@dataclass(eq=False)
class PointCloudCase:
    coords: np.ndarray  # (N, d), metres
    chi: np.ndarray  # (N,) 0/1
    sdf: np.ndarray  # (N,)
    onehot: np.ndarray  # (N, 4)
    D: np.ndarray  # (N,)
    F: np.ndarray  # (N,)
    meta: CaseMeta = field(default_factory=CaseMeta)
    case_id: str = "case"
    ref_u: np.ndarray | None = None  # (N, d)
    ref_p: np.ndarray | None = None  # (N,)
    observations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    observation_seed: int | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.chi = np.asarray(self.chi).astype(np.int8)
        self.sdf = np.asarray(self.sdf, dtype=float)
        self.onehot = np.asarray(self.onehot, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        self.observations = np.asarray(self.observations, dtype=int)
        if self.ref_u is not None:
            self.ref_u = np.asarray(self.ref_u, dtype=float)
            self.ref_p = np.asarray(self.ref_p, dtype=float)

    @property
    def dim(self):
        return self.coords.shape[1]

    @property
    def n_points(self):
        return self.coords.shape[0]

    @property
    def has_reference(self):
        return self.ref_u is not None

    @property
    def tags(self):
        return np.where(self.onehot.sum(1) > 0, self.onehot.argmax(1), INTERIOR)

    @property
    def interior_idx(self):
        return np.nonzero(self.onehot.sum(1) == 0)[0]

    @property
    def boundary_idx(self):
        return np.nonzero(self.onehot.sum(1) > 0)[0]

    @property
    def props(self):
        return FluidProperties(self.meta.rho, self.meta.mu)

    @property
    def coeffs(self):
        return PorousCoefficients(self.meta.D, self.meta.F)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def with_reference(self, u, p):
        return self.replace(ref_u=np.asarray(u, float), ref_p=np.asarray(p, float))

    def validate(self):
        n, d = self.coords.shape
        if d not in (2, 3):
            raise ValidationError(f"dimension must be 2 or 3, got {d}")
        for name in ("chi", "sdf", "D", "F"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} has {getattr(self, name).shape[0]} entries, expected {n}")
        if self.onehot.shape != (n, len(BOUNDARY_TAGS)):
            raise ValidationError("boundary one-hot block has the wrong shape")
        if self.ref_u is not None and (self.ref_u.shape != (n, d) or self.ref_p.shape != (n,)):
            raise ValidationError("reference fields do not match the point count")
        bad = np.nonzero((self.chi != 0) & (self.chi != 1))[0]
        if bad.size:
            raise ValidationError(f"chi must be 0 or 1 (point {bad[0]})", int(bad[0]))
        rows = self.onehot.sum(1)
        bad = np.nonzero(~np.isin(self.onehot, (0.0, 1.0)).all(1) | (rows > 1))[0]
        if bad.size:
            raise ValidationError(f"invalid boundary one-hot at point {bad[0]}", int(bad[0]))
        bad = np.nonzero((self.chi == 1) & (self.sdf > SDF_TOLERANCE))[0]
        if bad.size:
            raise ValidationError(f"point {bad[0]} is marked porous but has positive SDF", int(bad[0]))
        bad = np.nonzero((self.chi == 0) & (self.sdf < -SDF_TOLERANCE))[0]
        if bad.size:
            raise ValidationError(f"point {bad[0]} is marked fluid but has negative SDF", int(bad[0]))
        iface = self.tags == INTERFACE
        bad = np.nonzero(iface & ((self.chi != 1) | (np.abs(self.sdf) > SDF_TOLERANCE)))[0]
        if bad.size:
            raise ValidationError(f"interface point {bad[0]} must have chi=1 and zero SDF", int(bad[0]))
        por = self.chi == 1
        if por.any() and (np.ptp(self.D[por]) > 0 or np.ptp(self.F[por]) > 0):
            raise ValidationError("D and F must be constant over the porous points of a case")
        if self.observations.size and (self.observations.min() < 0 or self.observations.max() >= n):
            raise ValidationError("observation index out of range")
        return self

    def __eq__(self, other):
        if not isinstance(other, PointCloudCase):
            return NotImplemented
        arrays = ("coords", "chi", "sdf", "onehot", "D", "F", "observations")
        same = all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
        same = same and self.meta == other.meta and self.case_id == other.case_id
        same = same and self.observation_seed == other.observation_seed
        if (self.ref_u is None) != (other.ref_u is None):
            return False
        if self.ref_u is not None:
            same = same and np.array_equal(self.ref_u, other.ref_u) and np.array_equal(self.ref_p, other.ref_p)
        return bool(same)


# ------------------------------------------------------------------ I/O

def save_case(case: PointCloudCase, directory) -> Path:
    case.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    d = case.dim
    meta = dataclasses.asdict(case.meta)
    meta["solid_indices"] = [int(i) for i in case.meta.solid_indices]
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "case_id": case.case_id,
        "dim": d,
        "n_points": case.n_points,
        "columns": columns(d, case.has_reference),
        "has_reference": case.has_reference,
        "fluid": {"rho": case.meta.rho, "mu": case.meta.mu},
        "porous": {"D": case.meta.D, "F": case.meta.F},
        "case_meta": meta,
        "observations": {"seed": case.observation_seed,
                         "indices": [int(i) for i in case.observations]},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    blocks = [case.coords, case.chi[:, None], case.sdf[:, None], case.onehot, case.D[:, None], case.F[:, None]]
    if case.has_reference:
        blocks += [case.ref_u, case.ref_p[:, None]]
    table = np.hstack([b.astype(float) for b in blocks])
    with open(directory / "points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(manifest["columns"])
        chi_col = d
        for row in table:
            cells = [_FMT % v for v in row]
            cells[chi_col] = str(int(row[chi_col]))
            w.writerow(cells)
    return directory


def load_case(directory) -> PointCloudCase:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise CaseFormatError(f"{directory}: missing manifest.json") from exc
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{directory}: manifest is not valid JSON ({exc})") from exc
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CaseFormatError(f"{directory}: schema version {version!r}, expected {SCHEMA_VERSION}")
    try:
        dim = int(manifest["dim"])
        n = int(manifest["n_points"])
        has_ref = bool(manifest.get("has_reference", False))
        meta_d = dict(manifest["case_meta"])
    except KeyError as exc:
        raise CaseFormatError(f"{directory}: manifest lacks field {exc}") from exc
    expected = columns(dim, has_ref)
    path = directory / "points.csv"
    if not path.exists():
        raise CaseFormatError(f"{directory}: missing points.csv")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != expected:
        raise CaseFormatError(f"{path}: header {rows[0] if rows else []} does not match {expected}")
    body = rows[1:]
    if len(body) != n:
        raise CaseFormatError(f"{path}: {len(body)} point rows but manifest declares {n} (truncated file?)")
    for i, r in enumerate(body):
        if len(r) != len(expected):
            raise CaseFormatError(f"{path}: row {i} has {len(r)} fields, expected {len(expected)}")
    try:
        table = np.array([[float(c) for c in r] for r in body], dtype=float).reshape(n, len(expected))
    except ValueError as exc:
        raise CaseFormatError(f"{path}: non-numeric value ({exc})") from exc
    meta_d["solid_indices"] = tuple(meta_d.get("solid_indices", ()))
    known = {f.name for f in dataclasses.fields(CaseMeta)}
    meta = CaseMeta(**{k: v for k, v in meta_d.items() if k in known})
    c = 0
    coords = table[:, c:c + dim]
    c += dim
    chi, sdf = table[:, c], table[:, c + 1]
    c += 2
    oh = table[:, c:c + 4]
    c += 4
    D, F = table[:, c], table[:, c + 1]
    c += 2
    ref_u = ref_p = None
    if has_ref:
        ref_u, ref_p = table[:, c:c + dim], table[:, c + dim]
    obs = manifest.get("observations", {}) or {}
    case = PointCloudCase(coords=coords, chi=chi, sdf=sdf, onehot=oh, D=D, F=F, meta=meta,
                          case_id=str(manifest.get("case_id", directory.name)),
                          ref_u=ref_u, ref_p=ref_p,
                          observations=np.asarray(obs.get("indices", []), dtype=int),
                          observation_seed=obs.get("seed"))
    return case.validate()


def save_dataset(cases, root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for case in cases:
        save_case(case, root / case.case_id)
    return root


def load_dataset(root) -> list[PointCloudCase]:
    root = Path(root)
    if not root.is_dir():
        raise CaseFormatError(f"{root}: dataset directory not found")
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").exists())
    if not dirs:
        raise CaseFormatError(f"{root}: no case directories found")
    return [load_case(p) for p in dirs]


# -------------------------------------------------------- normalization

@dataclass(frozen=True)
class NormalizationStats:
    coord_mean: tuple
    coord_std: tuple
    vel_mean: tuple
    vel_std: tuple
    p_mean: float
    p_std: float
    D_min: float
    D_max: float
    F_min: float
    F_max: float
    eps: float = STD_FLOOR
    constant: tuple = ()  # names of features whose spread fell below eps

    @property
    def dim(self):
        return len(self.coord_mean)

    @property
    def sdf_scale(self):
        # SDF keeps its sign; it is measured in the geometric-mean coordinate std
        return float(np.exp(np.mean(np.log(self.coord_std))))

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("coord_mean", "coord_std", "vel_mean", "vel_std", "constant"):
            d[k] = tuple(d[k])
        return cls(**d)


def _mean_std(x, eps, name, constant):
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    std = np.sqrt(((x - mean) ** 2).mean(axis=0))
    std = np.atleast_1d(std)
    for k in np.nonzero(std < eps)[0]:
        constant.append(f"{name}[{k}]" if std.size > 1 else name)
    return mean, np.maximum(std, eps)


def compute_normalization(cases, split=None, eps=STD_FLOOR) -> NormalizationStats:
    """Z-score statistics over all points of the given (training) cases."""
    cases = list(cases)
    if not cases:
        raise ConfigurationError("normalization needs at least one case")
    if split is not None:
        leaked = [c.case_id for c in cases if c.case_id not in set(split.train)]
        if leaked:
            raise ConfigurationError(f"cases outside the training split: {leaked}")
    dims = {c.dim for c in cases}
    if len(dims) != 1:
        raise ConfigurationError("cases mix 2D and 3D points")
    const: list[str] = []
    cm, cs = _mean_std(np.concatenate([c.coords for c in cases]), eps, "coords", const)
    refs = [c for c in cases if c.has_reference]
    if refs:
        vm, vs = _mean_std(np.concatenate([c.ref_u for c in refs]), eps, "velocity", const)
        pm, ps = _mean_std(np.concatenate([c.ref_p for c in refs]), eps, "pressure", const)
        pm, ps = float(pm), float(ps[0])
    else:
        # physics-only data: scale by the inlet speed and dynamic pressure
        speed = max(max(c.meta.inlet_speed for c in cases), eps)
        rho = max(c.meta.rho for c in cases)
        vm, vs = np.zeros(cm.shape), np.full(cm.shape, speed)
        pm, ps = 0.0, max(rho * speed * speed, eps)
        const.append("velocity:no-reference")
    D = np.concatenate([c.D for c in cases])
    F = np.concatenate([c.F for c in cases])
    if np.ptp(D) < eps:
        const.append("D")
    if np.ptp(F) < eps:
        const.append("F")
    return NormalizationStats(
        coord_mean=tuple(map(float, cm)), coord_std=tuple(map(float, cs)),
        vel_mean=tuple(map(float, vm)), vel_std=tuple(map(float, vs)),
        p_mean=float(pm), p_std=float(ps),
        D_min=float(D.min()), D_max=float(D.max()), F_min=float(F.min()), F_max=float(F.max()),
        eps=eps, constant=tuple(const),
    )


@dataclass
class FlowField:
    u: np.ndarray  # (N, d)
    p: np.ndarray  # (N,)
    normalized: bool = False


@dataclass
class NormalizedCase:
    """Model-ready arrays for one case (coordinates and fields Z-scored)."""

    source: PointCloudCase
    coords: np.ndarray
    sdf: np.ndarray
    onehot: np.ndarray
    chi: np.ndarray
    D: np.ndarray
    F: np.ndarray
    u: np.ndarray | None
    p: np.ndarray | None

    @property
    def features(self):
        """Per-point spatially constant inputs: SDF and boundary one-hot."""
        return np.concatenate([self.sdf[:, None], self.onehot], axis=1)


def _check_stats(stats, dim):
    if stats is None:
        raise ConfigurationError("normalization statistics are required")
    for name in ("coord_mean", "coord_std", "vel_mean", "vel_std"):
        v = getattr(stats, name, None)
        if v is None or len(v) != dim:
            raise ConfigurationError(f"normalization statistics lack {name} for dimension {dim}")


def _unit_range(x, lo, hi, eps):
    span = hi - lo
    return (x - lo) / (span if span >= eps else 1.0)


def normalize_coords(coords, stats):
    return (np.asarray(coords, float) - np.asarray(stats.coord_mean)) / np.asarray(stats.coord_std)


def denormalize_coords(coords, stats):
    return np.asarray(coords, float) * np.asarray(stats.coord_std) + np.asarray(stats.coord_mean)


def normalize_D(D, stats):
    """Affine map of the training range onto [0, 1]; values outside pass through unclamped."""
    return _unit_range(np.asarray(D, float), stats.D_min, stats.D_max, stats.eps)


def normalize_F(F, stats):
    return _unit_range(np.asarray(F, float), stats.F_min, stats.F_max, stats.eps)


def normalize_field(fld: FlowField, stats) -> FlowField:
    if fld.normalized:
        return fld
    _check_stats(stats, fld.u.shape[1])
    u = (fld.u - np.asarray(stats.vel_mean)) / np.asarray(stats.vel_std)
    return FlowField(u, (fld.p - stats.p_mean) / stats.p_std, normalized=True)


def denormalize_field(fld: FlowField, stats) -> FlowField:
    if not fld.normalized:
        return fld
    _check_stats(stats, fld.u.shape[1])
    u = np.asarray(fld.u) * np.asarray(stats.vel_std) + np.asarray(stats.vel_mean)
    return FlowField(u, np.asarray(fld.p) * stats.p_std + stats.p_mean, normalized=False)


def normalize_case(case: PointCloudCase, stats: NormalizationStats) -> NormalizedCase:
    _check_stats(stats, case.dim)
    u = p = None
    if case.has_reference:
        f = normalize_field(FlowField(case.ref_u, case.ref_p), stats)
        u, p = f.u, f.p
    return NormalizedCase(
        source=case, coords=normalize_coords(case.coords, stats),
        sdf=case.sdf / stats.sdf_scale, onehot=case.onehot.copy(), chi=case.chi.copy(),
        D=normalize_D(case.D, stats), F=normalize_F(case.F, stats), u=u, p=p,
    )


# ------------------------------------------------------ boundary targets

def boundary_targets(case: PointCloudCase):
    """Physical boundary values and availability masks, one row per boundary point.

    Rows follow ``case.boundary_idx``.  Cases carrying reference fields use
    them everywhere.  Otherwise the duct conditions apply: the inlet carries
    the case inlet velocity, walls are no-slip, the outlet fixes p = 0, and
    the porous interface prescribes nothing.
    """
    b = case.boundary_idx
    nb, d = b.size, case.dim
    if case.has_reference:
        return case.ref_u[b].copy(), case.ref_p[b].copy(), np.ones((nb, d)), np.ones(nb)
    tags = case.tags[b]
    u = np.zeros((nb, d))
    mu = np.zeros((nb, d))
    mp = np.zeros(nb)
    inlet = tags == INLET
    u[inlet, :2] = case.meta.inlet_velocity
    mu[inlet] = 1.0
    mu[tags == WALL] = 1.0
    mp[tags == OUTLET] = 1.0
    return u, np.zeros(nb), mu, mp


# --------------------------------------------------------------- splits

@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    validation: tuple
    test: tuple

    def to_dict(self):
        return {"train": list(self.train), "validation": list(self.validation), "test": list(self.test)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["train"]), tuple(d["validation"]), tuple(d["test"]))


def split_dataset(case_ids, seed) -> DatasetSplit:
    """Seeded shuffle, then 60/20/20 with the rounding remainder going to training."""
    ids = list(case_ids)
    if len(ids) < 5:
        raise ConfigurationError(f"need at least 5 cases to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ConfigurationError("case identifiers must be unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_val = n_test = int(0.2 * len(ids))
    n_train = len(ids) - n_val - n_test
    return DatasetSplit(tuple(shuffled[:n_train]), tuple(shuffled[n_train:n_train + n_val]),
                        tuple(shuffled[n_train + n_val:]))


# ------------------------------------------------- ingestion helpers

def select_observations(case: PointCloudCase, n, seed) -> PointCloudCase:
    """Uniformly chosen observation points; they may coincide with collocation points."""
    if n > case.n_points:
        raise ConfigurationError(f"cannot observe {n} of {case.n_points} points")
    idx = np.sort(np.random.default_rng(seed).choice(case.n_points, size=n, replace=False))
    return case.replace(observations=idx, observation_seed=int(seed))


def subsample_case(case: PointCloudCase, n_interior, n_boundary, seed, mixture_weight=0.4,
                   band=None) -> PointCloudCase:
    """Fixed-size subsample of a dense (e.g. CFD-exported) case.

    A share ``mixture_weight`` of interior points comes from the band
    ``|sdf| < band`` around the interface (default: a tenth of the vertical
    extent); boundary points are drawn per tag proportionally to availability.
    """
    from .geometry import largest_remainder

    rng = np.random.default_rng(seed)
    interior = case.interior_idx
    boundary = case.boundary_idx
    if n_interior > interior.size or n_boundary > boundary.size:
        raise ConfigurationError("case has fewer points than requested")
    if band is None:
        band = 0.1 * np.ptp(case.coords[:, 1])
    near = interior[np.abs(case.sdf[interior]) < band]
    n_near = min(int(round(mixture_weight * n_interior)), near.size)
    pick_near = rng.choice(near, size=n_near, replace=False)
    rest = np.setdiff1d(interior, pick_near)
    pick_rest = rng.choice(rest, size=n_interior - n_near, replace=False)
    tags = case.tags[boundary]
    present = [t for t in range(len(BOUNDARY_TAGS)) if np.any(tags == t)]
    sizes = [int(np.sum(tags == t)) for t in present]
    quota = largest_remainder(sizes, n_boundary)
    pick_b = [rng.choice(boundary[tags == t], size=min(q, s), replace=False)
              for t, q, s in zip(present, quota, sizes)]
    idx = np.concatenate([np.sort(np.concatenate([pick_near, pick_rest])), np.sort(np.concatenate(pick_b))])
    return _take(case, idx)


def _take(case, idx):
    ref_u = None if case.ref_u is None else case.ref_u[idx]
    ref_p = None if case.ref_p is None else case.ref_p[idx]
    return case.replace(coords=case.coords[idx], chi=case.chi[idx], sdf=case.sdf[idx],
                        onehot=case.onehot[idx], D=case.D[idx], F=case.F[idx],
                        ref_u=ref_u, ref_p=ref_p, observations=np.zeros(0, dtype=int),
                        observation_seed=None)
