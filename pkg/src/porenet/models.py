"""PIPN and PI-GANO networks evaluated on second-order jets.

Both models map normalized inputs to normalized ``(u, p)``.  Forward
passes take a parameter mapping whose entries are either numpy arrays
(inference) or tape variables (training), and return a :class:`Jet`, so
the spatial Jacobian and pure second derivatives come out of the same
evaluation as the values.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import NormalizationStats, boundary_targets, normalize_D, normalize_F
from .diffcore import jet as J
from .diffcore import tape as T
from .errors import CaseFormatError, ConfigurationError
from .geometry import BOUNDARY_TAGS, INLET, INTERFACE, largest_remainder

N_FEATURES = 1 + len(BOUNDARY_TAGS)  # sdf + boundary one-hot
INIT_SCHEME = "uniform(-sqrt(3/fan_in), sqrt(3/fan_in)) weights, zero biases"
CHECKPOINT_VERSION = 1


def _check_activation(act):
    if act not in J.ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {act!r}; choose from {sorted(J.ACTIVATIONS)}")


def _check_widths(name, widths):
    if not widths or any(int(w) <= 0 for w in widths):
        raise ConfigurationError(f"{name} widths must be positive, got {widths}")


@dataclass(frozen=True)
class PipnConfig:
    dim: int = 2
    local: tuple = (64, 64)
    global_: tuple = (64, 128, 1024)  # last entry is the pooled global feature size
    decoder: tuple = (512, 256, 128)  # hidden widths; the output layer adds dim + 1
    activation: str = "silu"
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError("dim must be 2 or 3")
        for name in ("local", "global_", "decoder"):
            _check_widths(name, getattr(self, name))
        if len(self.decoder) < 2:
            raise ConfigurationError("decoder needs at least two hidden layers (dropout placement)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        _check_activation(self.activation)

    @property
    def global_feature(self):
        return self.global_[-1]

    @property
    def n_out(self):
        return self.dim + 1


@dataclass(frozen=True)
class PiganoConfig:
    dim: int = 2
    geo_local: tuple = (64, 64)
    geo_global: tuple = (64, 128)  # hidden widths before the pooled geometry latent
    geo_latent: int = 128
    branch: tuple = (64, 128)  # hidden widths before the pooled condition latent
    branch_latent: int = 128
    branch_points: int = 40
    trunk: tuple = (128, 128)  # last width must equal branch_latent
    output: tuple = (128, 64)  # shared output stack hidden widths
    activation: str = "silu"
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError("dim must be 2 or 3")
        for name in ("geo_local", "geo_global", "branch", "trunk", "output"):
            _check_widths(name, getattr(self, name))
        if self.geo_latent <= 0 or self.branch_latent <= 0 or self.branch_points <= 0:
            raise ConfigurationError("latent sizes and branch point count must be positive")
        if self.trunk[-1] != self.branch_latent:
            raise ConfigurationError("trunk output width must equal the branch latent size")
        if len(self.output) < 2:
            raise ConfigurationError("output stack needs at least two hidden layers")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        _check_activation(self.activation)

    @classmethod
    def for_dim(cls, dim, **kw):
        if dim == 3:
            kw.setdefault("geo_latent", 512)
        return cls(dim=dim, **kw)

    @property
    def n_out(self):
        return self.dim + 1

    @property
    def branch_in(self):
        # position, boundary velocity, D, F, velocity mask, coefficient mask
        return 2 * self.dim + 4


CONFIGS = {"pipn": PipnConfig, "pigano": PiganoConfig}


# --------------------------------------------------------------- layouts

def _mlp_layout(prefix, widths):
    return [(f"{prefix}.W{i}", (a, b), a) for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]


def parameter_layout(config):
    """Ordered list of ``(name, shape, fan_in)``; biases have fan_in None."""
    out = []

    def dense(prefix, widths):
        for name, shape, fan in _mlp_layout(prefix, widths):
            out.append((name, shape, fan))
            out.append((name.replace(".W", ".b"), (shape[1],), None))

    if isinstance(config, PipnConfig):
        d, nf = config.dim, N_FEATURES
        dense("local", (d,) + tuple(config.local))
        dense("global", (config.local[-1] + nf,) + tuple(config.global_))
        loc = config.local[-1]
        fan = loc + config.global_feature
        h0 = config.decoder[0]
        out += [("dec.Wl", (loc, h0), fan), ("dec.Wg", (config.global_feature, h0), fan), ("dec.b0", (h0,), None)]
        dense("dec.h", tuple(config.decoder) + (config.n_out,))
    elif isinstance(config, PiganoConfig):
        d, nf = config.dim, N_FEATURES
        dense("geo.local", (d,) + tuple(config.geo_local))
        dense("geo.global", (config.geo_local[-1] + nf,) + tuple(config.geo_global) + (config.geo_latent,))
        dense("branch", (config.branch_in,) + tuple(config.branch) + (config.branch_latent,))
        t0 = config.trunk[0]
        fan = d + 1 + config.geo_latent
        out += [("trunk.Wx", (d + 1, t0), fan), ("trunk.Wg", (config.geo_latent, t0), fan), ("trunk.b0", (t0,), None)]
        dense("trunk.h", tuple(config.trunk))
        dense("out", (config.trunk[-1],) + tuple(config.output) + (config.n_out,))
    else:
        raise ConfigurationError(f"unknown model configuration {type(config).__name__}")
    return out


def parameter_count(config) -> int:
    return int(sum(math.prod(shape) for _, shape, _ in parameter_layout(config)))


@dataclass
class ModelParameters:
    kind: str
    config: PipnConfig | PiganoConfig
    seed: int
    values: dict
    scheme: str = INIT_SCHEME

    @property
    def n_params(self):
        return int(sum(v.size for v in self.values.values()))

    def flat(self):
        return np.concatenate([v.ravel() for v in self.values.values()])

    def with_values(self, values):
        return dataclasses.replace(self, values=dict(values))

    def copy(self):
        return self.with_values({k: v.copy() for k, v in self.values.items()})

    def astype(self, dtype):
        """Copy with every array cast, e.g. ``np.float32`` for the reduced-precision mode."""
        return self.with_values({k: v.astype(dtype) for k, v in self.values.items()})

    def equal(self, other):
        return (self.kind == other.kind and self.config == other.config
                and list(self.values) == list(other.values)
                and all(np.array_equal(self.values[k], other.values[k]) for k in self.values))


def init_parameters(config, seed) -> ModelParameters:
    rng = np.random.default_rng(seed)
    values = {}
    for name, shape, fan in parameter_layout(config):
        if fan is None:
            values[name] = np.zeros(shape)
        else:
            a = math.sqrt(3.0 / fan)
            values[name] = rng.uniform(-a, a, size=shape)
    kind = "pipn" if isinstance(config, PipnConfig) else "pigano"
    return ModelParameters(kind, config, int(seed), values)


# ---------------------------------------------------------------- layers

def _dense(p, prefix, x, n_layers, act, final_act=True, dropout=None, first=0):
    """Stack ``prefix.W{i}`` for i in [first, first + n_layers)."""
    for i in range(first, first + n_layers):
        x = J.linear(x, p[f"{prefix}.W{i}"], p[f"{prefix}.b{i}"])
        last = i == first + n_layers - 1
        if not last or final_act:
            x = J.activate(x, act)
            if dropout is not None:
                x = dropout(i, x)
    return x


def _dropout_fn(p_drop, rng, hidden_ids):
    if rng is None or p_drop == 0.0:
        return None

    def apply(i, x):
        if i not in hidden_ids:
            return x
        keep = (rng.random((x.npoints, x.width)) >= p_drop) / (1.0 - p_drop)
        return x.scale(keep)

    return apply


def _param_dtype(params):
    return T.value_of(next(iter(params.values()))).dtype


def _features_jet(coords, features, ndir, dtype=np.float64):
    coords = np.asarray(coords, dtype)
    if ndir:
        xj = J.seed(coords, ndir=ndir, dtype=dtype)
    else:
        xj = J.constant(coords, 0)
    return xj, J.constant(np.asarray(features, dtype), xj.ndir)


def _pool(x: J.Jet):
    """Max over points of the value slot (used for latents that carry no spatial jet)."""
    return T.max_reduce(x.value, axis=0)


# ------------------------------------------------------------------ PIPN

def pipn_forward(params, config: PipnConfig, coords, features, ndir=None, rng=None) -> J.Jet:
    """Jet of the normalized outputs (N, dim + 1) for one whole cloud.

    ``features`` holds the per-point (sdf, one-hot) block.  ``ndir=0`` skips
    derivatives; ``rng`` enables dropout (training mode).
    """
    coords = np.asarray(coords, float)
    if coords.ndim != 2 or coords.shape[1] != config.dim:
        raise ConfigurationError(f"expected ({'N'}, {config.dim}) coordinates, got {coords.shape}")
    if coords.shape[0] < 2:
        raise ConfigurationError("PIPN needs at least two points to pool a global feature")
    ndir = config.dim if ndir is None else ndir
    act = config.activation
    xj, fj = _features_jet(coords, features, ndir, _param_dtype(params))
    local = _dense(params, "local", xj, len(config.local), act)
    h = _dense(params, "global", J.concat([local, fj]), len(config.global_), act)
    # sdf and one-hot reach the decoder only through the pooled feature; a direct
    # per-point path would let boundary flags shift the pressure gauge
    x = J.linear(local, params["dec.Wl"], params["dec.b0"]) + J.pooled_linear(h, params["dec.Wg"])
    x = J.activate(x, act)
    nh = len(config.decoder)
    # the last two hidden widths of the decoder are dec.h layers nh-3 and nh-2
    drop = _dropout_fn(config.dropout, rng, {nh - 3, nh - 2})
    return _dense(params, "dec.h", x, nh, act, final_act=False, dropout=drop)


def _pipn_pre_pool(params, config, coords, features):
    xj, fj = _features_jet(coords, features, 0, _param_dtype(params))
    local = J.concat([_dense(params, "local", xj, len(config.local), config.activation), fj])
    return T.value_of(_dense(params, "global", local, len(config.global_), config.activation).value)


def pipn_global_feature(params, config: PipnConfig, coords, features):
    return np.max(_pipn_pre_pool(params, config, coords, features), axis=0)


def pipn_pool_argmax(params, config: PipnConfig, coords, features):
    """Index of the maximizing point per global channel (lowest index on ties)."""
    return np.argmax(_pipn_pre_pool(params, config, coords, features), axis=0)


# ---------------------------------------------------------------- PI-GANO

@dataclass
class BranchInput:
    positions: np.ndarray  # (M, d), physical
    u: np.ndarray  # (M, d), zero where unavailable
    D: np.ndarray  # (M,)
    F: np.ndarray  # (M,)
    mask: np.ndarray  # (M, 2): [velocity available, coefficients available]
    tags: np.ndarray  # (M,) boundary tag of each record

    @property
    def size(self):
        return self.positions.shape[0]

    def features(self, stats: NormalizationStats):
        """Normalized (M, 2d + 4) record matrix; unavailable slots stay exactly 0."""
        mu, mc = self.mask[:, :1], self.mask[:, 1]
        pos = (self.positions - np.asarray(stats.coord_mean)) / np.asarray(stats.coord_std)
        u = np.where(mu > 0, (self.u - np.asarray(stats.vel_mean)) / np.asarray(stats.vel_std), 0.0)
        D = np.where(mc > 0, normalize_D(self.D, stats), 0.0)
        F = np.where(mc > 0, normalize_F(self.F, stats), 0.0)
        return np.concatenate([pos, u, D[:, None], F[:, None], self.mask], axis=1)

    def permuted(self, perm):
        return BranchInput(self.positions[perm], self.u[perm], self.D[perm], self.F[perm],
                           self.mask[perm], self.tags[perm])


def branch_quotas(sizes, M):
    """Per-boundary record counts: proportional, at least one each, summing to M."""
    sizes = np.asarray(sizes, int)
    k = sizes.size
    if M > sizes.sum():
        raise ConfigurationError(f"M={M} exceeds the {sizes.sum()} available boundary points")
    if M < k:
        raise ConfigurationError(f"M={M} cannot cover {k} boundary types")
    q = largest_remainder(sizes, M)
    # keep every boundary represented, taking from the largest quota
    while np.any(q == 0):
        q[np.argmax(q)] -= 1
        q[np.argmin(q)] += 1
    return q


def select_branch_points(case, M, seed) -> BranchInput:
    """Seeded choice of M boundary records with availability semantics.

    Velocity is filled on inlet records, (D, F) on porous-interface records;
    every other slot is zero with its mask bit cleared.
    """
    tags = case.tags
    present = [t for t in range(len(BOUNDARY_TAGS)) if np.any(tags == t)]
    if not present:
        raise ConfigurationError("case has no boundary points")
    sizes = [int(np.sum(tags == t)) for t in present]
    quota = branch_quotas(sizes, M)
    rng = np.random.default_rng(seed)
    b_idx = case.boundary_idx
    u_target, _, _, _ = boundary_targets(case)
    picks = []
    for t, q in zip(present, quota):
        pool = np.nonzero(tags[b_idx] == t)[0]
        picks.append(np.sort(rng.choice(pool, size=q, replace=False)))
    sel = np.concatenate(picks)
    idx = b_idx[sel]
    rt = tags[idx]
    d = case.dim
    mask = np.zeros((M, 2))
    mask[rt == INLET, 0] = 1.0
    mask[rt == INTERFACE, 1] = 1.0
    u = np.where(mask[:, :1] > 0, u_target[sel], 0.0)
    return BranchInput(positions=case.coords[idx].copy(), u=u.reshape(M, d),
                       D=np.where(mask[:, 1] > 0, case.meta.D, 0.0),
                       F=np.where(mask[:, 1] > 0, case.meta.F, 0.0), mask=mask, tags=rt)


def pigano_latents(params, config: PiganoConfig, geo_coords, geo_features, branch_features):
    """Geometry latent and condition latent; both are pooled, hence order-free."""
    branch_features = np.asarray(branch_features, float)
    if branch_features.shape != (config.branch_points, config.branch_in):
        raise ConfigurationError(
            f"branch input must be ({config.branch_points}, {config.branch_in}), got {branch_features.shape}")
    geo_coords = np.asarray(geo_coords, float)
    if geo_coords.ndim != 2 or geo_coords.shape[0] == 0:
        raise ConfigurationError("geometry cloud must be a nonempty (N, d) array")
    act = config.activation
    dtype = _param_dtype(params)
    xj, fj = _features_jet(geo_coords, geo_features, 0, dtype)
    g = J.concat([_dense(params, "geo.local", xj, len(config.geo_local), act), fj])
    g = _pool(_dense(params, "geo.global", g, len(config.geo_global) + 1, act))
    b = J.constant(branch_features.astype(dtype), 0)
    c = _pool(_dense(params, "branch", b, len(config.branch) + 1, act))
    return g, c


def pigano_forward(params, config: PiganoConfig, query_coords, query_features, geo_coords,
                   geo_features, branch_features, ndir=None, rng=None, latents=None) -> J.Jet:
    """Jet of normalized outputs at the query points.

    The trunk sees each query point (coordinates and sdf; boundary flags enter
    only through the geometry latent) with the geometry latent entering its
    first layer as an extra bias; the trunk
    embedding is multiplied by the condition latent and decoded by the shared
    output stack.
    """
    q = np.asarray(query_coords, float)
    if q.ndim != 2 or q.shape[1] != config.dim:
        raise ConfigurationError(f"query points must be (N, {config.dim})")
    ndir = config.dim if ndir is None else ndir
    act = config.activation
    g, c = latents if latents is not None else pigano_latents(
        params, config, geo_coords, geo_features, branch_features)
    xj, fj = _features_jet(q, np.asarray(query_features)[:, :1], ndir, _param_dtype(params))
    bias = params["trunk.b0"] + g @ params["trunk.Wg"]
    t = J.activate(J.linear(J.concat([xj, fj]), params["trunk.Wx"], bias), act)
    t = _dense(params, "trunk.h", t, len(config.trunk) - 1, act)
    t = t.scale(c)
    nh = len(config.output)
    drop = _dropout_fn(config.dropout, rng, {nh - 2, nh - 1})
    return _dense(params, "out", t, nh + 1, act, final_act=False, dropout=drop)


# ---------------------------------------------------------- model facade

def case_features(nc):
    return np.concatenate([nc.sdf[:, None], nc.onehot], axis=1)


class Model:
    """A parameter set bound to its architecture.

    ``forward(nc, ...)`` evaluates a normalized case; ``bind(nc)`` returns an
    object with ``jet``/``in_dim`` so :func:`laplacian_and_jacobian` can
    differentiate the model at arbitrary query coordinates of that case.
    """

    def __init__(self, params: ModelParameters, branch_seed=0):
        self.params = params
        self.config = params.config
        self.kind = params.kind
        self.branch_seed = branch_seed
        self._branch_cache = {}

    def branch(self, case):
        key = id(case)
        hit = self._branch_cache.get(key)
        if hit is None or hit[0] is not case:
            hit = (case, select_branch_points(case, self.config.branch_points, self.branch_seed))
            self._branch_cache[key] = hit
        return hit[1]

    def forward(self, nc, stats, values=None, ndir=None, rng=None, idx=None) -> J.Jet:
        p = self.params.values if values is None else values
        coords = nc.coords if idx is None else nc.coords[idx]
        feats = case_features(nc) if idx is None else case_features(nc)[idx]
        if self.kind == "pipn":
            if idx is not None:
                raise ConfigurationError("PIPN evaluates whole clouds only")
            return pipn_forward(p, self.config, coords, feats, ndir=ndir, rng=rng)
        bf = self.branch(nc.source).features(stats)
        return pigano_forward(p, self.config, coords, feats, nc.coords, case_features(nc), bf,
                              ndir=ndir, rng=rng)

    def predict(self, nc, stats, values=None):
        """Normalized (N, dim + 1) outputs without derivatives or dropout."""
        return T.value_of(self.forward(nc, stats, values=values, ndir=0).value)

    def bind(self, nc, stats, values=None, idx=None):
        return _Bound(self, nc, stats, values, idx)


class _Bound:
    def __init__(self, model, nc, stats, values, idx):
        self.model, self.nc, self.stats, self.values = model, nc, stats, values
        self.in_dim = model.config.dim
        n = nc.coords.shape[0]
        self.idx = np.arange(n) if idx is None else np.asarray(idx)
        if model.kind == "pipn" and not np.array_equal(np.sort(self.idx), np.arange(n)):
            raise ConfigurationError("PIPN query points must cover the whole cloud")

    def jet(self, xjet, params=None):
        if xjet.ndir != self.in_dim:
            raise ConfigurationError("bound models expect a seeded coordinate jet")
        coords = T.value_of(xjet.value)
        if coords.shape[0] != self.idx.size:
            raise ConfigurationError(f"expected {self.idx.size} query points, got {coords.shape[0]}")
        m, nc = self.model, self.nc
        p = params if params is not None else (self.values or m.params.values)
        feats = case_features(nc)[self.idx]
        if m.kind == "pipn":
            return pipn_forward(p, m.config, coords, feats)
        bf = m.branch(nc.source).features(self.stats)
        return pigano_forward(p, m.config, coords, feats, nc.coords, case_features(nc), bf)


# ------------------------------------------------------------ checkpoints

def _config_to_dict(config):
    d = dataclasses.asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def config_from_dict(kind, d):
    cls = CONFIGS.get(kind)
    if cls is None:
        raise CaseFormatError(f"unknown model kind {kind!r}")
    fields = {f.name for f in dataclasses.fields(cls)}
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items() if k in fields}
    return cls(**kw)


def _write_table(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")


def _flat_rows(values):
    for name, v in values.items():
        for i, x in enumerate(np.ravel(v)):
            yield name, i, x


def save_checkpoint(directory, params: ModelParameters, epoch=0, stats=None, optimizer=None,
                    extra=None) -> Path:
    """Manifest plus flat ``name,index,value`` parameter table (17 significant digits)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "kind": params.kind,
        "config": _config_to_dict(params.config),
        "seed": params.seed,
        "init_scheme": params.scheme,
        "epoch": int(epoch),
        "shapes": {k: list(v.shape) for k, v in params.values.items()},
        "stats": None if stats is None else stats.to_dict(),
        "optimizer": None if optimizer is None else optimizer.meta(),
        "extra": extra or {},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _write_table(directory / "parameters.csv", ["name", "index", "value"],
                 ([n, str(i), "%.17g" % x] for n, i, x in _flat_rows(params.values)))
    if optimizer is not None:
        rows = ([n, str(i), "%.17g" % m, "%.17g" % v]
                for (n, i, m), (_, _, v) in zip(_flat_rows(optimizer.m), _flat_rows(optimizer.v)))
        _write_table(directory / "optimizer.csv", ["name", "index", "m", "v"], rows)
    return directory


def _read_table(path, ncols):
    if not path.exists():
        raise CaseFormatError(f"{path}: missing")
    lines = path.read_text().splitlines()
    rows = [ln.split(",") for ln in lines[1:] if ln]
    if any(len(r) != ncols for r in rows):
        raise CaseFormatError(f"{path}: malformed row")
    return rows


def _unflatten(rows, shapes, col, path):
    out, pos = {}, 0
    for name, shape in shapes.items():
        n = math.prod(shape)
        chunk = rows[pos:pos + n]
        if len(chunk) != n or any(r[0] != name for r in chunk):
            raise CaseFormatError(f"{path}: entries for {name!r} are missing or out of order")
        out[name] = np.array([float(r[col]) for r in chunk]).reshape(shape)
        pos += n
    if pos != len(rows):
        raise CaseFormatError(f"{path}: {len(rows) - pos} unexpected trailing entries")
    return out


def load_checkpoint(directory):
    """Returns ``(ModelParameters, manifest, optimizer moments or None)``."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise CaseFormatError(f"{directory}: not a checkpoint (no manifest.json)") from exc
    if manifest.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CaseFormatError(f"{directory}: unsupported checkpoint version")
    config = config_from_dict(manifest["kind"], manifest["config"])
    shapes = {k: tuple(v) for k, v in manifest["shapes"].items()}
    expected = {n: tuple(s) for n, s, _ in parameter_layout(config)}
    if shapes != expected:
        raise CaseFormatError(f"{directory}: parameter shapes do not match the configuration")
    rows = _read_table(directory / "parameters.csv", 3)
    values = _unflatten(rows, shapes, 2, directory / "parameters.csv")
    params = ModelParameters(manifest["kind"], config, manifest["seed"], values,
                             manifest.get("init_scheme", INIT_SCHEME))
    moments = None
    if manifest.get("optimizer") is not None:
        rows = _read_table(directory / "optimizer.csv", 4)
        moments = (_unflatten(rows, shapes, 2, directory / "optimizer.csv"),
                   _unflatten(rows, shapes, 3, directory / "optimizer.csv"))
    return params, manifest, moments
