"""Region-wise error tables, coefficient grouping and inference timing."""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import FlowField, denormalize_field, normalize_case, velocity_names
from .errors import CaseFormatError, ConfigurationError
from .models import Model, ModelParameters

REGIONS = ("global", "porous", "fluid", "solid_surface")
TIMING_SCHEMA = 1


def field_names(dim):
    return velocity_names(dim) + ["p"]


@dataclass
class RegionMaeTable:
    fields: tuple
    regions: tuple
    values: dict  # (field, region) -> float, or None when the region is empty
    counts: dict  # region -> number of points

    def get(self, fld, region):
        return self.values[(fld, region)]

    def rows(self):
        return [[f] + [self.values[(f, r)] for r in self.regions] for f in self.fields]

    def to_text(self):
        head = ["field"] + list(self.regions)
        body = [[r[0]] + ["absent" if v is None else f"{v:.3e}" for v in r[1:]] for r in self.rows()]
        widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
        fmt = lambda row: "  ".join(str(x).ljust(w) for x, w in zip(row, widths)).rstrip()
        return "\n".join([fmt(head)] + [fmt(r) for r in body]) + "\n"

    def to_csv(self):
        lines = [",".join(["field"] + list(self.regions))]
        for r in self.rows():
            lines.append(",".join([r[0]] + ["" if v is None else "%.17g" % v for v in r[1:]]))
        lines.append(",".join(["count"] + [str(self.counts[r]) for r in self.regions]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln]
        if len(lines) < 3 or not lines[0].startswith("field,"):
            raise CaseFormatError("not an MAE table")
        regions = tuple(lines[0].split(",")[1:])
        *body, count = [ln.split(",") for ln in lines[1:]]
        values = {}
        for r in body:
            for reg, v in zip(regions, r[1:]):
                values[(r[0], reg)] = None if v == "" else float(v)
        counts = {reg: int(c) for reg, c in zip(regions, count[1:])}
        return cls(tuple(r[0] for r in body), regions, values, counts)


def region_masks(case):
    """Boolean masks for the regions present in ``case``."""
    masks = {"porous": case.chi == 1, "fluid": case.chi == 0}
    if case.meta.solid_indices:
        m = np.zeros(case.n_points, dtype=bool)
        m[np.asarray(case.meta.solid_indices, dtype=int)] = True
        masks["solid_surface"] = m
    return masks


def mae_by_region(predicted: FlowField, reference: FlowField, masks: dict) -> RegionMaeTable:
    """Mean absolute error per field over all points and over each masked region."""
    if predicted.normalized != reference.normalized:
        raise ConfigurationError("predicted and reference fields are in different units")
    pu, ru = np.asarray(predicted.u, float), np.asarray(reference.u, float)
    if pu.shape != ru.shape:
        raise ConfigurationError("predicted and reference fields differ in shape")
    d = pu.shape[1]
    err = np.abs(np.concatenate([pu - ru, (np.asarray(predicted.p) - np.asarray(reference.p))[:, None]], axis=1))
    names = field_names(d)
    regions = ("global",) + tuple(r for r in REGIONS[1:] if r in masks)
    values, counts = {}, {}
    for reg in regions:
        m = np.ones(err.shape[0], dtype=bool) if reg == "global" else np.asarray(masks[reg], dtype=bool)
        counts[reg] = int(m.sum())
        for j, f in enumerate(names):
            values[(f, reg)] = float(err[m, j].mean()) if m.any() else None
    return RegionMaeTable(tuple(names), regions, values, counts)


def predict_field(params: ModelParameters, case, stats, model=None) -> FlowField:
    """Physical-unit prediction for every point of ``case``."""
    model = model or Model(params)
    out = model.predict(normalize_case(case, stats), stats)
    d = case.dim
    return denormalize_field(FlowField(out[:, :d], out[:, d], normalized=True), stats)


def evaluate_case(params, case, stats, model=None) -> RegionMaeTable:
    if not case.has_reference:
        raise ConfigurationError(f"case {case.case_id!r} has no reference fields to compare against")
    pred = predict_field(params, case, stats, model)
    return mae_by_region(pred, FlowField(case.ref_u, case.ref_p), region_masks(case))


def average_tables(tables) -> RegionMaeTable:
    """Arithmetic mean of per-case tables, entry by entry (absent entries skipped)."""
    tables = list(tables)
    if not tables:
        raise ConfigurationError("no tables to average")
    fields, regions = tables[0].fields, tables[0].regions
    values, counts = {}, {}
    for reg in regions:
        counts[reg] = sum(t.counts.get(reg, 0) for t in tables)
        for f in fields:
            vals = [t.values[(f, reg)] for t in tables if t.values.get((f, reg)) is not None]
            values[(f, reg)] = float(np.mean(vals)) if vals else None
    return RegionMaeTable(fields, regions, values, counts)


def group_errors_by_coefficient(tables, D_values, region="global"):
    """``{D: {field: mean MAE}}`` over the cases sharing each Darcy coefficient, sorted by D."""
    tables = list(tables)
    D_values = list(D_values)
    if len(tables) != len(D_values):
        raise ConfigurationError("need one D value per table")
    groups = {}
    for t, D in zip(tables, D_values):
        groups.setdefault(float(D), []).append(t)
    return {D: {f: float(np.mean([t.values[(f, region)] for t in groups[D]])) for f in groups[D][0].fields}
            for D in sorted(groups)}


def grouped_table_text(grouped):
    Ds = list(grouped)
    fields = list(next(iter(grouped.values()))) if grouped else []
    head = ["field"] + [f"{D:g}" for D in Ds]
    rows = [[f] + [f"{grouped[D][f]:.3e}" for D in Ds] for f in fields]
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    return "\n".join("  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip() for r in [head] + rows) + "\n"


# ---------------------------------------------------------------- timing

@dataclass
class TimingReport:
    samples: list  # per-case lists of wall-clock seconds
    case_ids: list
    n_points: list
    repetitions: int
    solver_reference_s: float | None = None  # optional external-solver annotation
    schema_version: int = TIMING_SCHEMA

    @property
    def per_case_mean(self):
        return [statistics.fmean(s) for s in self.samples]

    @property
    def mean(self):
        return statistics.fmean(x for s in self.samples for x in s)

    @property
    def std(self):
        flat = [x for s in self.samples for x in s]
        return statistics.pstdev(flat) if len(flat) > 1 else 0.0

    def to_json(self):
        d = asdict(self)
        d["mean_s"], d["std_s"] = self.mean, self.std
        return json.dumps(d, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("schema_version") != TIMING_SCHEMA:
            raise CaseFormatError("unsupported timing report schema")
        d.pop("mean_s", None)
        d.pop("std_s", None)
        return cls(**d)


def benchmark_inference(params, cases, stats, repetitions=20, solver_reference_s=None,
                        clock=time.perf_counter) -> TimingReport:
    """Forward-pass wall time per case; one warm-up pass per case is discarded."""
    if repetitions < 5:
        raise ConfigurationError("benchmark needs at least 5 repetitions")
    model = Model(params)
    samples, ids, sizes = [], [], []
    for case in cases:
        nc = normalize_case(case, stats)
        model.predict(nc, stats)
        times = []
        for _ in range(repetitions):
            t0 = clock()
            model.predict(nc, stats)
            times.append(clock() - t0)
        samples.append(times)
        ids.append(case.case_id)
        sizes.append(case.n_points)
    return TimingReport(samples, ids, sizes, repetitions, solver_reference_s)
