import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porenet.dataset import (STD_FLOOR, CaseMeta, DatasetSplit, FlowField, PointCloudCase, boundary_targets,
                             columns, compute_normalization, denormalize_coords, denormalize_field,
                             load_case, load_dataset, normalize_case, normalize_coords, normalize_D,
                             normalize_field, save_case, save_dataset, select_observations,
                             split_dataset, subsample_case)
from porenet.errors import CaseFormatError, ConfigurationError, ValidationError
from porenet.generate import DUCT_DOMAIN, MMS_DOMAIN, duct_case, mms_case, random_shape
from porenet.geometry import INLET, OUTLET, WALL


def _tiny_case(n=10, with_reference=True, seed=0, case_id="tiny"):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0, 1, size=(n, 2))
    sdf = rng.uniform(0.1, 1.0, size=n)
    chi = np.zeros(n, dtype=int)
    chi[:3] = 1
    sdf[:3] *= -1
    onehot = np.zeros((n, 4))
    onehot[-4:] = np.eye(4)
    onehot[-1] = [0, 0, 0, 1]
    sdf[-1], chi[-1] = 0.0, 1
    D = np.where(chi == 1, 250.0, 0.0)
    F = np.where(chi == 1, 3.5, 0.0)
    meta = CaseMeta(kind="generic", inlet_speed=1.25, inlet_angle_deg=10.0, rho=1.2, mu=0.01,
                    D=250.0, F=3.5, provenance="unit test")
    case = PointCloudCase(coords, chi, sdf, onehot, D, F, meta=meta, case_id=case_id)
    if with_reference:
        case = case.with_reference(rng.normal(size=(n, 2)), rng.normal(size=n))
    return case.validate()


# ------------------------------------------------------------ format

def test_round_trip_is_exact(tmp_path):
    case = select_observations(_tiny_case(), 4, seed=3)
    loaded = load_case(save_case(case, tmp_path / "c"))
    assert loaded == case
    assert loaded.observation_seed == 3


def test_round_trip_generated_case(tmp_path):
    case = mms_case(random_shape(np.random.default_rng(0), MMS_DOMAIN), 0)
    assert load_case(save_case(case, tmp_path / "m")) == case


def test_header_matches_documented_columns(tmp_path):
    save_case(_tiny_case(), tmp_path / "c")
    header = (tmp_path / "c" / "points.csv").read_text().splitlines()[0]
    assert header == ("x,y,chi,sdf,onehot_inlet,onehot_outlet,onehot_wall,onehot_interface,D,F,"
                      "u_x,u_y,p")
    assert columns(3, False)[:3] == ["x", "y", "z"]


def test_missing_reference_block_loads_as_absent(tmp_path):
    case = load_case(save_case(_tiny_case(with_reference=False), tmp_path / "c"))
    assert not case.has_reference and case.ref_u is None and case.ref_p is None


def test_invalid_fixture_names_point_index(tmp_path):
    save_case(_tiny_case(), tmp_path / "c")
    path = tmp_path / "c" / "points.csv"
    lines = path.read_text().splitlines()
    cells = lines[5 + 1].split(",")  # point 5 is a fluid point with positive sdf
    cells[2] = "1"
    lines[6] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match="point 5") as exc:
        load_case(tmp_path / "c")
    assert exc.value.point_index == 5


def test_schema_mismatch(tmp_path):
    save_case(_tiny_case(), tmp_path / "c")
    m = tmp_path / "c" / "manifest.json"
    d = json.loads(m.read_text())
    d["schema_version"] = 99
    m.write_text(json.dumps(d))
    with pytest.raises(CaseFormatError, match="schema"):
        load_case(tmp_path / "c")


def test_truncated_file(tmp_path):
    save_case(_tiny_case(), tmp_path / "c")
    path = tmp_path / "c" / "points.csv"
    path.write_text("\n".join(path.read_text().splitlines()[:-2]) + "\n")
    with pytest.raises(CaseFormatError, match="truncated"):
        load_case(tmp_path / "c")


def test_short_row_and_missing_files(tmp_path):
    save_case(_tiny_case(), tmp_path / "c")
    path = tmp_path / "c" / "points.csv"
    lines = path.read_text().splitlines()
    lines[3] = ",".join(lines[3].split(",")[:-1])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CaseFormatError, match="row 2"):
        load_case(tmp_path / "c")
    path.unlink()
    with pytest.raises(CaseFormatError, match="points.csv"):
        load_case(tmp_path / "c")
    with pytest.raises(CaseFormatError, match="manifest"):
        load_case(tmp_path / "nowhere")


def test_dataset_directory_round_trip(tmp_path):
    cases = [_tiny_case(seed=i, case_id=f"c{i}") for i in (2, 0, 1)]
    loaded = load_dataset(save_dataset(cases, tmp_path / "ds"))
    assert [c.case_id for c in loaded] == ["c0", "c1", "c2"]
    with pytest.raises(CaseFormatError):
        load_dataset(tmp_path / "empty")


def test_nonconstant_porous_coefficients_rejected():
    case = _tiny_case()
    D = case.D.copy()
    D[0] = 1.0
    with pytest.raises(ValidationError):
        case.replace(D=D).validate()


# ------------------------------------------------------------ normalization

def test_constant_pressure_is_flagged():
    case = _tiny_case()
    case = case.with_reference(case.ref_u, np.full(case.n_points, 5.0))
    s = compute_normalization([case])
    assert s.p_mean == 5.0 and s.p_std == STD_FLOOR
    assert "pressure" in s.constant


def test_two_point_statistics():
    a, b = _tiny_case(seed=1, case_id="a"), _tiny_case(seed=2, case_id="b")
    a = a.with_reference(np.zeros_like(a.ref_u), a.ref_p)
    b = b.with_reference(np.full_like(b.ref_u, 2.0), b.ref_p)
    s = compute_normalization([a, b])
    assert s.vel_mean == (1.0, 1.0) and s.vel_std == (1.0, 1.0)


def _welford(rows):
    n, mean, m2 = 0, np.zeros(rows.shape[1]), np.zeros(rows.shape[1])
    for r in rows:
        n += 1
        delta = r - mean
        mean += delta / n
        m2 += delta * (r - mean)
    return mean, np.sqrt(m2 / n)


def test_statistics_match_streaming_oracle():
    rng = np.random.default_rng(5)
    cases = []
    for i in range(4):
        c = _tiny_case(n=50, seed=i, case_id=f"c{i}")
        cases.append(c.replace(coords=rng.normal(3.0, 2.0, size=(50, 2))).with_reference(
            rng.normal(-1.0, 0.5, size=(50, 2)), rng.normal(100.0, 7.0, size=50)))
    s = compute_normalization(cases)
    for attr_m, attr_s, rows in (("coord_mean", "coord_std", np.concatenate([c.coords for c in cases])),
                                 ("vel_mean", "vel_std", np.concatenate([c.ref_u for c in cases]))):
        mean, std = _welford(rows)
        assert np.allclose(getattr(s, attr_m), mean, rtol=1e-12, atol=1e-12)
        assert np.allclose(getattr(s, attr_s), std, rtol=1e-12)
    mean, std = _welford(np.concatenate([c.ref_p for c in cases])[:, None])
    assert s.p_mean == pytest.approx(mean[0], rel=1e-12)
    assert s.p_std == pytest.approx(std[0], rel=1e-12)


def test_empty_input_is_error():
    with pytest.raises(ConfigurationError):
        compute_normalization([])


def test_no_leakage_outside_training_split():
    cases = [_tiny_case(seed=i, case_id=f"c{i}") for i in range(5)]
    split = split_dataset([c.case_id for c in cases], 0)
    train = [c for c in cases if c.case_id in split.train]
    compute_normalization(train, split=split)
    with pytest.raises(ConfigurationError, match="outside the training split"):
        compute_normalization(cases, split=split)


def test_centering_and_unit_range():
    case = _tiny_case()
    s = compute_normalization([case])
    assert np.allclose(normalize_coords(np.asarray(s.coord_mean)[None], s), 0.0, atol=0)
    nf = normalize_field(FlowField(np.asarray(s.vel_mean)[None], np.array([s.p_mean])), s)
    assert np.all(nf.u == 0.0) and nf.p[0] == 0.0
    assert normalize_D(s.D_min, s) == 0.0 and normalize_D(s.D_max, s) == 1.0


def test_out_of_range_D_passes_through():
    case = _tiny_case()
    s = compute_normalization([case])
    s = type(s)(**{**s.to_dict(), "D_min": 1000.0, "D_max": 14000.0})
    v = normalize_D(16000.0, s)
    assert v > 1.0 and v == pytest.approx(15000.0 / 13000.0, rel=1e-15)


def test_normalized_case_keeps_labels():
    case = _tiny_case()
    nc = normalize_case(case, compute_normalization([case]))
    assert np.array_equal(nc.chi, case.chi) and np.array_equal(nc.onehot, case.onehot)


def test_stats_for_wrong_dimension_rejected():
    case = _tiny_case()
    s = compute_normalization([case])
    bad = type(s)(**{**s.to_dict(), "vel_std": (1.0,)})
    with pytest.raises(ConfigurationError):
        normalize_case(case, bad)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6),
       st.lists(st.floats(1e-3, 1e3), min_size=5, max_size=5))
def test_denormalize_inverts_normalize(vals, stds):
    case = _tiny_case()
    s = compute_normalization([case])
    s = type(s)(**{**s.to_dict(), "coord_mean": tuple(vals[:2]), "coord_std": tuple(stds[:2]),
                   "vel_mean": tuple(vals[2:4]), "vel_std": tuple(stds[2:4]), "p_mean": vals[4],
                   "p_std": stds[4]})
    x = np.random.default_rng(0).normal(size=(20, 2)) * 10
    assert np.max(np.abs(denormalize_coords(normalize_coords(x, s), s) - x)) < 1e-12 * max(1.0, np.abs(vals).max())
    fld = FlowField(np.random.default_rng(1).normal(size=(20, 2)), np.random.default_rng(2).normal(size=20))
    back = denormalize_field(normalize_field(fld, s), s)
    scale = max(1.0, np.abs(vals).max())
    assert np.max(np.abs(back.u - fld.u)) < 1e-12 * scale
    assert np.max(np.abs(back.p - fld.p)) < 1e-12 * scale


def test_physics_only_stats_use_inlet_scale():
    case = duct_case(random_shape(np.random.default_rng(0), DUCT_DOMAIN), 0, inlet_speed=2.0)
    s = compute_normalization([case])
    assert s.vel_std == (2.0, 2.0) and s.p_std == 4.0
    assert "velocity:no-reference" in s.constant


# ------------------------------------------------------------ boundaries and splits

def test_duct_boundary_targets():
    case = duct_case(random_shape(np.random.default_rng(1), DUCT_DOMAIN), 1, inlet_speed=1.5,
                     inlet_angle_deg=0.0)
    u, p, mu, mp = boundary_targets(case)
    tags = case.tags[case.boundary_idx]
    assert np.allclose(u[tags == INLET], [1.5, 0.0]) and np.all(mu[tags == INLET] == 1)
    assert np.all(u[tags == WALL] == 0) and np.all(mu[tags == WALL] == 1)
    assert np.all(mp[tags == OUTLET] == 1) and np.all(mp[tags != OUTLET] == 0)


def test_split_examples():
    s10 = split_dataset([f"c{i}" for i in range(10)], 0)
    assert (len(s10.train), len(s10.validation), len(s10.test)) == (6, 2, 2)
    s7 = split_dataset([f"c{i}" for i in range(7)], 0)
    assert (len(s7.train), len(s7.validation), len(s7.test)) == (5, 1, 1)
    assert split_dataset([f"c{i}" for i in range(10)], 0) == s10
    assert DatasetSplit.from_dict(s10.to_dict()) == s10


def test_split_too_small_or_duplicated():
    with pytest.raises(ConfigurationError):
        split_dataset(["a", "b", "c", "d"], 0)
    with pytest.raises(ConfigurationError):
        split_dataset(["a", "a", "b", "c", "d"], 0)


def test_split_disjoint_and_deterministic_over_many_seeds():
    ids = [f"case{i}" for i in range(13)]
    for seed in range(1000):
        s = split_dataset(ids, seed)
        parts = [set(s.train), set(s.validation), set(s.test)]
        assert sum(map(len, parts)) == 13 and set().union(*parts) == set(ids)
        assert (len(s.train), len(s.validation), len(s.test)) == (9, 2, 2)
    assert split_dataset(ids, 999) == s


def test_observations_are_seeded():
    case = _tiny_case()
    a, b = select_observations(case, 5, 9), select_observations(case, 5, 9)
    assert np.array_equal(a.observations, b.observations) and a.observation_seed == 9
    with pytest.raises(ConfigurationError):
        select_observations(case, 11, 0)


def test_subsample_keeps_counts_and_labels():
    case = mms_case(random_shape(np.random.default_rng(2), MMS_DOMAIN), 2)
    sub = subsample_case(case, 300, 80, seed=4)
    assert len(sub.interior_idx) == 300 and len(sub.boundary_idx) == 80
    sub.validate()
    assert subsample_case(case, 300, 80, seed=4) == sub
