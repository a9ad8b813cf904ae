import json
from dataclasses import replace

import numpy as np
import pytest

from ctin.dataio import (
    GRAVITY,
    OrientationSource,
    SyntheticSpec,
    corpus_specs,
    gen_synthetic,
    integrate_gyro,
    load_dataset,
    load_sequence,
    orientations_for,
    save_sequence,
    select_orientation,
    stationary_sequence,
    true_imu,
)
from ctin.errors import ConfigError, DataError, FormatError
from ctin.geometry import rotate_vec

FIELDS = ("timestamps", "gyro", "accel", "orientations", "gt_positions", "device_orientations")

FIXTURE_HEADER = "t,gx,gy,gz,ax,ay,az,qw,qx,qy,qz,px,py,pz\n"


def _write_fixture(path, times, rate=200.0):
    rows = "".join(f"{t},0,0,0,0,0,9.81,1,0,0,0,0,0,0\n" for t in times)
    path.write_text(FIXTURE_HEADER + rows)
    meta = {"sample_rate_hz": rate, "dataset_kind": "synthetic", "subject": "", "gravity": 9.81}
    path.with_name(path.stem + ".meta.json").write_text(json.dumps(meta))
    return path


@pytest.fixture(scope="module")
def noisy():
    spec = SyntheticSpec("random-heading-walk", duration=5.0, gyro_noise_std=0.01, accel_noise_std=0.1,
                         gyro_bias=(0.01, -0.02, 0.03), rng_seed=7, device_yaw_walk_std=0.02)
    return spec, gen_synthetic(spec)


def test_round_trip_is_field_identical(tmp_path, noisy):
    _, seq = noisy
    save_sequence(seq, tmp_path / "a.csv")
    back = load_sequence(tmp_path / "a.csv")
    for f in FIELDS:
        np.testing.assert_array_equal(getattr(back, f), getattr(seq, f), err_msg=f)
    assert (back.sample_rate_hz, back.gravity, back.dataset_kind) == (seq.sample_rate_hz, seq.gravity, seq.dataset_kind)


def test_canonical_form_is_idempotent(tmp_path, noisy):
    save_sequence(noisy[1], tmp_path / "a.csv")
    save_sequence(load_sequence(tmp_path / "a.csv"), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_three_row_fixture(tmp_path):
    seq = load_sequence(_write_fixture(tmp_path / "f.csv", [0, 0.005, 0.01]))
    assert len(seq) == 3
    assert seq.dt == 0.005


def test_non_monotone_timestamps_rejected_at_row_three(tmp_path):
    with pytest.raises(DataError, match="row 3"):
        load_sequence(_write_fixture(tmp_path / "f.csv", [0, 0.01, 0.005], rate=100.0))


def test_bad_header_is_format_error(tmp_path):
    p = _write_fixture(tmp_path / "f.csv", [0, 0.005])
    p.write_text(p.read_text().replace("gx", "wx", 1))
    with pytest.raises(FormatError, match="gx"):
        load_sequence(p)


def test_missing_sidecar(tmp_path):
    p = _write_fixture(tmp_path / "f.csv", [0, 0.005])
    p.with_name("f.meta.json").unlink()
    with pytest.raises(FormatError, match="sidecar"):
        load_sequence(p)


@pytest.mark.parametrize("n", [0, 1])
def test_too_short_sequence_rejected(n):
    with pytest.raises(DataError):
        stationary_sequence(n)


def test_sixty_seconds_is_12000_rows(tmp_path):
    seq = gen_synthetic(SyntheticSpec("line", duration=60.0))
    save_sequence(seq, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) - 1 == 12000


def test_load_dataset_sorted(tmp_path):
    for name in ("b", "a"):
        save_sequence(stationary_sequence(4), tmp_path / f"{name}.csv")
    assert [n for n, _ in load_dataset(tmp_path)] == ["a", "b"]
    with pytest.raises(DataError):
        load_dataset(tmp_path / "missing")


@pytest.mark.parametrize(
    "kind, phase, expected",
    [
        ("IDOL", "test", OrientationSource.GROUND_TRUTH),
        ("OxIOD", "test", OrientationSource.DEVICE_ESTIMATED),
        ("OxIOD", "train", OrientationSource.GROUND_TRUTH),
        ("synthetic", "train", OrientationSource.GROUND_TRUTH),
        ("RIDI", "validate", OrientationSource.IMU_INTEGRATED),
        ("RoNIN", "test", OrientationSource.DEVICE_ESTIMATED),
        ("RoNIN", "train", OrientationSource.GROUND_TRUTH),
    ],
)
def test_orientation_policy(kind, phase, expected):
    assert select_orientation(kind, phase) is expected


@pytest.mark.parametrize("err, expected", [(5.0, OrientationSource.DEVICE_ESTIMATED), (25.0, OrientationSource.GROUND_TRUTH)])
def test_ronin_alignment_rule(err, expected):
    assert select_orientation("ronin", "train", alignment_error_deg=err) is expected


@pytest.mark.parametrize("kind, phase", [("tlio", "test"), ("idol", "deploy")])
def test_orientation_policy_rejects_unknown(kind, phase):
    with pytest.raises(ConfigError):
        select_orientation(kind, phase)


def test_straight_line_closed_form(clean_line):
    np.testing.assert_allclose(clean_line.gt_positions[:, 0], clean_line.timestamps, atol=1e-12)
    np.testing.assert_allclose(clean_line.gt_positions[:, 1:], 0.0, atol=1e-12)
    np.testing.assert_allclose(clean_line.accel, np.tile([0, 0, GRAVITY], (len(clean_line), 1)), atol=1e-6)
    np.testing.assert_allclose(clean_line.gyro, 0.0, atol=1e-12)


def test_circle_centripetal_magnitude(clean_circle):
    nav = rotate_vec(clean_circle.orientations, clean_circle.accel) - [0, 0, GRAVITY]
    np.testing.assert_allclose(np.linalg.norm(nav[:, :2], axis=1), 0.2, rtol=1e-5)


def test_gyro_bias_is_additive():
    spec = SyntheticSpec("circle", duration=2.0, gyro_bias=(0, 0, 0.05))
    gyro, _ = true_imu(spec)
    np.testing.assert_array_equal(gen_synthetic(spec).gyro, gyro + np.array([0, 0, 0.05]))


def test_generation_is_deterministic(noisy):
    spec, seq = noisy
    again = gen_synthetic(spec)
    for f in FIELDS:
        np.testing.assert_array_equal(getattr(again, f), getattr(seq, f))


def test_noise_statistics():
    spec = SyntheticSpec("circle", duration=60.0, gyro_noise_std=0.01, accel_noise_std=0.1, rng_seed=3)
    seq = gen_synthetic(spec)
    gyro, accel = true_imu(spec)
    for noise, std in ((seq.gyro - gyro, 0.01), (seq.accel - accel, 0.1)):
        n = len(noise)
        assert n == 12000
        assert np.all(np.abs(noise.mean(axis=0)) < 4 * std / np.sqrt(n))
        np.testing.assert_allclose(noise.var(axis=0), std**2, rtol=0.1)


def test_imu_channels_integrate_to_ground_truth_orientation():
    seq = gen_synthetic(SyntheticSpec("figure-eight", duration=20.0, radius=3.0, mount=(0.99, 0.1, 0.05, 0.0)))
    q = integrate_gyro(seq.orientations[0], seq.gyro, seq.dt)
    np.testing.assert_allclose(np.abs(np.einsum("ni,ni->n", q, seq.orientations)), 1.0, atol=1e-9)


def test_device_orientation_channel(noisy):
    _, seq = noisy
    dev = orientations_for(seq, OrientationSource.DEVICE_ESTIMATED)
    np.testing.assert_array_equal(dev[0], seq.orientations[0])
    assert not np.allclose(dev, seq.orientations)
    with pytest.raises(DataError):
        orientations_for(replace(seq, device_orientations=None), OrientationSource.DEVICE_ESTIMATED)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec("spiral")
    with pytest.raises(ConfigError):
        SyntheticSpec.from_dict({"trajectory_kind": "line", "colour": "red"})


def test_corpus_specs_mix_and_determinism():
    a, b = corpus_specs(9, seed=4), corpus_specs(9, seed=4)
    assert a == b
    assert [s.trajectory_kind for s in a[:3]] == ["circle", "line", "random-heading-walk"]
    assert all(0.6 <= s.speed <= 1.5 for s in a)
