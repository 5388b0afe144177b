import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from spectomo.analysis import sv_ensemble, sv_scan, write_envelopes_csv
from spectomo.cast import MAGIC, dumps, loads, read_cast, write_cast
from spectomo.errors import BudgetExceeded
from spectomo.imaging import read_pnm, render_images, to_uint8
from spectomo.kernel import ImagingGeometry, build_kernel_table
from spectomo.spectra import demo_library
from spectomo.uniqueness import adversarial_spectra, nullspace_basis
from tests.helpers import crandn


# singular-value scans -------------------------------------------------------------

def test_scan_unit_spectrum_equals_kernel(small_table):
    a = sv_scan(np.ones((small_table.shape[2], 1)), small_table, [0, 2])
    b = sv_scan(None, small_table, [0, 2])
    for q in (0, 2):
        np.testing.assert_allclose(a[q], b[q], rtol=1e-12, atol=1e-14 * b[q][0])
        np.testing.assert_allclose(b[q], np.linalg.svd(small_table.stacked(q), compute_uv=False),
                                   rtol=1e-12)


def test_scan_spectra_sorted_non_negative(small_table, rng):
    sc = sv_scan(crandn(rng, small_table.shape[2], 2), small_table)
    assert sc.q == list(range(small_table.shape[1]))
    for s in sc.values:
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)


def test_scan_zero_beyond_support():
    g = ImagingGeometry(Nx=32, Nz=8, Nk=6, Lx=16.0, Lz=8.0, kmin=0.4, kmax=1.1, NA=0.4,
                        focal_planes=(4.0,))
    t = build_kernel_table(g)
    beyond = [q for q in range(32) if abs(g.kx[q]) > 2 * g.kmax]
    sc = sv_scan(np.ones((6, 2)), t, beyond)
    assert beyond and all(not np.any(s) for s in sc.values)


def test_scan_normalization(small_table, rng):
    sc = sv_scan(crandn(rng, small_table.shape[2], 2), small_table, [1], normalize=True)
    assert sc[1][0] == pytest.approx(1.0)
    assert sc.metadata["normalized"] and sc.metadata["Ns"] == 2


def test_scan_permutation_invariant(small_table, rng):
    H = crandn(rng, small_table.shape[2], 3)
    a = sv_scan(H, small_table, [0, 3])
    b = sv_scan(H[:, [2, 0, 1]], small_table, [0, 3])
    for q in (0, 3):
        np.testing.assert_allclose(a[q], b[q], rtol=1e-10, atol=1e-13 * a[q][0])


def test_scan_budget(small_table):
    with pytest.raises(BudgetExceeded):
        sv_scan(np.ones((small_table.shape[2], 2)), small_table, budget=100)


def test_scan_csv(small_table, tmp_path):
    sc = sv_scan(None, small_table, [1])
    sc.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "q,index,sigma"
    assert len(lines) == 1 + len(sc[1])
    assert float(lines[1].split(",")[2]) == sc[1][0]


# ensembles ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def narrow_table():
    # Nk >= 2 r so adversarial pairs fit in one plane
    g = ImagingGeometry(Nx=8, Nz=8, Nk=24, Lx=17.6, Lz=5.6, kmin=0.7, kmax=2.1, NA=0.5,
                        focal_planes=(1.5, 2.8, 4.0))
    return build_kernel_table(g)


def test_single_trial_envelope_collapses(narrow_table):
    lib = demo_library(narrow_table.geometry.wavenumbers, 4, seed=1)
    env = sv_ensemble(lib, 2, [1, 3], 1, 0, narrow_table)
    assert [e.Nf for e in env] == [1, 3]
    for e in env:
        np.testing.assert_array_equal(e.lower, e.upper)


def test_ensemble_deterministic(narrow_table):
    a = sv_ensemble(None, 2, [2], 5, 9, narrow_table)[0]
    b = sv_ensemble(None, 2, [2], 5, 9, narrow_table)[0]
    np.testing.assert_array_equal(a.lower, b.lower)
    np.testing.assert_array_equal(a.upper, b.upper)
    c = sv_ensemble(None, 2, [2], 5, 10, narrow_table)[0]
    assert not np.array_equal(a.lower, c.lower)


def test_envelope_brackets_members(narrow_table):
    lib = demo_library(narrow_table.geometry.wavenumbers, 5, seed=2)
    e = sv_ensemble(lib, 2, [2], 6, 3, narrow_table)[0]
    assert np.all(e.lower <= e.upper) and e.upper[0] == pytest.approx(1.0)


def test_random_profiles_beat_adversarial_tail(narrow_table, rng):
    t = narrow_table.select_planes([1])
    b = nullspace_basis(t.stacked(0), 1e-8)
    r = b.r
    B = t.stacked(0) @ b.V
    Nk = t.shape[2]
    assert Nk >= 2 * r
    random_worst = sv_ensemble(None, 2, [1], 50, 0, t)[0].lower[2 * r - 1]
    adversarial_best = 0.0
    for _ in range(10):
        h1 = crandn(rng, Nk)
        h2 = adversarial_spectra(B, h1, crandn(rng, r), crandn(rng, r))
        s = sv_scan(np.column_stack([h1, h2]), t, [0], normalize=True)[0]
        adversarial_best = max(adversarial_best, s[2 * r - 1])
    assert random_worst > 1e3 * adversarial_best


@pytest.mark.parametrize("kw,exc", [(dict(Nf_list=[4]), ValueError), (dict(trials=0), ValueError),
                                    (dict(Ns=9), ValueError)])
def test_ensemble_validation(narrow_table, kw, exc):
    lib = demo_library(narrow_table.geometry.wavenumbers, 5, seed=2)
    args = dict(library=lib, Ns=2, Nf_list=[1], trials=2, seed=0, table=narrow_table)
    args.update(kw)
    with pytest.raises(exc):
        sv_ensemble(**args)


def test_envelope_csv(narrow_table, tmp_path):
    env = sv_ensemble(None, 1, [1, 2], 2, 0, narrow_table)
    write_envelopes_csv(env, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "Nf,index,lower,upper"
    assert len(lines) == 1 + sum(len(e.lower) for e in env)


# CAST -----------------------------------------------------------------------------

def test_cast_byte_layout():
    blob = dumps(np.array([[1.0, 2.0, 3.0]]), {"a": 1})
    assert blob[:4] == MAGIC
    assert blob[4:7] == bytes([1, 2, 0])
    assert struct.unpack("<2Q", blob[7:23]) == (1, 3)
    assert struct.unpack("<3d", blob[23:47]) == (1.0, 2.0, 3.0)
    (n,) = struct.unpack("<I", blob[47:51])
    assert blob[51:].decode("utf-8") == '{"a": 1}' and n == 8


def test_cast_complex_code():
    blob = dumps(np.array([1 + 2j]))
    assert blob[6] == 1
    assert struct.unpack("<2d", blob[15:31]) == (1.0, 2.0)


@settings(max_examples=60, deadline=None)
@given(st.one_of(
    arrays(np.float64, array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)),
    arrays(np.complex128, array_shapes(min_dims=1, max_dims=3, max_side=5))),
    st.dictionaries(st.text(max_size=5), st.one_of(st.integers(), st.text(max_size=5)),
                    max_size=3))
def test_cast_round_trip_bit_exact(a, meta):
    back, m = loads(dumps(a, meta))
    assert back.shape == a.shape and back.dtype == a.dtype
    assert back.tobytes() == np.ascontiguousarray(a).tobytes()
    assert m == meta


def test_cast_file_round_trip(tmp_path, rng):
    a = crandn(rng, 2, 3, 4)
    write_cast(tmp_path / "a.cast", a, {"seed": 3})
    back, meta = read_cast(tmp_path / "a.cast")
    np.testing.assert_array_equal(back, a)
    assert meta == {"seed": 3}


@pytest.mark.parametrize("mutate", [
    lambda b: b"XAST" + b[4:],
    lambda b: b[:4] + b"\x02" + b[5:],
    lambda b: b[:6] + b"\x07" + b[7:],
    lambda b: b[:-3],
    lambda b: b[:20],
    lambda b: b + b"x",
])
def test_cast_rejects_corruption(mutate):
    blob = dumps(np.arange(4.0), {"k": "v"})
    with pytest.raises(ValueError):
        loads(mutate(blob))


def test_cast_rejects_object_arrays():
    with pytest.raises(TypeError):
        dumps(np.array(["a"]))


# images ---------------------------------------------------------------------------

def test_zero_density_is_black(tmp_path):
    paths = render_images(np.zeros((1, 4, 3)), tmp_path)
    img = read_pnm(paths[0])
    assert img.shape == (3, 4) and not np.any(img)


def test_bright_pixel_lands_at_index(tmp_path):
    p = np.zeros((2, 5, 4), complex)
    p[1, 3, 2] = 2.0 + 1j
    paths = render_images(p, tmp_path, names=["a", "b"], mapping={"b": "G"})
    img = read_pnm(tmp_path / "b_magnitude.pgm")
    assert img[2, 3] == 255 and np.count_nonzero(img) == 1
    rgb = read_pnm(paths[-1])
    assert rgb.shape == (4, 5, 3)
    assert rgb[2, 3, 1] == 255 and np.count_nonzero(rgb) == 1


def test_fourier_input_is_inverted(tmp_path):
    p = np.zeros((1, 8, 2))
    p[0, 5, 1] = 1.0
    render_images(np.fft.fft(p, axis=1), tmp_path, fourier=True, prefix="f_")
    img = read_pnm(tmp_path / "f_species0_magnitude.pgm")
    assert img[1, 5] == 255 and np.count_nonzero(img) == 1


def test_squared_magnitude_suppresses_background(tmp_path, rng):
    p = rng.uniform(0, 1, size=(1, 6, 6))
    p[0, 0, 0] = 1.0
    render_images(p, tmp_path, transform="magnitude")
    render_images(p, tmp_path, transform="magnitude2")
    a = read_pnm(tmp_path / "species0_magnitude.pgm").astype(int)
    b = read_pnm(tmp_path / "species0_magnitude2.pgm").astype(int)
    assert np.all(b <= a)
    assert np.sum(b) < np.sum(a)


def test_channel_collision(tmp_path):
    with pytest.raises(ValueError):
        render_images(np.ones((2, 2, 2)), tmp_path, mapping={0: "R", 1: "r"})


@pytest.mark.parametrize("mapping", [{0: "X"}, {5: "R"}, {"nope": "R"}])
def test_bad_mapping(tmp_path, mapping):
    with pytest.raises(ValueError):
        render_images(np.ones((2, 2, 2)), tmp_path, mapping=mapping)


def test_bad_transform(tmp_path):
    with pytest.raises(ValueError):
        render_images(np.ones((1, 2, 2)), tmp_path, transform="log")


def test_to_uint8_scaling():
    np.testing.assert_array_equal(to_uint8(np.array([0.0, 0.5, 1.0])), [0, 128, 255])
    np.testing.assert_array_equal(to_uint8(np.zeros(3)), [0, 0, 0])


def test_pgm_header_bytes(tmp_path):
    render_images(np.ones((1, 3, 2)), tmp_path)
    raw = (tmp_path / "species0_magnitude.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n") and len(raw) == len(b"P5\n3 2\n255\n") + 6
