import struct
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastmuygps import fast_predict as fp
from fastmuygps import muygps as mg
from fastmuygps import nn_index as nn
from fastmuygps.errors import DomainError, ModelFormatError, VersionMismatchError
from fastmuygps.exact_gp import TrainingSet, posterior_mean
from fastmuygps.kernel import KernelKind, KernelParams, cov_matrix

MATERN = KernelKind.MATERN
RBF = KernelKind.RBF


def random_set(seed, n=60, d=3, offset=0.0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    return TrainingSet(X, np.sin(3 * X).sum(axis=1) + 0.1 * rng.normal(size=n), offset)


def make_model(ts, p, k, kind=MATERN, mode="exact"):
    return fp.precompute(ts, mg.FittedParams(p, kind, 0.0, 0), nn.build(ts.X, mode), k)


@pytest.fixture(scope="module", params=["exact", "graph"])
def model(request):
    ts = random_set(0, n=400, offset=3.5)
    return make_model(ts, KernelParams(rho=0.3, nu=2.5, tau=1e-3), 12, mode=request.param)


# ---------------------------------------------------------------- precompute


def test_single_point_model():
    ts = TrainingSet([[0.5, 0.5]], [2.0])
    p = KernelParams(sigma=1.5, tau=0.2)
    m = make_model(ts, p, 1)
    np.testing.assert_allclose(m.C, [[2.0 / (p.sigma**2 * (1 + p.tau**2))]], rtol=1e-15)


def test_zero_responses_give_zero_coefficients():
    ts = random_set(1).with_responses(np.zeros(60))
    assert not make_model(ts, KernelParams(), 8).C.any()


def test_row_residuals_small():
    ts = random_set(2, n=40)
    m = make_model(ts, KernelParams(rho=0.5, nu=1.5, tau=1e-3), 10)
    assert fp.residuals(m, ts.Y).max() <= 1e-8
    # independent check of one row with a dense solve
    S = m.table.S[7]
    np.testing.assert_allclose(cov_matrix(ts.X[S], ts.X[S], MATERN, m.theta_hat) @ m.C[7],
                               ts.Y[S], rtol=1e-8)


def test_neighbor_table_layout():
    ts = random_set(3, n=50)
    index = nn.build(ts.X)
    table = fp.neighbor_table(index, 6)
    np.testing.assert_array_equal(table.S[:, 0], np.arange(50))
    for i in (0, 13, 49):
        np.testing.assert_array_equal(table.S[i, 1:],
                                      nn.query_knn(index, ts.X[i], 5, exclude_self=i).indices)


@pytest.mark.parametrize("S", [[[1, 0], [0, 1]], [[0, 0], [1, 0]], [[0, 5], [1, 0]]])
def test_neighbor_table_validation(S):
    with pytest.raises(DomainError):
        fp.NeighborTable(np.array(S))


def test_index_must_match_training_set():
    ts = random_set(4, n=30)
    other = nn.build(ts.X + 1.0)
    with pytest.raises(DomainError):
        fp.precompute(ts, mg.FittedParams(KernelParams(), RBF, 0, 0), other, 5)


# ---------------------------------------------------------------- prediction


def test_training_point_reproduces_response():
    ts = random_set(5, n=100, offset=-2.0)
    m = make_model(ts, KernelParams(rho=0.3, nu=2.5), 10)
    j = 42
    assert fp.fast_predict_one(m, ts.X[j]) == pytest.approx(ts.Y[j] - 2.0, abs=1e-6)
    np.testing.assert_allclose(fp.fast_predict_batch(m, ts.X), ts.Y - 2.0, atol=1e-6)


@pytest.mark.parametrize("kind,nu", [(MATERN, 0.5), (MATERN, 1.5), (MATERN, 2.5), (MATERN, 0.9),
                                     (RBF, 0.5)])
def test_full_neighborhood_equals_dense(kind, nu):
    ts = random_set(6, n=50, offset=1.25)
    p = KernelParams(rho=0.6, nu=nu, tau=1e-3)
    m = make_model(ts, p, 50, kind)
    Z = np.random.default_rng(7).uniform(size=(30, 3))
    np.testing.assert_allclose(fp.fast_predict_batch(m, Z), posterior_mean(ts, Z, kind, p),
                               rtol=1e-8)


def test_zero_responses_predict_mean_offset():
    ts = random_set(8, offset=9.0).with_responses(np.zeros(60))
    m = make_model(ts, KernelParams(), 5)
    assert fp.fast_predict_one(m, np.full(3, 0.3)) == 9.0


def test_batch_of_one_matches_single(model):
    z = np.random.default_rng(9).uniform(size=3)
    assert fp.fast_predict_batch(model, z[None, :])[0] == fp.fast_predict_one(model, z)


def test_batch_matches_loop(model):
    Z = np.random.default_rng(10).uniform(size=(25, 3))
    np.testing.assert_array_equal(fp.fast_predict_batch(model, Z),
                                  [fp.fast_predict_one(model, z) for z in Z])


def test_query_dimension_checked(model):
    with pytest.raises(DomainError):
        fp.fast_predict_batch(model, np.zeros((2, 4)))
    with pytest.raises(DomainError):
        fp.fast_predict_one(model, np.zeros((2, 3)))


def test_agrees_with_muygps_when_neighbor_sets_coincide():
    ts = random_set(11, n=300)
    p = KernelParams(rho=0.4, nu=1.5, tau=1e-2)
    k = 15
    m = make_model(ts, p, k)
    index = m.index
    rng = np.random.default_rng(12)
    checked = 0
    for j in rng.choice(300, size=40, replace=False):
        z = ts.X[j] + rng.normal(scale=1e-3, size=3)
        own = nn.query_knn(index, z, k).indices
        if nn.nearest_training_point(index, z) != j or set(own) != set(m.table.S[j]):
            continue
        want = mg.muygps_predict(ts, z[None, :], mg.FittedParams(p, MATERN, 0, 0), index, k)[0]
        assert fp.fast_predict_one(m, z) == pytest.approx(want, rel=1e-8, abs=1e-12)
        checked += 1
    assert checked >= 20


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linear_in_responses(seed, a, b):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(80, 2))
    Y1, Y2 = rng.normal(size=80), rng.normal(size=80)
    Z = rng.uniform(size=(10, 2))
    p = KernelParams(rho=0.3, nu=2.5, tau=1e-3)
    f = lambda Y: fp.fast_predict_batch(make_model(TrainingSet(X, Y), p, 8), Z)  # noqa: E731
    lhs, r1, r2 = f(a * Y1 + b * Y2), a * f(Y1), b * f(Y2)
    assert np.abs(lhs - (r1 + r2)).max() <= 1e-10 * (np.abs(r1).max() + np.abs(r2).max() + 1e-300)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(1e-2, 1e2),
       kind_nu=st.sampled_from([(MATERN, 0.5), (MATERN, 2.5), (MATERN, 1.2), (RBF, 0.5)]))
def test_sigma_invariance(seed, c, kind_nu):
    kind, nu = kind_nu
    ts = random_set(seed, n=80)
    p = KernelParams(rho=0.4, nu=nu, tau=1e-2)
    Z = np.random.default_rng(seed).uniform(size=(10, 3))
    base = fp.fast_predict_batch(make_model(ts, p, 10, kind), Z)
    scaled = fp.fast_predict_batch(make_model(ts, p.replace(sigma=c), 10, kind), Z)
    np.testing.assert_allclose(scaled, base, rtol=1e-10)


def test_concurrent_predictions_match(model):
    Z = np.random.default_rng(13).uniform(size=(400, 3))
    want = fp.fast_predict_batch(model, Z)
    with ThreadPoolExecutor(4) as pool:
        parts = list(pool.map(lambda s: fp.fast_predict_batch(model, Z[s : s + 50]),
                              range(0, 400, 50)))
    np.testing.assert_array_equal(np.concatenate(parts), want)


def test_with_index_swaps_lookup_only(model):
    scan = model.with_index(nn.build(model.X, "exact"))
    assert scan.C is model.C
    Z = model.X[:20]
    np.testing.assert_array_equal(fp.fast_predict_batch(scan, Z), fp.fast_predict_batch(model, Z))
    with pytest.raises(DomainError):
        model.with_index(nn.build(model.X[:10]))


# ---------------------------------------------------------------- serialization


def test_round_trip_bit_exact(model, tmp_path):
    path = tmp_path / "m.fmgp"
    nbytes = fp.save_model(model, path)
    assert nbytes == path.stat().st_size == fp.serialized_size(model)
    back = fp.load_model(path)
    for name in ("C", "X"):
        assert getattr(back, name).tobytes() == getattr(model, name).tobytes()
    np.testing.assert_array_equal(back.table.S, model.table.S)
    assert back.theta_hat == model.theta_hat and back.kind == model.kind
    assert back.mean_offset == model.mean_offset and back.index.mode == model.index.mode
    Z = np.random.default_rng(14).uniform(size=(100, 3))
    assert fp.fast_predict_batch(back, Z).tobytes() == fp.fast_predict_batch(model, Z).tobytes()


def test_header_layout(model):
    data = fp._model_bytes(model)
    assert data[:4] == b"FMGP"
    assert struct.unpack_from("<IQQQ", data, 4) == (1, model.n, model.dim, model.k)
    assert struct.unpack_from("<I", data, len(data) - 4)[0] == zlib.crc32(data[:-4])


@pytest.mark.parametrize("cut", [1, 3, 10, 60, 1000, -5, -1])
def test_truncated_file_rejected(model, cut):
    data = fp._model_bytes(model)
    with pytest.raises(ModelFormatError) as info:
        fp.model_from_bytes(data[:cut] if cut > 0 else data[:len(data) + cut])
    assert info.value.offset is not None
    assert "byte offset" in str(info.value)


def test_version_bump_rejected(model):
    data = bytearray(fp._model_bytes(model))
    struct.pack_into("<I", data, 4, fp.FORMAT_VERSION + 1)
    with pytest.raises(VersionMismatchError) as info:
        fp.model_from_bytes(bytes(data))
    assert info.value.offset == 4


def test_corruption_caught_by_checksum(model):
    data = bytearray(fp._model_bytes(model))
    pos = 4 + 4 + 24 + 32 + 4 + 8 * 5  # inside X
    data[pos] ^= 0x40
    with pytest.raises(ModelFormatError, match="checksum"):
        fp.model_from_bytes(bytes(data))


def test_bad_magic_and_trailing_bytes(model, tmp_path):
    data = fp._model_bytes(model)
    with pytest.raises(ModelFormatError, match="magic"):
        fp.model_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ModelFormatError, match="trailing"):
        fp.model_from_bytes(data + b"\0")


def test_loaded_model_is_read_only(model, tmp_path):
    fp.save_model(model, tmp_path / "m")
    back = fp.load_model(tmp_path / "m")
    with pytest.raises(ValueError):
        back.C[0, 0] = 1.0
    with pytest.raises(ValueError):
        back.X[0, 0] = 1.0


def _assert_affine(ns, sizes):
    ns, sizes = np.asarray(ns, float), np.asarray(sizes, float)
    fit = np.polyval(np.polyfit(ns, sizes, 1), ns)
    assert np.all(np.abs(fit - sizes) <= 0.05 * sizes)


def test_serialized_size_affine_in_n():
    rng = np.random.default_rng(15)
    k = 10
    sizes = []
    # the file layout does not depend on coefficient values, so a cheap
    # ring-shaped neighbor table stands in for a full precompute here
    for n in (10_000, 50_000, 100_000):
        X = rng.uniform(size=(n, 3))
        S = (np.arange(n)[:, None] + np.arange(k)) % n
        m = fp.PrecomputedModel(rng.normal(size=(n, k)), fp.NeighborTable(S), KernelParams(),
                                RBF, X, 0.0, nn.build(X))
        sizes.append(fp.serialized_size(m))
    _assert_affine((10_000, 50_000, 100_000), sizes)


def test_serialized_size_affine_in_n_with_graph():
    rng = np.random.default_rng(16)
    p = mg.FittedParams(KernelParams(rho=0.5, tau=1e-3), RBF, 0, 0)
    ns, sizes = (2_000, 6_000, 10_000), []
    for n in ns:
        ts = TrainingSet(rng.uniform(size=(n, 3)), rng.normal(size=n))
        sizes.append(fp.serialized_size(fp.precompute(ts, p, nn.build(ts.X, "graph"), 5)))
    _assert_affine(ns, sizes)
