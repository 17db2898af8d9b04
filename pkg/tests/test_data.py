import gzip
import struct
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone
from sklearn.linear_model import LogisticRegression

from bpc.coreset import (SyntheticSet, coreset_bytes, init_coreset, load_coreset, parse_coreset,
                         save_coreset)
from bpc.data import (ChannelStandardizer, LabeledDataset, blob_centers, downsample, gen_blobs,
                      load_idx, normalize_dataset, read_idx_images, split_dataset, write_idx)
from bpc.errors import ContractError, FormatError

from oracles import idx_bytes

# two 3x4 images written by hand
FIXTURE_PIXELS = [[[0, 1, 2, 3], [4, 5, 6, 7], [250, 251, 252, 255]],
                  [[9, 0, 0, 9], [0, 128, 128, 0], [9, 0, 0, 9]]]


@pytest.fixture
def fixture_files(tmp_path):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(idx_bytes(FIXTURE_PIXELS))
    lab.write_bytes(idx_bytes([1, 0]))
    return img, lab


def test_blobs_linearly_separable():
    d = gen_blobs(200, n_classes=2, dim=2, spread=0.5, seed=1)
    clf = LogisticRegression().fit(d.inputs, d.labels)
    assert clf.score(d.inputs, d.labels) >= 0.99


def test_blobs_balanced_and_sized():
    d = gen_blobs(50, n_classes=3, dim=2, seed=0)
    assert len(d) == 150 and d.class_counts().tolist() == [50, 50, 50]


def test_blobs_deterministic_in_seed():
    a, b, c = gen_blobs(20, 3, seed=4), gen_blobs(20, 3, seed=4), gen_blobs(20, 3, seed=5)
    assert a.inputs.tobytes() == b.inputs.tobytes() and (a.labels == b.labels).all()
    assert a.inputs.tobytes() != c.inputs.tobytes()


@pytest.mark.parametrize("c,dim", [(2, 1), (2, 2), (3, 2), (5, 2), (4, 8), (10, 64)])
def test_blob_centers_far_apart(c, dim):
    spread = 0.5
    centers = blob_centers(c, dim, 6 * spread)
    assert centers.shape == (c, dim)
    gaps = [np.linalg.norm(a - b) for a, b in combinations(centers, 2)]
    assert min(gaps) >= 4 * spread - 1e-12


def test_blobs_image_view():
    d = gen_blobs(10, 3, dim=64, shape=(1, 8, 8))
    assert d.input_shape == (1, 8, 8)


def test_blobs_preconditions():
    with pytest.raises(ContractError):
        gen_blobs(10, n_classes=1)
    with pytest.raises(ContractError):
        gen_blobs(10, separation=3)


def test_idx_fixture_pixels_exact(fixture_files):
    d = load_idx(*fixture_files, normalize=False)
    assert d.input_shape == (1, 3, 4) and d.labels.tolist() == [1, 0]
    np.testing.assert_array_equal(np.rint(d.inputs[:, 0] * 255).astype(int), FIXTURE_PIXELS)


def test_idx_header_shape(tmp_path):
    img, lab = tmp_path / "i", tmp_path / "l"
    img.write_bytes(idx_bytes(np.zeros((10, 28, 28))))
    lab.write_bytes(idx_bytes(np.arange(10)))
    assert load_idx(img, lab, normalize=False).inputs.shape == (10, 1, 28, 28)


def test_idx_magic(tmp_path):
    body = idx_bytes(FIXTURE_PIXELS)
    assert struct.unpack(">I", body[:4])[0] == 2051
    ok, bad = tmp_path / "ok", tmp_path / "bad"
    ok.write_bytes(body)
    bad.write_bytes(struct.pack(">I", 2052) + body[4:])
    assert read_idx_images(ok).shape == (2, 3, 4)
    with pytest.raises(FormatError):
        read_idx_images(bad)


def test_idx_header_larger_than_file(tmp_path):
    p = tmp_path / "lie"
    # claims a billion 28x28 images but holds four bytes of data
    p.write_bytes(struct.pack(">IIII", 2051, 10**9, 28, 28) + b"\0" * 4)
    with pytest.raises(FormatError):
        read_idx_images(p)
    p.write_bytes(b"\0\0")
    with pytest.raises(FormatError):
        read_idx_images(p)


def test_idx_count_mismatch(tmp_path, fixture_files):
    lab = tmp_path / "three"
    lab.write_bytes(idx_bytes([0, 1, 0]))
    with pytest.raises(FormatError):
        load_idx(fixture_files[0], lab)


def test_idx_gzip_and_writer_round_trip(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, size=(3, 4, 4), dtype=np.uint8)
    write_idx(tmp_path / "a.idx", arr)
    assert (tmp_path / "a.idx").read_bytes() == idx_bytes(arr)
    with gzip.open(tmp_path / "a.idx.gz", "wb") as f:
        f.write(idx_bytes(arr))
    np.testing.assert_array_equal(read_idx_images(tmp_path / "a.idx.gz"), arr)


def _images(x):
    return LabeledDataset(x, np.arange(len(x)) % 2, 2)


def test_downsample_constant_and_shape():
    d = downsample(_images(np.full((2, 1, 28, 28), 0.3)), 2)
    assert d.input_shape == (1, 14, 14)
    np.testing.assert_allclose(d.inputs, 0.3, rtol=0, atol=1e-15)


def test_downsample_checkerboard():
    board = (np.indices((28, 28)).sum(axis=0) % 2).astype(float)
    d = downsample(_images(np.broadcast_to(board, (2, 1, 28, 28)).copy()), 2)
    assert (d.inputs == 0.5).all()


def test_downsample_rejects_bad_factor():
    with pytest.raises(ContractError):
        downsample(_images(np.zeros((2, 1, 5, 5))), 2)


@given(seed=st.integers(0, 2**32 - 1), channels=st.integers(1, 3))
def test_normalization_on_fitting_split(seed, channels):
    r = np.random.default_rng(seed)
    x = r.normal(3.0, 2.5, size=(20, channels, 4, 4))
    train, test = normalize_dataset(_images(x), _images(x[:4] * 2))
    per_channel = train.inputs.transpose(1, 0, 2, 3).reshape(channels, -1)
    assert np.abs(per_channel.mean(axis=1)).max() <= 1e-6
    assert np.abs(per_channel.std(axis=1) - 1).max() <= 1e-6
    assert len(train.norm_mean) == channels and test.norm_mean == train.norm_mean


def test_standardizer_is_an_sklearn_transformer():
    x = np.random.default_rng(0).normal(2, 3, size=(10, 2, 2, 2))
    s = ChannelStandardizer()
    assert clone(s).get_params() == {}
    z = s.fit_transform(x)
    np.testing.assert_allclose(s.inverse_transform(z), x, atol=1e-12)
    flat = ChannelStandardizer().fit(x.reshape(10, -1))
    assert flat.mean_.shape == (1,)


def test_split_is_stratified():
    d = gen_blobs(50, 2, seed=0)
    train, test = split_dataset(d, 0.2, seed=3)
    assert len(train) == 80 and len(test) == 20
    assert test.class_counts().tolist() == [10, 10]


def test_dataset_validation():
    with pytest.raises(ContractError):
        LabeledDataset(np.zeros((3, 2)), [0, 1, 2], 2)
    with pytest.raises(ContractError):
        LabeledDataset(np.zeros((0, 2)), [], 2)


# ---------------------------------------------------------------- coreset files

@pytest.fixture
def mnistish():
    r = np.random.default_rng(0)
    return LabeledDataset(r.random((200, 1, 4, 4)), np.arange(200) % 10, 10)


def test_one_example_per_class(mnistish):
    cs = init_coreset(mnistish, 1)
    assert len(cs) == 10 and cs.class_labels.tolist() == list(range(10))
    assert (cs.labels.sum(axis=0) == 1).all()


def test_real_init_copies_training_examples(mnistish):
    cs = init_coreset(mnistish, 2, "real", seed=3)
    pool = {row.astype(np.float32).tobytes() for row in mnistish.inputs}
    assert all(x.astype(np.float32).tobytes() in pool for x in cs.inputs)
    for x, c in zip(cs.inputs, cs.class_labels):
        match = [i for i, row in enumerate(mnistish.inputs)
                 if row.astype(np.float32).tobytes() == x.astype(np.float32).tobytes()]
        assert mnistish.labels[match[0]] == c


def test_noise_init(mnistish):
    cs = init_coreset(mnistish, 2, "noise", seed=1)
    assert cs.meta["init"] == "noise" and cs.inputs.shape == (20, 1, 4, 4)
    with pytest.raises(ContractError):
        init_coreset(mnistish, 1, "zeros")


def test_save_load_save_identical(tmp_path, mnistish):
    cs = init_coreset(mnistish, 2, seed=5)
    cs.inputs += 0.123456789  # not representable in float32
    save_coreset(cs, tmp_path / "a.bpcs")
    loaded = load_coreset(tmp_path / "a.bpcs")
    save_coreset(loaded, tmp_path / "b.bpcs")
    assert (tmp_path / "a.bpcs").read_bytes() == (tmp_path / "b.bpcs").read_bytes()
    assert loaded.ipc == 2 and loaded.n_classes == 10 and loaded.meta["init"] == "real"


def test_coreset_header(mnistish):
    raw = coreset_bytes(init_coreset(mnistish, 1))
    assert raw[:4] == b"BPCS" and struct.unpack("<H", raw[4:6])[0] == 1


@pytest.mark.parametrize("damage", ["magic", "truncate", "extend"])
def test_damaged_coreset_rejected(mnistish, damage):
    raw = coreset_bytes(init_coreset(mnistish, 1))
    raw = {"magic": b"BPCX" + raw[4:], "truncate": raw[:-1], "extend": raw + b"\0"}[damage]
    with pytest.raises(FormatError):
        parse_coreset(raw)


def test_labels_are_fixed():
    cs = SyntheticSet(np.zeros((4, 2)), 2, 2)
    with pytest.raises(ValueError):
        cs.labels[0, 0] = 0
    with pytest.raises(ContractError):
        SyntheticSet(np.zeros((3, 2)), 2, 2)
