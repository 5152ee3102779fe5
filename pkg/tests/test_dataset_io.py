import numpy as np
import pytest

from app.exceptions import DatasetFormatError
from app.models.glm import LinearChannel
from app.services.dataset_io import dumps_dataset, load_dataset, loads_dataset, save_dataset


def test_saved_dataset_loads_back(ridge_dataset, tmp_path):
    path = save_dataset(ridge_dataset, tmp_path / "train.glmds")
    loaded = load_dataset(path, LinearChannel(sigma_d2=0.1))
    for name in ("V0", "s_tr", "U", "w0", "y", "s_ts"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(ridge_dataset, name))
    np.testing.assert_allclose(loaded.s_plus, ridge_dataset.s_plus, rtol=1e-12)
    assert loaded.channel == LinearChannel(sigma_d2=0.1)


def test_header_layout(ridge_dataset):
    data = dumps_dataset(ridge_dataset)
    assert data[:6] == b"GLMDS1"
    assert np.frombuffer(data, dtype="<i8", count=2, offset=6).tolist() == [200, 100]


def test_bad_magic_rejected(ridge_dataset):
    data = b"XXXXXX" + dumps_dataset(ridge_dataset)[6:]
    with pytest.raises(DatasetFormatError):
        loads_dataset(data)


def test_truncated_payload_rejected(ridge_dataset):
    with pytest.raises(DatasetFormatError):
        loads_dataset(dumps_dataset(ridge_dataset)[:-8])


def test_non_finite_values_rejected(ridge_dataset):
    data = bytearray(dumps_dataset(ridge_dataset))
    data[-8:] = np.array([np.nan], dtype="<f8").tobytes()
    with pytest.raises(DatasetFormatError):
        loads_dataset(bytes(data))


def test_missing_file(tmp_path):
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path / "absent.glmds")
