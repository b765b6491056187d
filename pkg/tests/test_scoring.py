import numpy as np
import pytest

from household.core import Embedding, SpeakerModel
from household.metrics import Calibration
from household.plda import PldaModel, SphericalPlda, length_normalize
from household.scoring import (
    CSEA,
    CSSA,
    FULL_PLDA,
    SPHERICAL_PLDA,
    BackendConfig,
    BackendConfigError,
    score,
    score_all,
)


def unit(rng, d):
    return length_normalize(rng.standard_normal(d))


def test_csea_identical_vectors():
    v = length_normalize(np.array([1.0, 2.0, -0.5]))
    assert score(BackendConfig(CSEA), SpeakerModel("a", v, 1), v) == pytest.approx(1.0)


def test_cssa_opposite_members():
    v = np.array([0.0, 1.0])
    model = SpeakerModel("a", np.array([1e-9, 0.0]), 2, raw_set=np.stack([v, -v]))
    assert score(BackendConfig(CSSA), model, v) == 0.0


def test_cssa_needs_raw_set():
    with pytest.raises(BackendConfigError):
        score(BackendConfig(CSSA), SpeakerModel("a", np.ones(2), 1), np.ones(2))


def test_backend_validation():
    with pytest.raises(BackendConfigError):
        BackendConfig(SPHERICAL_PLDA)
    with pytest.raises(BackendConfigError):
        BackendConfig(CSEA, normalize_inputs=False)
    with pytest.raises(BackendConfigError):
        BackendConfig(FULL_PLDA, SphericalPlda(1, 1))
    with pytest.raises(BackendConfigError):
        BackendConfig("lda")


def test_plda_score_uses_effective_count():
    from household.plda import llr_by_the_book

    rng = np.random.default_rng(0)
    plda = SphericalPlda(1.0, 0.3)
    backend = BackendConfig(SPHERICAL_PLDA, plda, normalize_inputs=False)
    c, x = rng.standard_normal((2, 5))
    assert score(backend, SpeakerModel("a", c, 2.7), x) == pytest.approx(
        llr_by_the_book(plda, (c, 2.7), (x, 1)), abs=1e-12
    )


def test_count_scale_knob():
    plda = SphericalPlda(1.0, 0.3)
    rng = np.random.default_rng(1)
    c, x = rng.standard_normal((2, 5))
    scaled = BackendConfig(SPHERICAL_PLDA, plda, normalize_inputs=False, count_scale=0.25)
    plain = BackendConfig(SPHERICAL_PLDA, plda, normalize_inputs=False)
    assert score(scaled, SpeakerModel("a", c, 8), x) == score(plain, SpeakerModel("a", c, 2), x)


def test_single_enrollment_plda_and_cosine_share_argmax():
    rng = np.random.default_rng(2)
    d = 12
    sph = BackendConfig(SPHERICAL_PLDA, SphericalPlda(1.0, 0.3), normalize_inputs=True)
    cos = BackendConfig(CSEA)
    models = [SpeakerModel(f"m{i}", unit(rng, d), 1) for i in range(5)]
    for _ in range(100):
        x = rng.standard_normal(d)
        assert np.argmax(score_all(sph, models, x)) == np.argmax(score_all(cos, models, x))


@pytest.mark.parametrize(
    "backend",
    [
        BackendConfig(CSEA),
        BackendConfig(SPHERICAL_PLDA, SphericalPlda(0.8, 0.2)),
        BackendConfig(FULL_PLDA, PldaModel(np.zeros(6), np.diag(np.arange(1.0, 7)), 0.3 * np.eye(6)), normalize_inputs=False),
    ],
    ids=["csea", "sph", "full"],
)
def test_batch_equals_scalar_bit_exactly(backend):
    rng = np.random.default_rng(3)
    models = [SpeakerModel(f"m{i}", rng.standard_normal(6), float(rng.integers(1, 5))) for i in range(10)]
    x = Embedding("t", None, rng.standard_normal(6))
    batch = score_all(backend, models, x)
    assert batch == [score(backend, m, x) for m in models]
    assert score_all(backend, models[:1], x) == [score(backend, models[0], x)]
    dup = score_all(backend, [models[0], models[0]], x)
    assert dup[0] == dup[1]


def test_cssa_batch_equals_scalar():
    rng = np.random.default_rng(4)
    models = [SpeakerModel(f"m{i}", rng.standard_normal(4), 3, raw_set=rng.standard_normal((3, 4))) for i in range(4)]
    x = rng.standard_normal(4)
    assert score_all(BackendConfig(CSSA), models, x) == [score(BackendConfig(CSSA), m, x) for m in models]


def test_empty_model_list():
    with pytest.raises(ValueError):
        score_all(BackendConfig(CSEA), [], np.ones(2))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        score(BackendConfig(CSEA), SpeakerModel("a", np.ones(3), 1), np.ones(2))


def test_argmax_invariant_under_positive_calibration():
    rng = np.random.default_rng(5)
    backend = BackendConfig(SPHERICAL_PLDA, SphericalPlda(1.0, 0.3))
    models = [SpeakerModel(f"m{i}", unit(rng, 8), float(i + 1)) for i in range(6)]
    cal = Calibration(0.37, -4.2)
    for _ in range(50):
        s = score_all(backend, models, rng.standard_normal(8))
        assert np.argmax(cal(s)) == np.argmax(s)


def test_deterministic():
    rng = np.random.default_rng(6)
    backend = BackendConfig(SPHERICAL_PLDA, SphericalPlda(1.0, 0.3))
    models = [SpeakerModel(f"m{i}", rng.standard_normal(8), 2.0) for i in range(3)]
    x = rng.standard_normal(8)
    assert score_all(backend, models, x) == score_all(backend, models, x.copy())
