from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gradphi.estimators import EnvelopeConstant, SurfaceTensionExtrapolator
from gradphi.gff import nu_exact

LEVELS = np.arange(1, 7)


def test_extrapolator_recovers_geometric_sequence():
    y = 0.3 + 2.0 * 3.0 ** (-1.5 * LEVELS)
    est = SurfaceTensionExtrapolator().fit(LEVELS.reshape(-1, 1), y)
    assert est.limit_ == pytest.approx(0.3, abs=1e-10)
    assert est.rate_ == pytest.approx(1.5, abs=1e-8)
    assert est.amplitude_ == pytest.approx(2.0, rel=1e-8)
    assert np.allclose(est.predict([[7], [8]]), 0.3 + 2.0 * 3.0 ** (-1.5 * np.array([7, 8])))
    assert est.score(LEVELS.reshape(-1, 1), y) == pytest.approx(1.0)


def test_extrapolator_on_gff_sequence():
    levels = np.arange(1, 6)
    y = [nu_exact(2, n, 1.0, (0, 0)) for n in levels]
    est = SurfaceTensionExtrapolator(model="lattice").fit(levels, y)
    assert est.limit_ == pytest.approx(0.0107733, abs=1e-6)
    assert 0.8 <= est.rate_ <= 1.2


def test_extrapolator_params_and_clone():
    est = SurfaceTensionExtrapolator(model="lattice", alpha_bounds=(0.1, 3.0))
    assert est.get_params() == {"model": "lattice", "alpha_bounds": (0.1, 3.0)}
    c = clone(est)
    assert c.get_params() == est.get_params() and not hasattr(c, "result_")


def test_extrapolator_input_validation():
    with pytest.raises(NotFittedError):
        SurfaceTensionExtrapolator().predict([1])
    with pytest.raises(ValueError):
        SurfaceTensionExtrapolator().fit([1.5, 2, 3], [1, 2, 3])
    with pytest.raises(ValueError):
        SurfaceTensionExtrapolator().fit(np.ones((3, 2)), [1, 2, 3])


def test_envelope_constant_and_violations():
    w = np.array([1.0, 0.5, 0.25])
    y = np.array([0.8, 0.5, 0.1])
    est = EnvelopeConstant().fit(w, y)
    assert est.C_ == pytest.approx(1.0)
    assert np.allclose(est.predict(w), w)
    assert est.margin(w, y) == pytest.approx(0.0)
    assert list(est.violations([0.1, 0.2], [0.05, 0.3])) == [1]
    assert EnvelopeConstant(slack=0.5).fit(w, y).C_ == pytest.approx(1.5)


def test_envelope_rejects_nonpositive_shapes():
    with pytest.raises(ValueError):
        EnvelopeConstant().fit([1.0, 0.0], [1.0, 1.0])
