import numpy as np
import pytest
from hypothesis import given, strategies as st

from geum.errors import ConfigurationError, DomainError
from geum.generators import (
    Generator,
    from_config,
    make_kappa_ignorance,
    make_linear,
    make_zero,
    validate_generator,
)

vec = st.lists(st.floats(-10, 10), min_size=2, max_size=2).map(np.array)


@given(vec, st.floats(0, 5))
def test_kappa_is_positively_homogeneous(z, lam):
    g = make_kappa_ignorance(0.5)
    assert g(0.0, lam * z) == pytest.approx(lam * g(0.0, z), abs=1e-9)


@given(vec, vec)
def test_kappa_lipschitz(z1, z2):
    g = make_kappa_ignorance(0.7)
    assert abs(g(0.0, z1) - g(0.0, z2)) <= 0.7 * np.linalg.norm(z1 - z2) + 1e-9


def test_vectorized_shapes():
    z = np.ones((4, 3, 2))
    assert make_zero()(0.0, z).shape == (4, 3)
    assert make_linear([0.3, -0.1])(0.0, z).shape == (4, 3)
    np.testing.assert_allclose(make_linear([0.3, -0.1])(0.0, z), 0.2)
    np.testing.assert_allclose(make_kappa_ignorance(1.0)(0.0, z), np.sqrt(2))


def test_linear_time_dependent_eta():
    eta = lambda t: np.array([0.1 * t])
    eta.bound = 0.1
    g = make_linear(eta)
    assert g(2.0, np.array([3.0])) == pytest.approx(0.6)
    assert g.phi_slope == 0.1
    with pytest.raises(ConfigurationError):
        make_linear(lambda t: np.array([t]))


@pytest.mark.parametrize("gen", [make_zero(), make_linear([0.3]), make_kappa_ignorance(0.5)])
def test_builtins_validate(gen):
    rep = validate_generator(gen)
    assert rep.ok
    assert rep.as_dict()["A1"] and rep.as_dict()["A2"]


def test_understated_slope_fails_A1():
    rep = validate_generator(from_config({"kind": "kappa", "kappa": 0.5, "phi_slope": 0.1}))
    assert not rep.passes_A1
    assert rep.passes_A2
    assert not rep.ok


def test_nonzero_at_zero_fails_A2():
    g = Generator(fn=lambda t, z: 1.0 + 0.0 * z[..., 0], phi_slope=1.0)
    assert not validate_generator(g).passes_A2


def test_non_homogeneous_flagged():
    g = Generator(fn=lambda t, z: np.abs(z[..., 0]) ** 2 / (1 + np.abs(z[..., 0])), phi_slope=1.0,
                  positively_homogeneous=True)
    assert not validate_generator(g).passes_H2


@pytest.mark.parametrize(
    "block,err",
    [({"kind": "kappa"}, ConfigurationError), ({"kind": "kappa", "kappa": -1}, DomainError),
     ({"kind": "linear"}, ConfigurationError), ({"kind": "quadratic"}, ConfigurationError)],
)
def test_from_config_errors(block, err):
    with pytest.raises(err):
        from_config(block)


def test_describe():
    assert from_config({"kind": "linear", "eta": [0.3]}).describe() == {"kind": "linear", "eta": [0.3]}
    assert make_kappa_ignorance(0.5).describe() == {"kind": "kappa", "kappa": 0.5}
