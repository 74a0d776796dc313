import numpy as np
import pytest

from condgpc.conditioning import ConditionalKL
from condgpc.grids import build_grid
from condgpc.kernels import SquaredExponential
from condgpc.kl import KarhunenLoeve
from condgpc.quadrature import gauss_hermite
from condgpc.surrogate import PolynomialChaosSurrogate


@pytest.fixture(scope="module")
def conditional():
    grid = build_grid(((0.0, 1.0),), (65,))
    kl = KarhunenLoeve(
        kernel=SquaredExponential(length=0.25), sigma=0.5, mean=1.0, n_terms=8
    ).fit(grid)
    X = np.array([[0.2], [0.5], [0.8]])
    xi_true = np.random.default_rng(0).standard_normal(8)
    values = kl.sample(xi_true).values
    idx, _ = grid.nearest_index(X)
    return ConditionalKL(base=kl).fit(X, values[idx])


def _log_solve(kappa):
    return np.log(kappa.values)


def test_linear_map_reproduced_exactly(conditional):
    # the log-field is linear in xi, so a degree-1 expansion is exact
    model = PolynomialChaosSurrogate(degree=1).fit(conditional, _log_solve)
    rng = np.random.default_rng(1)
    for _ in range(5):
        xi = rng.standard_normal(conditional.n_components_)
        log_field, _ = conditional.sample(xi)
        assert np.allclose(model.predict(xi).values, log_field.values, atol=1e-10)


def test_mean_and_variance_closed_form(conditional):
    model = PolynomialChaosSurrogate(degree=2).fit(conditional, _log_solve)
    assert np.allclose(model.mean().values, conditional.mean_field_.values, atol=1e-10)
    assert np.allclose(
        model.variance().values, conditional.variance().values, atol=1e-10
    )


def test_cubic_map_reproduced_by_degree_three(conditional):
    def cubic(kappa):
        g = np.log(kappa.values)
        return g**3 - 2.0 * g

    model = PolynomialChaosSurrogate(degree=3).fit(conditional, cubic)
    rng = np.random.default_rng(2)
    Xi = rng.standard_normal((20, conditional.n_components_))
    direct = np.array([cubic(conditional.sample(xi)[1]) for xi in Xi])
    assert np.abs(model.predict_batch(Xi) - direct).max() <= 1e-9


def test_monte_carlo_matches_coefficient_formulas(conditional):
    def forward(kappa):
        g = np.log(kappa.values)
        return np.exp(0.3 * g)

    model = PolynomialChaosSurrogate(degree=3).fit(conditional, forward)
    rng = np.random.default_rng(3)
    draws = model.predict_batch(rng.standard_normal((10000, conditional.n_components_)))
    mc_mean = draws.mean(axis=0)
    mc_se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(mc_mean - model.mean().values) <= 3 * mc_se + 1e-12)
    mc_var = draws.var(axis=0, ddof=1)
    var_se = mc_var * np.sqrt(2.0 / (draws.shape[0] - 1))
    assert np.all(np.abs(mc_var - model.variance().values) <= 4 * var_se + 1e-12)


def test_point_surrogate_matches_field_predictions(conditional):
    model = PolynomialChaosSurrogate(degree=2).fit(conditional, _log_solve)
    X = np.array([[0.31], [0.62], [0.97]])
    point = model.at_points(X)
    rng = np.random.default_rng(4)
    for _ in range(3):
        xi = rng.standard_normal(conditional.n_components_)
        full = model.predict(xi)
        assert np.allclose(point(xi), full.grid.interpolate(full.values, X), atol=1e-12)


def test_point_surrogate_linear_part(conditional):
    model = PolynomialChaosSurrogate(degree=1).fit(conditional, _log_solve)
    X = np.array([[0.25], [0.75]])
    point = model.at_points(X)
    b, A = point.linear_part()
    assert A.shape == (conditional.n_components_, 2)
    rng = np.random.default_rng(5)
    xi = rng.standard_normal(conditional.n_components_)
    assert np.allclose(point(xi), b + xi @ A, atol=1e-12)


def test_save_load_roundtrip(tmp_path, conditional):
    model = PolynomialChaosSurrogate(degree=2).fit(conditional, _log_solve)
    model.save(tmp_path / "model")
    loaded = PolynomialChaosSurrogate.load(tmp_path / "model", conditional=conditional)
    xi = np.random.default_rng(6).standard_normal(conditional.n_components_)
    assert np.array_equal(loaded.predict(xi).values, model.predict(xi).values)
    assert loaded.fingerprint() == model.fingerprint()


def test_load_detects_tampered_coefficients(tmp_path, conditional):
    model = PolynomialChaosSurrogate(degree=1).fit(conditional, _log_solve)
    model.save(tmp_path / "model")
    target = next((tmp_path / "model").glob("coeff_0001.csv"))
    rows = target.read_text().splitlines()
    rows[1] = rows[1].rsplit(",", 1)[0] + ",99.0"  # tamper with the stored value
    target.write_text("\n".join(rows) + "\n")
    with pytest.raises(ValueError, match="fingerprint"):
        PolynomialChaosSurrogate.load(tmp_path / "model")


def test_solver_failures_identify_the_node(conditional):
    def broken(kappa):
        raise FloatingPointError("diverged")

    with pytest.raises(RuntimeError, match="node 0"):
        PolynomialChaosSurrogate(degree=1).fit(conditional, broken)

    def wrong_shape(kappa):
        return np.zeros(3)

    with pytest.raises(ValueError, match="shape"):
        PolynomialChaosSurrogate(degree=1).fit(conditional, wrong_shape)


def test_rule_dimension_must_match(conditional):
    rule = gauss_hermite(conditional.n_components_ + 1, 2)
    with pytest.raises(ValueError, match="dimension"):
        PolynomialChaosSurrogate(degree=1, rule=rule).fit(conditional, _log_solve)
