import math
from dataclasses import replace

import numpy as np
import pytest

import tldpinn  # noqa: F401
from tldpinn import oracle as O
from tldpinn.errors import OracleDiverged
from tldpinn.pdes import benchmark, taylor_green_initial


def test_heat_analytic_examples():
    x = np.linspace(-1, 1, 11)
    np.testing.assert_allclose(O.heat_analytic(0.0, x), np.sin(np.pi * x))
    np.testing.assert_allclose(O.heat_analytic(0.3, np.array([-1.0, 1.0])), 0.0, atol=1e-15)
    assert O.heat_analytic(0.1, 0.5) == pytest.approx(0.372708, abs=5e-7)


def test_spectral_periodic_heat_matches_analytic():
    p = replace(benchmark("heat_test"), boundary="periodic")
    ref = O.spectral_solve_1d(p, modes=64, n_t=10)
    exact = np.array([O.heat_analytic(t, ref.grid) for t in ref.times])
    assert np.max(np.abs(ref.values - exact)) < 1e-8


def test_fd_heat_matches_analytic():
    ref = O.fd_solve_dirichlet(benchmark("heat_test"), grid_n=512, dt_ref=1e-5, n_t=10)
    exact = np.array([O.heat_analytic(t, ref.grid) for t in ref.times])
    err = np.linalg.norm(ref.values[1:] - exact[1:]) / np.linalg.norm(exact[1:])
    assert err <= 1e-7


def test_fd_stencil_exact_for_quintics():
    n, h = 40, 0.05
    x = h * np.arange(1, n + 1)  # interior nodes; walls at 0 and (n+1)h
    D = O._second_difference_matrix(n, h)
    D = D.toarray() if hasattr(D, "toarray") else np.asarray(D)
    L = (n + 1) * h
    u = x * (L - x) * (x + 0.3) ** 3  # vanishes at both walls
    uxx = np.polyval(np.polyder(np.poly1d([-1, L, 0]) * np.poly1d([1, 0.3]) ** 3, 2), x)
    np.testing.assert_allclose(D @ u, uxx, rtol=1e-9, atol=1e-8)


def test_rd_boundaries_pinned_and_finite():
    ref = O.fd_solve_dirichlet(benchmark("rd"), grid_n=128, n_t=10)
    np.testing.assert_array_equal(ref.values[:, 0], 0.0)
    np.testing.assert_array_equal(ref.values[:, -1], 0.0)
    assert np.all(np.isfinite(ref.values))


def test_heat_norm_non_increasing():
    ref = O.fd_solve_dirichlet(benchmark("heat_test"), grid_n=128, n_t=20)
    norms = np.linalg.norm(ref.values, axis=1)
    assert np.all(np.diff(norms) <= 0.0)


def test_ac_stays_in_double_well_envelope():
    ref = O.spectral_solve_1d(benchmark("ac"), modes=1024, n_t=20)
    assert ref.values.min() >= -1.05 and ref.values.max() <= 1.05


def test_ks_regular_self_convergence():
    p = replace(benchmark("ks_regular"), T=0.2)
    assert O.self_convergence(p, n_t=4, resolution=128) < 1e-6


def test_taylor_green_decay():
    p = replace(benchmark("ns2d"), T=0.1, initial_condition=taylor_green_initial)
    ref = O.spectral_solve_ns2d(p, modes=32, n_t=2)
    x, y = ref.grid
    X, Y = np.meshgrid(x, y, indexing="ij")
    w_exact = 2 * np.cos(X) * np.cos(Y) * math.exp(-2 * 0.1 / 100.0)
    assert np.max(np.abs(ref.values[-1] - w_exact)) < 1e-6


def test_ns_velocity_divergence_free_and_mean_vorticity_conserved():
    p = replace(benchmark("ns2d"), T=0.1)
    ref = O.spectral_solve_ns2d(p, modes=32, n_t=4)
    for n in range(ref.n_t + 1):
        assert np.sqrt(np.mean(O.divergence(ref, n) ** 2)) <= 1e-10
    means = ref.values.mean(axis=(1, 2))
    assert np.max(np.abs(means - means[0])) < 1e-12
    assert ref.points.shape == (32 * 32, 2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_raises_oracle_diverged():
    # anti-diffusion without the fourth-order damping grows without bound
    bad = replace(benchmark("ks_regular"), coefficients={"alpha": 5.0, "beta": 50.0, "gamma": 0.0})
    with pytest.raises(OracleDiverged) as exc:
        O.spectral_solve_1d(bad, modes=64, n_t=2)
    assert exc.value.time is not None


def test_cache_roundtrip_and_hit(tmp_path, monkeypatch):
    monkeypatch.setenv("TLDPINN_CACHE", str(tmp_path))
    p = benchmark("rd")
    a, hit_a = O.reference(p, 5, resolution=64)
    b, hit_b = O.reference(p, 5, resolution=64)
    assert (hit_a, hit_b) == (False, True)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.grid, b.grid)
    assert b.meta == a.meta
    c, hit_c = O.reference(p, 5, resolution=32)
    assert not hit_c


def test_reference_2d_save_load(tmp_path):
    p = replace(benchmark("ns2d"), T=0.02)
    ref = O.spectral_solve_ns2d(p, modes=16, n_t=2)
    O.save_reference(tmp_path / "ns", ref)
    back = O.load_reference(tmp_path / "ns")
    np.testing.assert_array_equal(back.values, ref.values)
    np.testing.assert_array_equal(back.extra["u"], ref.extra["u"])
    assert isinstance(back.grid, tuple)


def test_cache_key_depends_on_initial_condition():
    p = benchmark("ac")
    q = replace(p, initial_condition=lambda x: np.cos(np.pi * np.asarray(x)))
    assert O.cache_key(p, 10, 512, None) != O.cache_key(q, 10, 512, None)


def test_trajectory_shape_checks():
    with pytest.raises(ValueError):
        O.ReferenceTrajectory("x", np.zeros(3), np.zeros(2), np.zeros((3, 3)))
