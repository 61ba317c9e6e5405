"""Tests for the grid solver of the limiting velocity density.

Oracles: analytic Gaussians (fixed points, envelopes, quadrature),
closed-form directional temperatures as the exact moment flow, and
grid-refinement studies with pinned second-order ratios.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

import landaulab.limit_solver as ls
from landaulab.limit_solver import (
    CflError,
    DensityField,
    Grid2D,
    MomentState,
    NegativityError,
    abar,
    conserved_quantities,
    directional_temperature,
    equilibrium_field,
    gaussian_field,
    gaussian_lower_check,
    log_gradient_ratio,
    log_hessian_ratio,
    self_consistency,
    solve,
    step_fp,
)

# ---------------------------------------------------------------------------
# Grid and field containers
# ---------------------------------------------------------------------------


class TestGrid2D:
    def test_spacing_and_axis(self):
        grid = Grid2D(n=129, L=6.0)
        assert grid.h == pytest.approx(12.0 / 128.0, rel=0, abs=0)
        x = grid.axis()
        assert x.shape == (129,)
        assert x[0] == -6.0 and x[-1] == 6.0 and x[64] == 0.0

    def test_axis_exactly_antisymmetric(self):
        for n, L in ((65, 6.0), (129, 7.0), (257, 6.5)):
            x = Grid2D(n=n, L=L).axis()
            assert np.array_equal(x, -x[::-1])

    def test_face_axis_between_cells(self):
        grid = Grid2D(n=65, L=6.0)
        x = grid.axis()
        xf = grid.face_axis()
        assert xf.shape == (64,)
        np.testing.assert_allclose(xf, 0.5 * (x[:-1] + x[1:]), rtol=0, atol=1e-15)
        assert np.array_equal(xf, -xf[::-1])

    def test_rejects_even_small_or_shallow(self):
        with pytest.raises(ValueError):
            Grid2D(n=128, L=6.0)
        with pytest.raises(ValueError):
            Grid2D(n=7, L=6.0)
        with pytest.raises(ValueError):
            Grid2D(n=65, L=4.0)


class TestDensityField:
    def test_accepts_gaussian(self):
        grid = Grid2D(n=65, L=6.0)
        fld = gaussian_field(grid, (1.0, 1.0))
        assert fld.values.shape == (65, 65)
        assert fld.time == 0.0

    def test_rejects_wrong_shape_and_nonfinite(self):
        grid = Grid2D(n=65, L=6.0)
        with pytest.raises(ValueError):
            DensityField(values=np.ones((64, 65)), time=0.0, grid=grid)
        vals = gaussian_field(grid, (1.0, 1.0)).values.copy()
        vals[3, 3] = math.nan
        with pytest.raises(ValueError):
            DensityField(values=vals, time=0.0, grid=grid)

    def test_negativity_tolerance_boundary(self):
        grid = Grid2D(n=65, L=6.0)
        vals = gaussian_field(grid, (1.0, 1.0)).values.copy()
        peak = vals.max()
        ok = vals.copy()
        ok[0, 0] = -1e-13 * peak
        DensityField(values=ok, time=0.0, grid=grid)  # within tolerance
        bad = vals.copy()
        bad[0, 0] = -1e-11 * peak
        with pytest.raises(ValueError):
            DensityField(values=bad, time=0.0, grid=grid)

    def test_mass_window(self):
        grid = Grid2D(n=65, L=6.0)
        vals = gaussian_field(grid, (1.0, 1.0)).values
        with pytest.raises(ValueError):
            DensityField(values=3.0 * vals, time=0.0, grid=grid)

    def test_time_validation(self):
        grid = Grid2D(n=65, L=6.0)
        vals = gaussian_field(grid, (1.0, 1.0)).values
        with pytest.raises(ValueError):
            DensityField(values=vals, time=-0.5, grid=grid)


# ---------------------------------------------------------------------------
# Diffusion matrix and quadrature diagnostics
# ---------------------------------------------------------------------------


class TestAbar:
    def test_isotropic_origin(self):
        ms = MomentState(D=(0.0, 0.0), d=2)
        np.testing.assert_allclose(abar(np.zeros(2), 0.7, ms), np.eye(2), atol=1e-15)

    def test_unit_x_example(self):
        # (d + |v|^2) Id - v (x) v - diag(E) at v=(1,0), E=(1,1):
        # diag(3,3) - diag(1,0) - diag(1,1) = diag(1,2).
        ms = MomentState(D=(0.0, 0.0), d=2)
        got = abar(np.array([1.0, 0.0]), 0.0, ms)
        np.testing.assert_allclose(got, np.array([[1.0, 0.0], [0.0, 2.0]]), atol=1e-15)

    def test_min_eigenvalue_floor_over_grid(self):
        # Smallest eigenvalue across the grid stays above 0.9 (d - max E).
        ms = MomentState(D=(0.5, -0.5), d=2)
        grid = Grid2D(n=65, L=6.0)
        x = grid.axis()[::4]
        for t in (0.0, 0.3, 1.0):
            e = ms.temperatures(t)
            floor = 0.9 * (2.0 - max(e))
            worst = math.inf
            for vx in x:
                for vy in x:
                    m = abar(np.array([vx, vy]), t, ms)
                    tr = m[0, 0] + m[1, 1]
                    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
                    lo = 0.5 * (tr - math.sqrt(max(tr * tr - 4.0 * det, 0.0)))
                    worst = min(worst, lo)
            assert worst >= floor


class TestConservedQuantities:
    def test_equilibrium_values(self):
        grid = Grid2D(n=129, L=6.0)
        mass, mom, energy = conserved_quantities(equilibrium_field(grid))
        assert abs(mass - 1.0) <= 1e-6
        assert np.all(np.abs(mom) <= 1e-9)
        assert abs(energy - 2.0) <= 1e-4

    def test_scaling_linearity(self):
        grid = Grid2D(n=65, L=6.0)
        eq = equilibrium_field(grid)
        mass, mom, energy = conserved_quantities(eq)
        mass2, mom2, energy2 = conserved_quantities(2.0 * eq.values, grid=grid)
        assert mass2 == 2.0 * mass
        assert np.array_equal(mom2, 2.0 * mom)
        assert energy2 == 2.0 * energy

    def test_raw_array_requires_grid(self):
        grid = Grid2D(n=65, L=6.0)
        with pytest.raises(ValueError):
            conserved_quantities(equilibrium_field(grid).values)

    def test_shifted_gaussian_momentum(self):
        grid = Grid2D(n=129, L=6.0)
        fld = gaussian_field(grid, (1.0, 1.0), center=(0.3, -0.2))
        _, mom, _ = conserved_quantities(fld)
        np.testing.assert_allclose(mom, [0.3, -0.2], rtol=0, atol=1e-5)


class TestSelfConsistency:
    def test_exact_gaussian_quadrature_only(self):
        grid = Grid2D(n=129, L=6.0)
        ms = MomentState(D=(0.5, -0.5), d=2)
        rep = self_consistency(gaussian_field(grid, (1.5, 0.5)), 0.0, ms)
        # Pure quadrature truncation of the variance-1.5 tail at L=6.
        assert rep.diag_dev <= 1e-4  # measured 3.64e-5
        assert rep.offdiag_dev <= 1e-12
        assert rep.e_closed == (1.5, 0.5)

    def test_requires_moments(self):
        grid = Grid2D(n=65, L=6.0)
        with pytest.raises(ValueError):
            self_consistency(equilibrium_field(grid), 0.0, None)


# ---------------------------------------------------------------------------
# Operator: compiled twin, parity, conservation
# ---------------------------------------------------------------------------


def _operator_both_paths(f, e1, e2, ws, monkeypatch):
    monkeypatch.setattr(ls, "PREFER_COMPILED", True)
    compiled = ls._apply_operator(f.copy(), e1, e2, ws)
    monkeypatch.setattr(ls, "PREFER_COMPILED", False)
    plain = ls._apply_operator(f.copy(), e1, e2, ws)
    return compiled, plain


class TestOperator:
    def test_compiled_matches_numpy_bitwise(self, monkeypatch):
        grid = Grid2D(n=65, L=6.0)
        ws = ls._make_workspace(grid)
        f = gaussian_field(grid, (1.5, 0.5)).values
        compiled, plain = _operator_both_paths(f, 1.5, 0.5, ws, monkeypatch)
        assert np.array_equal(compiled, plain)

    def test_compiled_matches_numpy_on_rough_field(self, monkeypatch):
        grid = Grid2D(n=65, L=6.0)
        ws = ls._make_workspace(grid)
        rng = np.random.default_rng(20260817)
        base = gaussian_field(grid, (1.0, 1.0)).values
        f = base * (1.0 + np.abs(rng.normal(size=base.shape)))
        f[5:9, 50:55] = 0.0  # hard-vacuum patch exercises the zero-flux branch
        compiled, plain = _operator_both_paths(f, 1.2, 0.8, ws, monkeypatch)
        assert np.array_equal(compiled, plain)
        assert np.all(np.isfinite(compiled))

    def test_vacuum_cells_exchange_zero_flux(self):
        # A density that is exactly zero on a patch receives exactly zero
        # divergence on the patch interior (geometric-mean face values).
        grid = Grid2D(n=65, L=6.0)
        ws = ls._make_workspace(grid)
        f = gaussian_field(grid, (1.0, 1.0)).values.copy()
        f[10:20, 10:20] = 0.0
        out = ls._apply_operator(f, 1.0, 1.0, ws)
        assert np.all(out[11:19, 11:19] == 0.0)

    def test_parity_preserved_bitwise(self):
        grid = Grid2D(n=65, L=6.0)
        ws = ls._make_workspace(grid)
        ms = MomentState(D=(0.5, -0.5), d=2)
        f = gaussian_field(grid, (1.5, 0.5)).values.copy()
        dt = ls._admissible_dt(ws, 0.5) * 0.9
        t = 0.0
        for _ in range(100):
            f = ls._rk2_step(f, t, dt, ms, "closed_form", ws)
            t += dt
        assert np.array_equal(f, f[::-1, ::-1])

    def test_equilibrium_is_numerical_fixed_point(self):
        # The log-gradient flux vanishes identically on the stationary
        # Gaussian, so one step moves it by round-off only.
        ms = MomentState(D=(0.0, 0.0), d=2)
        for n in (65, 129):
            grid = Grid2D(n=n, L=6.0)
            ws = ls._make_workspace(grid)
            eq = equilibrium_field(grid).values
            dt = ls._admissible_dt(ws, 1.0) * 0.9
            new = ls._rk2_step(eq.copy(), 0.0, dt, ms, "closed_form", ws)
            assert np.abs(new - eq).max() <= 1e-15 * eq.max()

    def test_cell_sum_mass_exact_per_step(self):
        # The flux form telescopes: the conserved cell-sum mass moves by
        # strictly less than one part in 1e15 per step (fsum oracle).
        grid = Grid2D(n=65, L=6.0)
        ws = ls._make_workspace(grid)
        ms = MomentState(D=(0.5, -0.5), d=2)
        f = gaussian_field(grid, (1.5, 0.5)).values.copy()
        dt = ls._admissible_dt(ws, 0.5) * 0.9
        t = 0.0
        for _ in range(25):
            before = math.fsum(f.ravel())
            f = ls._rk2_step(f, t, dt, ms, "closed_form", ws)
            t += dt
            after = math.fsum(f.ravel())
            assert abs(after - before) <= 1e-15 * before

    def test_trapezoid_mass_per_step_within_spec(self):
        # The quadrature mass is steady per step once the boundary ring
        # is quiescent (the conserved cell-sum is exact regardless; see
        # test_cell_sum_mass_exact_per_step).
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.0, 0.0), d=2)
        fld = equilibrium_field(grid)
        for _ in range(5):
            mass_before = conserved_quantities(fld)[0]
            fld = step_fp(fld, 2e-5, ms)
            mass_after = conserved_quantities(fld)[0]
            assert abs(mass_after - mass_before) <= 1e-13 * mass_before


# ---------------------------------------------------------------------------
# Stepping: CFL, modes, errors
# ---------------------------------------------------------------------------


class TestStepFp:
    def test_advances_time_and_relaxes(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.5, -0.5), d=2)
        fld = gaussian_field(grid, (1.5, 0.5))
        out = step_fp(fld, 5e-5, ms)
        assert out.time == 5e-5
        rep = self_consistency(out, out.time, ms)
        assert rep.diag_dev <= 5e-3

    def test_cfl_rejection_names_admissible_dt(self):
        grid = Grid2D(n=129, L=6.0)
        ms = MomentState(D=(0.5, -0.5), d=2)
        fld = gaussian_field(grid, (1.5, 0.5))
        with pytest.raises(CflError) as err:
            step_fp(fld, 1e-3, ms)
        assert err.value.admissible_dt == pytest.approx(2.989e-5, rel=1e-3)
        assert "admissible" in str(err.value)

    def test_admissible_dt_accepted(self):
        grid = Grid2D(n=129, L=6.0)
        ms = MomentState(D=(0.5, -0.5), d=2)
        fld = gaussian_field(grid, (1.5, 0.5))
        ws = ls._make_workspace(grid)
        step_fp(fld, ls._admissible_dt(ws, 0.5) * 0.999, ms)

    def test_mode_and_dimension_validation(self):
        grid = Grid2D(n=65, L=6.0)
        fld = gaussian_field(grid, (1.0, 1.0))
        with pytest.raises(ValueError):
            step_fp(fld, 1e-5, MomentState(D=(0.0, 0.0), d=2), moment_mode="magic")
        with pytest.raises(ValueError):
            step_fp(fld, 1e-5, MomentState(D=(0.0, 0.0, 0.0), d=3))
        with pytest.raises(ValueError):
            step_fp(fld, -1e-5, MomentState(D=(0.0, 0.0), d=2))


# ---------------------------------------------------------------------------
# solve(): snapshots, diagnostics, failure modes
# ---------------------------------------------------------------------------


class TestSolve:
    def test_t_end_zero_echoes_input(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.0, 0.0), d=2)
        f0 = equilibrium_field(grid)
        res = solve(f0, 0.0, 1e-5, ms)
        assert len(res.fields) == 1
        assert res.fields[0].time == 0.0
        assert np.array_equal(res.fields[0].values, f0.values)

    def test_snapshot_times_hit_exactly(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.2, -0.2), d=2)
        f0 = gaussian_field(grid, (1.2, 0.8))
        res = solve(f0, 0.01, 3.3e-5, ms, snapshot_times=[0.003, 0.007, 0.01])
        assert res.times == (0.003, 0.007, 0.01)

    def test_snapshot_validation(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.0, 0.0), d=2)
        f0 = equilibrium_field(grid)
        with pytest.raises(ValueError):
            solve(f0, 0.01, 1e-5, ms, snapshot_times=[0.007, 0.003])
        with pytest.raises(ValueError):
            solve(f0, 0.01, 1e-5, ms, snapshot_times=[0.5])

    def test_initial_time_must_be_zero(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.0, 0.0), d=2)
        shifted = DensityField(
            values=equilibrium_field(grid).values, time=0.5, grid=grid
        )
        with pytest.raises(ValueError):
            solve(shifted, 1.0, 1e-5, ms)

    def test_moment_tracking_at_coarse_grid(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.5, -0.5), d=2)
        f0 = gaussian_field(grid, (1.5, 0.5))
        ws = ls._make_workspace(grid)
        dt = ls._admissible_dt(ws, 0.5) * 0.9
        res = solve(f0, 0.1, dt, ms, snapshot_times=[0.1])
        assert res.reports[-1].diag_dev <= 2e-3  # measured 1.36e-3

    def test_second_order_refinement(self):
        # Moment-tracking error shrinks ~4x per refinement (ratios pinned
        # from a three-level study; the coarse pair keeps runtime small).
        ms = MomentState(D=(0.5, -0.5), d=2)
        devs = {}
        for n in (65, 129):
            grid = Grid2D(n=n, L=6.0)
            f0 = gaussian_field(grid, (1.5, 0.5))
            ws = ls._make_workspace(grid)
            dt = ls._admissible_dt(ws, 0.5) * 0.9
            res = solve(f0, 0.1, dt, ms, snapshot_times=[0.1])
            devs[n] = res.reports[-1].diag_dev
        ratio = devs[65] / devs[129]
        assert 3.2 <= ratio <= 4.8  # measured 3.96

    def test_stays_nonnegative_through_steep_transient(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.5, -0.5), d=2)
        f0 = gaussian_field(grid, (1.5, 0.5))
        ws = ls._make_workspace(grid)
        dt = ls._admissible_dt(ws, 0.5) * 0.9
        res = solve(f0, 0.3, dt, ms, snapshot_times=[0.02, 0.05, 0.1, 0.3])
        for fld in res.fields:
            assert fld.values.min() >= -1e-15 * fld.values.max()

    def test_l1_distance_to_equilibrium_decreases(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.5, -0.5), d=2)
        f0 = gaussian_field(grid, (1.5, 0.5))
        ws = ls._make_workspace(grid)
        dt = ls._admissible_dt(ws, 0.5) * 0.9
        res = solve(f0, 1.0, dt, ms, snapshot_times=[0.25, 0.5, 0.75, 1.0])
        eq = equilibrium_field(grid).values
        l1 = [float(np.abs(f.values - eq).sum()) * grid.h**2 for f in res.fields]
        assert all(a > b for a, b in zip(l1, l1[1:]))
        assert l1[-1] < 2e-3  # measured 9.97e-4

    def test_self_consistent_mode_close_to_closed_form(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.5, -0.5), d=2)
        f0 = gaussian_field(grid, (1.5, 0.5))
        ws = ls._make_workspace(grid)
        dt = ls._admissible_dt(ws, 0.5) * 0.9
        kw = dict(snapshot_times=[0.05, 0.25])
        sc = solve(f0, 0.25, dt, ms, moment_mode="self_consistent", **kw)
        cf = solve(f0, 0.25, dt, ms, moment_mode="closed_form", **kw)
        sup = max(
            float(np.abs(a.values - b.values).max())
            for a, b in zip(sc.fields, cf.fields)
        )
        assert sup <= 1e-4  # measured 2.29e-5
        assert max(r.diag_dev for r in sc.reports) <= 5e-3

    def test_negativity_abort_when_cfl_is_bypassed(self, monkeypatch):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.5, -0.5), d=2)
        f0 = gaussian_field(grid, (1.5, 0.5))
        ws = ls._make_workspace(grid)
        unstable_dt = ls._admissible_dt(ws, 0.5) * 60.0
        monkeypatch.setattr(ls, "_check_cfl", lambda *a, **k: None)
        with pytest.raises(NegativityError):
            solve(f0, 0.1, unstable_dt, ms)

    def test_reports_and_conserved_align_with_fields(self):
        grid = Grid2D(n=65, L=6.0)
        ms = MomentState(D=(0.2, -0.2), d=2)
        f0 = gaussian_field(grid, (1.2, 0.8))
        ws = ls._make_workspace(grid)
        dt = ls._admissible_dt(ws, 0.8) * 0.9
        res = solve(f0, 0.05, dt, ms, snapshot_times=[0.02, 0.05])
        assert len(res.fields) == len(res.reports) == len(res.conserved) == 2
        for fld, rep in zip(res.fields, res.reports):
            assert rep.time == fld.time


# ---------------------------------------------------------------------------
# Envelope diagnostics
# ---------------------------------------------------------------------------


class TestEnvelopes:
    def test_gradient_ratio_standard_gaussian(self):
        grid = Grid2D(n=129, L=6.0)
        ratio = log_gradient_ratio(equilibrium_field(grid), 0.0)
        # |grad log f| = |v|, so the ratio is |v| / (1 + |v|) < 1 with the
        # peak at the largest unmasked speed.
        assert ratio < 1.0
        assert ratio == pytest.approx(0.857, abs=0.02)

    def test_gradient_ratio_tight_gaussian(self):
        grid = Grid2D(n=129, L=6.0)
        fld = gaussian_field(grid, (0.5, 0.5))
        ratio = log_gradient_ratio(fld, 0.0)
        assert ratio == pytest.approx(1.616, abs=0.05)
        assert ratio <= 2.0

    def test_hessian_ratio_standard_gaussian(self):
        grid = Grid2D(n=129, L=6.0)
        ratio = log_hessian_ratio(equilibrium_field(grid), 0.0)
        # Hessian of log f is -Id: Frobenius sqrt(2), maximized at v=0.
        assert ratio == pytest.approx(math.sqrt(2.0), abs=1e-10)

    def test_hessian_ratio_anisotropic_matches_analytic(self):
        grid = Grid2D(n=129, L=6.0)
        fld = gaussian_field(grid, (1.5, 0.5))
        expected = math.sqrt(1.0 / 1.5**2 + 1.0 / 0.5**2)
        assert log_hessian_ratio(fld, 0.0) == pytest.approx(expected, abs=1e-10)

    def test_hessian_ratio_decays_with_time_denominator(self):
        grid = Grid2D(n=129, L=6.0)
        eq = equilibrium_field(grid)
        r0 = log_hessian_ratio(eq, 0.0)
        r1 = log_hessian_ratio(eq, 1.0)
        assert r1 == pytest.approx(r0 / 2.0, rel=1e-12)

    def test_floor_masks_everything_raises(self):
        grid = Grid2D(n=65, L=6.0)
        with pytest.raises(ValueError):
            log_gradient_ratio(equilibrium_field(grid), 0.0, floor=2.0)
        with pytest.raises(ValueError):
            log_gradient_ratio(equilibrium_field(grid), 0.0, floor=-1.0)

    def test_gaussian_lower_check_standard(self):
        grid = Grid2D(n=129, L=6.0)
        c2, c2p, resid = gaussian_lower_check(equilibrium_field(grid), 0.0)
        assert c2 == pytest.approx(1.0 / (2.0 * math.pi), rel=1e-10)
        assert c2p == pytest.approx(1.0, abs=1e-10)
        assert abs(resid) <= 1e-12

    def test_gaussian_lower_check_variance_two(self):
        grid = Grid2D(n=129, L=7.0)
        fld = gaussian_field(grid, (2.0, 2.0))
        _, c2p, resid = gaussian_lower_check(fld, 0.0)
        assert c2p == pytest.approx(0.5, abs=1e-10)
        assert abs(resid) <= 1e-12


# ---------------------------------------------------------------------------
# Directional temperature re-exports used by the solver surface
# ---------------------------------------------------------------------------


class TestMomentLayer:
    def test_directional_temperature_examples(self):
        assert directional_temperature(0.0, 2, 1.3) == 1.0
        assert directional_temperature(0.5, 2, 0.25) == pytest.approx(
            1.0 + 0.5 * math.exp(-2.0), rel=1e-14
        )

    def test_relaxation_is_monotone(self):
        times = np.linspace(0.0, 3.0, 40)
        vals = [directional_temperature(0.5, 2, t) for t in times]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] == pytest.approx(1.0, abs=1e-4)
