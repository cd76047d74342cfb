import json

import numpy as np
import pytest

from oedgrowth.studies import (REFERENCE_DESIGNS, TEMPERATURES, CaseStudyConfig, PlateauBound, StudyReport,
                               designs_match, run_all)
from oedgrowth import ApproximateDesign


# --------------------------------------------------------------------------- configuration


def test_config_defaults():
    cfg = CaseStudyConfig()
    np.testing.assert_allclose(cfg.extended_theta, [7.0675, 10.035, 30.2, 0.0099, -17.5], atol=1e-3)
    assert set(cfg.primary) == set(TEMPERATURES)
    assert cfg.parameter_ranges()["lam"] == (20.0, 44.1)


@pytest.mark.parametrize("kw", [
    {"primary": {4.0: (7.08, 8.65, 0.043, 44.1)}},
    {"reference_designs": {4.0: (0, 24)}},
    {"log_convention": "binary"},
    {"eff_convention": "median"},
    {"T_min": 10.0},
    {"targets": (1.2,)},
    {"b": -1.0},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CaseStudyConfig(**kw)


def test_reference_designs_are_uniform_plans():
    for T, times in REFERENCE_DESIGNS.items():
        d = ApproximateDesign.uniform(np.array(times, dtype=float)[:, None])
        np.testing.assert_allclose(d.weights, 1 / len(times))


def test_plateau_bound_contains_stationary_phase():
    cfg = CaseStudyConfig()
    for T in TEMPERATURES:
        y0, y_max, mu, lam = cfg.primary[T]
        hi = cfg.isothermal_space(T).bounds[0][1]
        assert hi > lam + (y_max - y0) / mu
    bound = PlateauBound(30.2, 2.9675, b=0.0099, T_min=-17.5)
    assert bound(4.0) > bound(28.0)


def test_designs_match():
    a = ApproximateDesign(np.array([[4.0, 0.0], [28.0, 40.0]]), [0.5, 0.5])
    b = ApproximateDesign(np.array([[4.0, 0.5], [28.0, 40.0], [28.0, 41.0]]), [0.5, 0.3, 0.2])
    assert designs_match(a, b, [24.0, 500.0], tol_x=0.01, tol_w=0.01)
    c = ApproximateDesign(np.array([[4.0, 0.0], [28.0, 40.0]]), [0.4, 0.6])
    assert not designs_match(a, c, [24.0, 500.0], tol_x=0.01, tol_w=0.01)


def test_unknown_study():
    with pytest.raises(ValueError, match="time-tradeoff"):
        run_all(CaseStudyConfig(), ["figure9"])


# --------------------------------------------------------------------------- full report invariants


def test_every_design_certified(report):
    assert report.all_certified
    for sd in report.solved():
        assert sd.converged and sd.report.passed, sd.name


def test_isothermal_first_point_zero(report):
    for T in TEMPERATURES:
        assert report.sections["table3"][T]["solved"].design.points[0, 0] == 0.0


def test_spacing_shrinks_with_temperature(report):
    gaps = []
    for T in TEMPERATURES:
        t = report.sections["table3"][T]["solved"].display.points[:, 0]
        gaps.append(np.diff(t[:3]))
    gaps = np.array(gaps)
    assert np.all(np.diff(gaps, axis=0) < 0)


def test_pooled_efficiencies_at_most_one(report):
    ext = report.sections["extended"]
    assert ext["pooled_reference_efficiency"] <= 1
    assert ext["pooled_isothermal_efficiency"] <= 1


def test_sensitivity_curves_peak_at_base(report):
    for name, curve in report.sections["sensitivity"].items():
        assert curve.at(curve.base_value) == pytest.approx(1.0, abs=5e-3), name
        assert np.nanmax(curve.efficiencies) <= 1 + 5e-3
        assert not curve.failures


def test_tradeoff_invariants(report):
    curves = report.sections["time_tradeoff"]
    targets = sorted(curves, reverse=True)
    base = curves[1.0].final_times
    prev_saving = np.zeros_like(base)
    for e in targets:
        tf = curves[e].final_times
        assert np.all(np.isfinite(tf))
        assert np.all(np.diff(tf) <= 0), e
        s = 1 - tf / base
        assert np.all(s >= prev_saving - 1e-12) and np.all((0 <= s) & (s <= 1))
        prev_saving = s


def test_alternative_fits_reported(report):
    for e, curve in report.sections["time_tradeoff"].items():
        assert {"log", "quadratic", "best"} <= set(curve.alternatives)


def test_report_serialises(report):
    text = json.dumps(report.to_dict())
    back = json.loads(text)
    assert {"config", "sections", "deviations"} <= set(back)
    assert isinstance(report, StudyReport)


def test_convention_matrix_complete(report):
    conv = report.sections["conventions"]
    assert set(conv["rows"]) == {"natural/homogeneous", "natural/raw", "decimal/homogeneous", "decimal/raw"}
    assert conv["best"] == "natural/homogeneous"
