"""Optimal sampling times for growth curves at fixed temperatures.

For each storage temperature the Baranyi model is fitted around its
published estimates.  The script prints the D-optimal plan (all four
parameters), the c-optimal plan for the maximum growth rate, and how the
published sampling plan compares with both.

Run with ``python3 demos/isothermal_designs.py``.
"""
import numpy as np

from oedgrowth.studies import TEMPERATURES, CaseStudyConfig, run_isothermal_c, run_isothermal_d


def show(label, solved):
    d = solved.display
    times = "  ".join(f"{t:7.1f}" for t in d.points[:, 0])
    weights = "  ".join(f"{w:7.3f}" for w in d.weights)
    print(f"  {label:<10} times   {times}")
    print(f"  {'':<10} weights {weights}")
    print(f"  {'':<10} largest |phi| {solved.report.max_violation:.1e}, certified {solved.certified}")


def main():
    cfg = CaseStudyConfig()
    d_results = run_isothermal_d(cfg)
    c_results = run_isothermal_c(cfg, d_results)
    for T in TEMPERATURES:
        d, c = d_results[T], c_results[T]
        print(f"\n{T:g} degC  (y0, y_max, mu_max, lag) = {np.round(cfg.primary[T], 4).tolist()}")
        show("D-optimal", d["solved"])
        show("c-optimal", c["solved"])
        print(f"  published plan: D-efficiency {d['reference_efficiency']:.3f}, "
              f"c-efficiency {c['reference_efficiency']:.3f}")
        print(f"  D-optimal plan used for mu_max: c-efficiency {c['d_design_efficiency']:.3f}")
        print(f"  central share of the c-optimal plan: {c['central_weight']:.3f}")


if __name__ == "__main__":
    main()
