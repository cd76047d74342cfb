"""How much a wrong guess of the parameters costs.

A locally optimal design depends on the parameter values assumed when it
was computed.  This script keeps the two-variable D-optimal design fixed,
moves one nominal value at a time across the range seen between
temperatures, and prints the efficiency the fixed design retains.

Run with ``python3 demos/nominal_value_sensitivity.py`` (about half a minute).
"""
from oedgrowth.studies import CaseStudyConfig, run_sensitivity


def main():
    cfg = CaseStudyConfig()
    for name, curve in run_sensitivity(cfg).items():
        print(f"\n{name} (nominal {curve.base_value:.4g}); lowest efficiency {curve.minimum:.3f}")
        for v, e in zip(curve.values, curve.efficiencies):
            bar = "#" * int(round(40 * e)) if e == e else "(solve failed)"
            print(f"  {v:9.4f}  {e:6.3f}  {bar}")


if __name__ == "__main__":
    main()
