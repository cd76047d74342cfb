"""Choosing both temperature and sampling time.

Replacing the growth rate by the Ratkowsky square-root law lets one design
pick temperatures as well as times.  The script solves that D-optimal
design, shows how the end of the experiment should move with temperature,
and how much time is saved by accepting 95 to 99 percent efficiency.

Run with ``python3 demos/two_variable_design.py`` (about half a minute).
"""
from oedgrowth.studies import CaseStudyConfig, run_extended_d, run_time_tradeoff


def main():
    cfg = CaseStudyConfig()
    ext = run_extended_d(cfg)
    sd = ext["solved"]
    print("Two-variable D-optimal design (T degC, t h, weight):")
    for (T, t), w in zip(sd.display.points, sd.display.weights):
        print(f"  {T:6.1f}  {t:8.2f}  {w:.3f}")
    print(f"largest |phi| along t = 0 over all temperatures: {ext['t0_flatness']:.1e}")
    print(f"pooled published plan efficiency: {ext['pooled_reference_efficiency']:.3f}")
    print(f"pooled isothermal D-optimal plans efficiency: {ext['pooled_isothermal_efficiency']:.3f}")

    fit = ext["final_time_curve"].fit
    print(f"\nfull-efficiency final time: t_f(T) = {fit.a:.1f} + ({fit.b:.1f}) ln T, RMSE {fit.rmse:.2f} h")
    for target, curve in sorted(run_time_tradeoff(cfg, ext).items()):
        if target == 1.0 or curve.saving is None:
            continue
        lo, hi = curve.saving
        print(f"target {target:.2f}: t_f(T) = {curve.fit.a:.1f} + ({curve.fit.b:.1f}) ln T, "
              f"time saved {100 * lo:.1f}% to {100 * hi:.1f}%")


if __name__ == "__main__":
    main()
