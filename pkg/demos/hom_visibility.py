"""QD/thermal HOM: analytic visibility curve next to a short Monte Carlo run.

    python demos/hom_visibility.py --duration 120 --seed 3
"""

import argparse

from solarhom.experiments import HomSetup, run_hom, run_model_curves


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--duration", type=float, default=120.0, help="acquisition (s)")
    p.add_argument("--seed", type=int, default=3)
    args = p.parse_args()

    setup = HomSetup()
    model = run_model_curves(setup)
    mc = run_hom(setup, duration=args.duration, seed=args.seed).summary
    curve = mc["curve"]
    print(f"V(20 ps): MC {mc['visibility']:.3f} +- {mc['stderr']:.3f}, "
          f"model {mc['model']['visibility']:.3f}")
    print(f"{'bin_ps':>7} {'V_mc':>7} {'err':>6} {'V_model':>8}")
    for b, v, e, vm in zip(curve["bin_ps"], curve["visibility"], curve["stderr"],
                           mc["model"]["curve"]):
        print(f"{b:7.0f} {v:7.3f} {e:6.3f} {vm:8.3f}")
    print(f"0.5 crossing: MC {curve['crossing_ps']} ps, model {model.summary['crossing_ps']:.0f} ps")


if __name__ == "__main__":
    main()
