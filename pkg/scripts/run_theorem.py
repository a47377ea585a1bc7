"""Run the full pipeline on a config and print the per-m table.

    python3 scripts/run_theorem.py configs/conjugated.ini --out out/conjugated
"""

import argparse

from twistkam.pipeline import ExperimentConfig, StageError, run_pipeline


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("config")
    parser.add_argument("--out")
    args = parser.parse_args()
    cfg = ExperimentConfig.from_ini(args.config, out=args.out)
    try:
        rep = run_pipeline(cfg, cfg.out)
    except StageError as exc:
        print(f"aborted at stage {exc.stage}: {exc}")
        print(exc.diagnostic)
        return 1
    print(f"{'m':>4} {'theorem-iii':>12} {'hausdorff':>10} {'|u_m|':>9} {'m|v_m|':>9} {'psi C0':>9} {'k_m':>6}")
    for r in rep.records:
        print(f"{r['m']:>4} {r['theorem_iii_residual']:12.2e} {r['hausdorff']:10.4f} {r['u_norm']:9.1e} "
              f"{r['m'] * r['v_norm']:9.1e} {r['psi_c0']:9.1e} {str(r['k']):>6}")
    print(f"Hausdorff decay exponent {rep.trends['hausdorff_decay']:.3f}, corollary {rep.corollary_residual:.1e}")
    print(f"checks: {rep.checks}")
    print(f"{'PASS' if rep.passed else 'FAIL'} in {rep.runtime:.1f} s, artifacts in {cfg.out}")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
