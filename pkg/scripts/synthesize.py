"""Search for Lyapunov certificates over a range of V degrees."""
import argparse
import time

from consensus_sos.cli import bundled_example, load_problem
from consensus_sos.conditions import SynthesisConfig, synthesize


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--degrees", type=int, nargs="+", default=[2, 4])
    ap.add_argument("--order", type=int, choices=(1, 2), default=2)
    ap.add_argument("--mode", choices=("fixed_h", "alternate"), default="fixed_h")
    ap.add_argument("--deg-h", type=int, default=3)
    args = ap.parse_args()

    p = load_problem(bundled_example())
    for deg in args.degrees:
        cfg = SynthesisConfig(order=args.order, deg_v=deg, deg_h=args.deg_h, mode=args.mode)
        start = time.perf_counter()
        out = synthesize(cfg, p.qform)
        elapsed = time.perf_counter() - start
        print(f"deg V = {deg}: {'feasible' if out.feasible else 'not found'} ({out.status}, {len(out.rounds)} SDPs, {elapsed:.2f} s)")
        if out.feasible:
            print(f"  V = {out.certificate.V.to_string()}")
            print(f"  lambda_min(Psi) = {out.certificate.lambda_min_psi:.4g}")


if __name__ == "__main__":
    main()
