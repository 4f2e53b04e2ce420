"""Verify the bundled second-order certificate and print a short report."""
import argparse
import json
import time

from consensus_sos.cli import bundled_example, load_problem
from consensus_sos.conditions import verify


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem", default=None, help="problem JSON (default: bundled example)")
    ap.add_argument("--out", default=None, help="write the result JSON here")
    args = ap.parse_args()

    from pathlib import Path

    p = load_problem(Path(args.problem) if args.problem else bundled_example())
    start = time.perf_counter()
    out = verify(p.V, p.h2, p.qform, h1=p.h1, symmetry_tol=p.symmetry_tol)
    elapsed = time.perf_counter() - start
    print(f"feasible: {out.feasible} ({out.status}, {elapsed:.2f} s)")
    if out.certificate is not None:
        c = out.certificate
        print(f"lambda_min(Psi): {c.lambda_min_psi:.6g}")
        print(f"symmetry residual: {c.symmetry_residual:.3e} (tolerance {c.symmetry_tol:.1e})")
        for name, cert in c.certs.items():
            print(f"  {name:12s} basis {len(cert.basis):3d}  residual {cert.residual:.2e}  lambda_min {cert.lambda_min:.2e}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out.to_json(), fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
