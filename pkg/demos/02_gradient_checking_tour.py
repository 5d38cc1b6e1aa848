"""Verify every analytic backward pass against central finite differences.

Each layer is checked in float64 over several seeds, then the whole model is
checked end to end at a tiny configuration.  The same suite backs the
``relfuse gradcheck`` subcommand.
"""

from relfuse.gradcheck import run_suite

results = run_suite(layer_seeds=(0, 1, 2, 3, 4), model_seeds=(0, 1))
width = max(len(r.name) for r in results)
print(f"{'component':<{width}}  worst rel err  tolerance  verdict")
for res in results:
    verdict = "ok" if res.passed else "FAILED"
    print(f"{res.name:<{width}}  {res.worst:13.3e}  {res.tol:9.0e}  {verdict}")

worst = max(res.worst / res.tol for res in results)
print(f"\nlargest error at {worst:.1%} of its tolerance")
