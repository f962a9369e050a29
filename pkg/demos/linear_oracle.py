"""Attacks against a two-class linear model, where the answer is known.

For f(x) = w.x + b the l_p distance to the decision boundary is
|f(x)| / ||w||_q, so every attack can be scored against ground truth.
Boxes are ignored by picking points far from the [0, 1] faces.
"""
import numpy as np

from robeval.apgd import ApgdConfig, apgd_run
from robeval.fab import FabConfig, fab_t_run
from robeval.nn import linear_model
from robeval.square import SquareConfig, square_attack
from robeval.threat import ThreatModel

rng = np.random.default_rng(0)
d, n = 64, 200
w = rng.normal(size=(n, d)) * 0.01
x = rng.uniform(0.45, 0.55, size=(n, d))

for norm, dual in (("Linf", 1), ("L2", 2)):
    apgd_hits = fab_err = square_hits = 0
    for i in range(n):
        wi = w[i]
        margin = rng.uniform(0.5, 1.5) * np.linalg.norm(wi, dual) * 0.02
        bias = margin - wi @ x[i]
        net = linear_model(np.stack([wi / 2, -wi / 2]), np.array([bias / 2, -bias / 2]))
        radius = margin / np.linalg.norm(wi, dual)
        eps = radius * (1.1 if i % 2 else 0.9)
        xi, yi = x[i:i + 1], np.array([0])
        tm = ThreatModel(norm, eps)
        out = apgd_run(net, xi, yi, tm, ApgdConfig(n_iter=20))
        apgd_hits += bool(out.success[0]) == (eps > radius)
        fab = fab_t_run(net, xi, yi, np.array([1]), ThreatModel(norm, 10 * radius), FabConfig(n_iter=20))
        fab_err = max(fab_err, abs(fab.f_best[0] - radius) / radius)
        sq = square_attack(net, xi, yi, ThreatModel(norm, 3 * radius), SquareConfig(n_queries=500))
        square_hits += bool(sq.success[0])
    print(f"{norm}: APGD agrees with the oracle on {apgd_hits}/{n}, "
          f"FAB worst relative distance error {fab_err:.2e}, Square succeeds at 3x radius on {square_hits}/{n}")
