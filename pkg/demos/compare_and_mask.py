"""Train a small MNIST model, then run the two diagnostics on it.

First PGD with fixed step sizes is compared against APGD at a few budgets.
Then the logits are scaled up to show how cross-entropy gradients vanish
while the scale-invariant DLR loss keeps finding adversarial points.
"""
import numpy as np

from robeval.data import mnist_subset
from robeval.harness import compare_pgd_apgd, gradient_masking_diagnostic
from robeval.nn import mlp, train_toy
from robeval.threat import ThreatModel

x_tr, y_tr = mnist_subset("train")
x_te, y_te = mnist_subset("test")
net = train_toy(mlp(784, 10, hidden=(64,), seed=0), x_tr, y_tr, epochs=10, seed=0)
x, y = x_te[:200], y_te[:200]
print(f"clean accuracy on 200 test points: {np.mean(net.predict(x) == y):.3f}")

res = compare_pgd_apgd(net, x, y, ThreatModel("Linf", 0.05), budgets=(25, 100), baseline_iter=25)
print("\nrobust accuracy after each method (Linf, eps 0.05)")
for row in res["rows"]:
    print(f"  {row['method']:<15} step {row['step']:<9} iters {row['iterations']:>4}  robust {row['robust_accuracy']:.3f}")

print("\nlogit scale  zero-grad fraction  CE robust  DLR robust")
for row in gradient_masking_diagnostic(net, x, y, ThreatModel("Linf", 0.1), scales=(1, 1e3, 1e6), n_iter=25):
    print(f"  {row['scale']:>9g}  {row['zero_gradient_fraction']:>18.3f}  "
          f"{row['apgd_ce_robust_accuracy']:>9.3f}  {row['apgd_dlr_robust_accuracy']:>10.3f}")
