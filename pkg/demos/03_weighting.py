"""How the loss-weighting rules react to the two task losses.

    python demos/03_weighting.py
"""

from auxseg.tensor import Tensor
from auxseg.weighting import WeightingStrategy, combine_fixed, combine_ftwb, combine_twb

print(f"{'L_seg':>6} {'L_depth':>7} | {'400:1':>8} {'twb':>8} {'ftwb':>8}")
for ls, ld in [(2.0, 0.5), (1.0, 0.5), (0.5, 0.5), (0.2, 0.1), (0.05, 0.02)]:
    a, b = Tensor(ls), Tensor(ld)
    totals = [combine_fixed(a, b, 400, 1).total.item(), combine_twb(a, b).total.item(),
              combine_ftwb(a, b).total.item()]
    print(f"{ls:6.2f} {ld:7.2f} | " + " ".join(f"{t:8.4f}" for t in totals))

# Gradients w.r.t. each loss: with detached weights they equal the weights.
a, b = Tensor(0.4, requires_grad=True), Tensor(0.1, requires_grad=True)
combine_ftwb(a, b).total.backward()
print(f"\nftwb at (0.4, 0.1): dL/dL_seg = {a.grad:.3f}, dL/dL_depth = {b.grad:.3f}")

# Smoothing the weights across batches.
s = WeightingStrategy("twb", ema_beta=0.9)
print("\nEMA (beta 0.9) of lambda_seg while L_depth jumps from 1.0 to 0.2:")
for step, ld in enumerate([1.0] * 3 + [0.2] * 6, 1):
    print(f"  step {step}: raw {ld:.1f} -> smoothed {s.step(Tensor(0.5), Tensor(ld)).lambda_seg:.4f}")
