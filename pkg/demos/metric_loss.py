"""
The pull/push metric loss on a handful of vectors
=================================================

Positives are the same location in input and output; negatives are other
locations of the same image. Watch the similarities move under plain
gradient descent.
"""

import torch

from dmlct.metric import metric_loss_tensor, normalize_rows

torch.manual_seed(0)
tau = 0.15
raw_z = torch.randn(8, 16, requires_grad=True)   # input-side embeddings
raw_w = torch.randn(8, 16, requires_grad=True)   # output-side embeddings
opt = torch.optim.SGD([raw_z, raw_w], lr=5e-3)
off = ~torch.eye(8, dtype=torch.bool)

for it in range(201):
    z, w = normalize_rows(raw_z), normalize_rows(raw_w)
    loss = metric_loss_tensor(z, w, tau)
    if it % 40 == 0:
        with torch.no_grad():
            print(f"{it:3d} loss {loss.item():9.2f}  positive {(z * w).sum(1).mean():+.3f}"
                  f"  negative z {(z @ z.T)[off].mean():+.3f}  w {(w @ w.T)[off].mean():+.3f}")
    opt.zero_grad()
    loss.backward()
    opt.step()

# the floor is -exp(1/tau) plus whatever the negatives still cost
print("floor", -torch.exp(torch.tensor(1 / tau)).item())
