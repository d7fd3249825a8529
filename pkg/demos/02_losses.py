"""The three training losses on hand-sized inputs, and how they combine."""

import math

import torch

from gaitprivacy.losses import LossWeights, content_loss, gram, sample_noise, style_loss, task_loss, total_loss

# task loss: binary cross-entropy on the verifier's match probability
print("task(y=1, p=0.5) =", float(task_loss(torch.tensor([1.0]), torch.tensor([0.5]))), "~ ln 2 =", math.log(2))

# Gram matrix of a 2-channel, 1x2 feature map
f = torch.tensor([[[[1.0, 2.0]], [[3.0, 4.0]]]])
print("gram =", gram(f)[0].tolist())

# content and style compare a map with a reference
g = f + 0.5
print("content =", float(content_loss(f, g)))
print("style   =", float(style_loss(f, g)))

w = LossWeights(0.4, 0.4, 0.2)
print("total   =", float(total_loss(w, torch.tensor(0.7), torch.tensor(0.1), torch.tensor(2.0))))

try:
    LossWeights(0.4, 0.4, 0.3)
except ValueError as exc:
    print("rejected:", exc)

n = sample_noise(seed=0)
print(f"noise sample {n.shape}, range [{n.min():.1f}, {n.max():.1f}]")
