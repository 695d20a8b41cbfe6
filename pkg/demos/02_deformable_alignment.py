"""Deformable convolution learning to undo a shift.

A random feature map is shifted by a fractional amount. A deformable 3x3
convolution whose kernel is the identity starts with zero offsets, so its
output is the shifted input. Gradient descent on one offset shared by every
tap and pixel pulls the sampling grid back to roughly the true shift. Two
rounds of bilinear interpolation blur the signal, so the fit is close but not
exact.

    python demos/02_deformable_alignment.py
"""
import numpy as np
import torch
import torch.nn.functional as F

from shorefuse.alignment import deform_conv2d

torch.manual_seed(0)
c, h, w = 3, 24, 24
dy, dx = 1.6, -0.8

smooth = F.avg_pool2d(torch.randn(1, c, h + 6, w + 6), 7, stride=1, padding=0)[..., :h, :w]
theta = torch.tensor([[[1.0, 0.0, -dx * 2 / w], [0.0, 1.0, -dy * 2 / h]]])
grid = F.affine_grid(theta, (1, c, h, w), align_corners=False)
shifted = F.grid_sample(smooth, grid, align_corners=False, padding_mode="border")

# Identity kernel: only the centre tap, one per channel.
weight = torch.zeros(c, c, 3, 3)
for i in range(c):
    weight[i, i, 1, 1] = 1.0

shift = torch.zeros(2, requires_grad=True)
opt = torch.optim.Adam([shift], lr=0.05)
interior = (slice(None), slice(None), slice(4, -4), slice(4, -4))
for step in range(301):
    offsets = shift.repeat(9)[None, :, None, None].expand(1, 18, h, w)
    out = deform_conv2d(shifted, offsets, weight)
    loss = F.mse_loss(out[interior], smooth[interior])
    opt.zero_grad()
    loss.backward()
    opt.step()
    if step % 60 == 0:
        print(f"step {step:3d}  mse {loss.item():.5f}")

print(f"true shift ({dy}, {dx}); learned offset ({shift[0].item():.3f}, {shift[1].item():.3f})")
print("zero offsets give plain convolution:",
      np.allclose(deform_conv2d(shifted, torch.zeros(1, 18, h, w), weight).numpy(),
                  F.conv2d(shifted, weight, padding=1).numpy(), atol=1e-6))
