"""Walk through one pass of the up/down projection cycle and inspect its trace.

Each up-projection unit measures how far its HR guess lands from the LR
input once projected back down, and corrects the guess with that residual.
The script prints the residual energy per unit for an untrained network and
checks the bookkeeping identities on the recorded intermediates.
"""
import torch

from cycmunet.config import ModelConfig
from cycmunet.model import CycMuNet, count_parameters

torch.manual_seed(0)
config = ModelConfig(base_channels=16, num_units=4, scale=4, deform_groups=4)
net = CycMuNet(config).eval()
print(f"model with M={config.num_units} units: {count_parameters(net) / 1e6:.2f}M parameters")

lr0, lr1 = torch.rand(2, 1, 3, 32, 32)
with torch.no_grad():
    out = net(lr0, lr1, keep_reps=True)

print("outputs:", {name: tuple(t.shape) for name, t in zip(("L_t", "H_0", "H_t", "H_1"), out.frames)})
for m, rec in enumerate(out.trace.upu, start=1):
    energy = sum(e.pow(2).mean().item() for e in rec.e.frames) / 3
    print(f"UPU {m}: LR residual energy {energy:.3e}, h at {tuple(rec.h.f0.shape[-2:])}")
for m, rec in enumerate(out.trace.dpu, start=1):
    energy = sum(e.pow(2).mean().item() for e in rec.e.frames) / 3
    print(f"DPU {m}: HR residual energy {energy:.3e}, l at {tuple(rec.l.f0.shape[-2:])}")

# the trace is self-consistent: h = UP_1(e) + u for every unit, bit for bit
with torch.no_grad():
    for upu, rec in zip(net.cycle.ups, out.trace.upu):
        again = upu.up1(rec.e).plus(rec.u)
        assert all(torch.equal(a, b) for a, b in zip(again.frames, rec.h.frames))
print("residual identities reproduced exactly")
