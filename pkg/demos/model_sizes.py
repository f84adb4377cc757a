"""Parameter counts of the ablation variants and of the projection-unit sweep."""
from cycmunet.config import ModelConfig
from cycmunet.model import CycMuNet, count_deformable_ops, count_parameters

base = ModelConfig()
print("variant  params(M)  deformable convs")
for variant, label in zip("abcd", ("fusion interpolation", "+ deformable interpolation",
                                   "+ plain projection units", "full model")):
    net = CycMuNet(base.replace(variant=variant))
    print(f"   {variant}     {count_parameters(net) / 1e6:6.2f}     {count_deformable_ops(net)}   ({label})")

print("\nM   params(M)")
for m in (2, 4, 6, 8, 10):
    print(f"{m:<3d} {count_parameters(CycMuNet(base.replace(num_units=m))) / 1e6:6.2f}")
