"""Per-layer FLOP and parameter table for the full-size classifier and its variants.

    python demos/cost_report.py            # summary for every variant
    python demos/cost_report.py --layers   # also print the DeepMediX layer table
"""

import sys

from deepmedix.analysis import count_flops
from deepmedix.architecture import VARIANTS, BackboneSpec, build_variant

backbone = BackboneSpec(1.0, (224, 224, 3))

if "--layers" in sys.argv:
    print(count_flops(build_variant("DeepMediX", backbone, 4)).to_text())
    print()

print(f"{'variant':<10} {'GFLOPs':>8} {'params':>11} {'head params':>12}")
for name in VARIANTS:
    model = build_variant(name, backbone, 4)
    report = count_flops(model)
    print(f"{name:<10} {report.total_flops / 1e9:>8.4f} {report.total_params:>11,} "
          f"{model.count_params('head.'):>12,}")
