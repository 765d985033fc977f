"""Input-space pullback metric G(x) = J(x)^T J(x) of a small classifier.

G measures how far the output distribution moves per unit of input change.
Its rank is at most the number of classes, so the spectrum is computed from
the k x k matrix J J^T.
"""

import numpy as np

from deepmedix import data as dio
from deepmedix.analysis import metric_form, pullback_metric, pullback_spectrum
from deepmedix.architecture import BackboneSpec, build_variant

model = build_variant("DeepMediX", BackboneSpec(0.25, (16, 16, 3)), 2)
params = model.init_params(0)
x, _ = dio.generate_synthetic(dio.SyntheticSpec(num_samples=2, image_size=(16, 16), seed=5))

spec = pullback_spectrum(model, params, x[0])
print(f"input dimension {spec['dimension']}, rank <= {spec['rank_bound']}")
print("top eigenvalues", ["%.3e" % v for v in spec["top_eigenvalues"]], f"trace {spec['trace']:.3e}")

G = pullback_metric(model, params, x[0]).G
u = x[1] - x[0]
print(f"squared length of the step to the other image under G: {metric_form(G, u, u):.3e}")
print(f"symmetric: {np.array_equal(G, G.T)}; smallest eigenvalue {np.linalg.eigvalsh(G)[0]:.1e}")
