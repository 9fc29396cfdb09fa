"""The two objectives and the two diagnostics, on geometry small enough to
check by hand.

The contrastive loss scores each anchor against every positive-side vector
in the batch at temperature tau; alignment measures how close positive pairs
sit on the unit sphere (lower is better), uniformity how spread out the
whole cloud is (more negative is more spread)."""

import math

import numpy as np

from afp.losses import mcl_loss
from afp.represent import PooledBatch, alignment_metric, pca2, uniformity_metric
from afp.tensor import Tensor


def pooled(rows):
    return PooledBatch(vectors=Tensor(np.asarray(rows, dtype=np.float64)), method="mean", layer=1)


# Two orthogonal pairs. The only "negative" each anchor sees is at cosine 0,
# its positive at cosine 1, so the loss is log(1 + exp(-1/tau)).
geom = [[1.0, 0.0], [0.0, 1.0]]
for tau in (1.0, 0.05):
    val = mcl_loss(pooled(geom), pooled(geom), tau).item()
    print(f"tau={tau:<5} loss={val:.9f}  closed form={math.log(1 + math.exp(-1 / tau)):.9f}")

# A fully collapsed batch cannot be separated: softmax goes uniform, ln N.
same = np.tile([0.6, -0.8], (4, 1))
print(f"collapsed batch of 4: {mcl_loss(pooled(same), pooled(same.copy()), 0.05).item():.6f} = ln 4")

# Alignment and uniformity on hand geometry.
print("\nalignment, identical pair:  ", alignment_metric([([1.0, 1.0], [2.0, 2.0])]))
print("alignment, orthogonal pair: ", alignment_metric([([1.0, 0.0], [0.0, 1.0])]))
print("alignment, antipodal pair:  ", alignment_metric([([1.0, 0.0], [-1.0, 0.0])]))
print("uniformity, collapsed cloud:", uniformity_metric([[1.0, 0.0]] * 4))
print("uniformity, antipodal pair: ", uniformity_metric([[1.0, 0.0], [-1.0, 0.0]]))

# The tension the combined objective balances: pulling pairs together
# (alignment down) without letting the whole cloud collapse (uniformity up).
rng = np.random.default_rng(0)
spread = rng.standard_normal((64, 8))
collapsed = np.tile(rng.standard_normal(8), (64, 1)) + 0.01 * rng.standard_normal((64, 8))
print(f"\nuniformity, spread cloud:    {uniformity_metric(spread):.3f}")
print(f"uniformity, collapsing cloud: {uniformity_metric(collapsed):.3f}  (drifts toward 0)")

# 2-D map of a cloud via power iteration, the export format behind
# `afp export-embeddings`.
coords = pca2(spread)
print("\npca2 coordinates:", coords.shape, "per-axis mean ~", np.round(coords.mean(axis=0), 12))
