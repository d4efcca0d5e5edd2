"""Pure-numpy fallback for the compiled optimizer kernel.

Kept operation-for-operation in sync with ``_adamstep.pyx`` so both backends
apply the same update formula; see ``benchmarks/bench_kernels.py`` for the
numerical-agreement check and timings.
"""

import numpy as np


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    """One bias-corrected Adam update, in place.

    All arrays are flat float64 and are mutated: ``m`` and ``v`` hold the
    running first/second moments, ``param`` receives the update. ``step``
    is 1-based.
    """
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
