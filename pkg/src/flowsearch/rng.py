"""Counter-based random streams for reproducible, order-independent sampling.

Every source of randomness in a run is drawn from its own stream, keyed by
``(run_seed, domain, *indices)``.  Streams are backed by numpy's Philox
bit generator (a counter-based generator), seeded through ``SeedSequence``
with the key as the spawn path.  Two consequences:

* a fixed ``(seed, domain, indices)`` key yields the same draws on every
  platform and in every execution order, so parallel and serial harness
  runs produce identical results;
* streams with distinct keys are statistically independent, so particles
  and steps can be sampled in any order or in parallel.

Domain constants keep unrelated consumers (initial latents, proposal noise,
resampling, ...) from ever sharing a stream.
"""

from __future__ import annotations

import numpy as np

# Stream domains. Values are arbitrary but fixed forever: changing them
# changes every sampled trajectory.
INIT = 1        # initial latents x_1 ~ N(0, I)
PROPOSAL = 2    # per-step, per-particle proposal noise z
RESAMPLE = 3    # SMC multinomial resampling
FORWARD = 4     # SoP forward-noising kernel
DIVERSITY = 5   # branched-proposal diversity protocol
PROCESS = 6     # generic run_process callers


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
