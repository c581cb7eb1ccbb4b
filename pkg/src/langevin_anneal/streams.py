"""Counter-based random streams addressable by (seed, purpose, step, chain).

Every draw used by the simulators is a pure function of its address, so a
chain's Brownian increment at step ``k`` can be regenerated on demand (for
bridges, synchronous coupling, or a different split of chains across
workers) without replaying the rest of the ensemble.

Philox is keyed by ``(seed, purpose|sub|step)``; the chain id selects the
counter offset inside that keyed stream.
"""
import threading

import numpy as np
from scipy.special import ndtri

# purpose tags; 8 bits
BROWNIAN = 1
BRIDGE = 2
ZETA = 3
INIT = 4
SAMPLE = 5
MINIBATCH = 6
COUPLING = 7

_MASK64 = (1 << 64) - 1
_STEP_BITS = 40
_SUB_BITS = 16


def _key(seed, purpose, step, sub):
    if not 0 <= step < (1 << _STEP_BITS):
        raise ValueError(f"step index out of range: {step}")
    if not 0 <= sub < (1 << _SUB_BITS):
        raise ValueError(f"sub-stream index out of range: {sub}")
    word = (purpose << (_STEP_BITS + _SUB_BITS)) | (sub << _STEP_BITS) | step
    return np.array([int(seed) & _MASK64, word], dtype=np.uint64)


_local = threading.local()


def _generator(key, block):
    # Re-keying one Philox object per thread is cheaper than constructing a
    # new bit generator for every draw.
    gen = getattr(_local, "gen", None)
    if gen is None:
        gen = _local.gen = np.random.Philox(0)
        _local.state = gen.state
    st = _local.state
    st["state"]["key"] = key
    st["state"]["counter"] = np.array([block, 0, 0, 0], dtype=np.uint64)
    st["buffer_pos"] = 4
    gen.state = st
    return gen


def raw(seed, purpose, step, first, count, sub=0):
    """``count`` uint64 words starting at flat position ``first``."""
    if count == 0:
        return np.empty(0, dtype=np.uint64)
    block, lane = divmod(int(first), 4)
    out = _generator(_key(seed, purpose, step, sub), block).random_raw(count + lane)
    return out[lane:]


def uniforms(seed, purpose, step, first, count, sub=0):
    """Uniforms on the open interval (0, 1)."""
    words = raw(seed, purpose, step, first, count, sub)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def normals(seed, purpose, step, first_chain, n_chains, dim, sub=0):
    """Standard normals of shape ``(n_chains, dim)`` for chains
    ``first_chain .. first_chain + n_chains - 1``."""
    u = uniforms(seed, purpose, step, first_chain * dim, n_chains * dim, sub)
    return ndtri(u).reshape(n_chains, dim)


def chain_uniforms(seed, purpose, step, first_chain, n_chains, width, sub=0):
    """Uniforms of shape ``(n_chains, width)``, addressed per chain."""
    u = uniforms(seed, purpose, step, first_chain * width, n_chains * width, sub)
    return u.reshape(n_chains, width)


def derive_seed(master, *labels):
    """Deterministic child seed from a master seed and integer labels."""
    ss = np.random.SeedSequence([int(master) & _MASK64, *[int(x) for x in labels]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
