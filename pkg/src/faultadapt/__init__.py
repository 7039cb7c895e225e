"""Continual-RL study of hardware-fault adaptation at desk scale.

Agents learn a task on a healthy simulated machine, a fault is injected, and
four knowledge-transfer approaches are compared for adaptation speed and
asymptotic performance.
"""

__version__ = "0.1.0"


def _tune_allocator() -> None:
    # Activation buffers are ~1 MB; glibc munmaps blocks that large on free and
    # re-faults them on the next allocation, which dominates the update cost.
    # Raising the mmap/trim thresholds lets the heap reuse them. Best effort.
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        m_trim_threshold, m_mmap_threshold = -1, -3
        libc.mallopt(m_trim_threshold, 1 << 30)
        libc.mallopt(m_mmap_threshold, 1 << 30)
    except Exception:
        pass


_tune_allocator()
