"""Multi-party private set operations decided by an external party.

Two protocol families share one harness: additively homomorphic protocols
over a published finite universe (union, intersection, and general CNF
expressions, with element, cardinality, and emptiness outputs), and a
keyed-hash protocol for unlimited universes (cardinality and emptiness of
DNF expressions).  A hardened mode re-runs the homomorphic protocols with
verifiable initialization, rotating leaders, cross-checked results, and a
zero-product audit to expose misbehaving parties.
"""

__version__ = "0.1.0"
