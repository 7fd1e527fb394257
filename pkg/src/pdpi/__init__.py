"""Primal-dual splitting with partial inverses over closed vector subspaces.

The package is organised around a generic solver for composite monotone
inclusions whose primal variable is constrained to a closed vector subspace
(:mod:`pdpi.solver`), a library of closed-form proximity operators and
projections (:mod:`pdpi.prox`), small Hilbert-space utilities
(:mod:`pdpi.hilbert`), and three benchmark problem families: constrained
LASSO (:mod:`pdpi.lasso`), stochastic arc-capacity expansion on transport
networks (:mod:`pdpi.transport`), and stationary mean-field games with
non-local coupling on the periodic torus (:mod:`pdpi.mfg`).  Batch
experiments are driven by the ``pdpi`` command line tool (:mod:`pdpi.cli`).
"""

__version__ = "0.1.0"
