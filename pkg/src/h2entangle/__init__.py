"""Two-electron soft-core H2 in one dimension: exact and TDQMC ground states,
reduced density matrices and linear entanglement entropy."""

__version__ = "0.1.0"
