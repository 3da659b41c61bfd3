"""Transistor-level simulation of an organic log-domain integrator synapse.

Submodules: ``ofet`` (device model), ``circuit`` (MNA transient solver),
``stimulus`` (pulse trains), ``presets`` (synapse netlist and experiment
matrices), ``tau`` (time-constant fitting), ``harness`` (sweeps and reference
comparison) and ``cli``.
"""

__version__ = "0.1.0"
