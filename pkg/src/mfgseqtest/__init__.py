"""Mean field sequential testing: Bayesian stopping with a population-dependent signal.

Modules
-------
model        losses, signal, mollifier, stopped measures, assumption checks
filtering    posterior dynamics, clock, path simulation
agent_solver value function, free boundaries and their oracles
population   conditional stopping-time laws from the boundaries
equilibrium  fixed-point map and damped iteration
cli          command-line entry point
"""

__version__ = "0.1.0"
