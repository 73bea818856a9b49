"""Mean-field zero-range process: exact simulation, fluid limit, spectral audits.

Subpackages by concern:

- ``pmf``        probability mass functions on the nonnegative integers and
                 the information functionals built on them
- ``simulate``   event-driven Monte Carlo of the finite-N ball/box process
- ``ehrenfest``  exactly solvable coin-flip ensemble used as an engine check
- ``fluid``      truncated integration of the infinite fluid-limit ODE
- ``brw``        spectral and functional-inequality toolkit for the biased
                 reflected random walk
- ``harness``    end-to-end numerical verification of the relaxation bounds
- ``cli``        command-line front door
"""

__version__ = "0.1.0"
