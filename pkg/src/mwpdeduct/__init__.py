"""Deductive math word problem solver.

Solving is treated as iterative relation extraction over quantities: at each
step every (quantity, quantity, operation) candidate is scored, the best one
is emitted as a new quantity, and a terminator head decides when the answer
program is complete.
"""

__version__ = "0.1.0"
