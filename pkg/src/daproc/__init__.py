"""Data-aware process engine.

Specs pair a relational schema with SQL-based condition-action rules and
actions. The engine executes them over a state-relativized store (every
update appends a new state instead of overwriting) and can unfold the
induced transition system into a finite abstract state space.
"""

from .errors import DaprocError

__all__ = ["DaprocError"]
__version__ = "0.1.0"
