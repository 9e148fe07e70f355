# gargoyle/__init__.py
# Access control for insider attacks, driven by context pulled out of the network.

from gargoyle.engine import AccessDecision, AccessRequest, Gargoyle, decide, snapshot_context
from gargoyle.errors import GargoyleError

__all__ = ["AccessDecision", "AccessRequest", "Gargoyle", "GargoyleError", "decide", "snapshot_context"]
