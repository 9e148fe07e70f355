# gargoyle/agents/__init__.py
from .fbac_static import FBACStaticAgent
from .gargoyle_agent import GargoyleAgent
from .rbac import RBACAgent
from .ucon_like import UCONLikeAgent

REGISTRY = {
    "gargoyle": GargoyleAgent,     # network context + policy pack
    "rbac": RBACAgent,
    "fbac": FBACStaticAgent,
    "ucon": UCONLikeAgent,
}
