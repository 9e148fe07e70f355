# gargoyle/agents/gargoyle_agent.py
from gargoyle.engine import Gargoyle


class GargoyleAgent(Gargoyle):
    NAME = "gargoyle"
    DESCRIPTION = "Context-aware decisions from network-extracted NCAs, data-plane reports and the policy pack."
    USES_NETWORK_CONTEXT = True

    def __init__(self, network, repo, policies, catalog, baselines=None, config=None, **kwargs):
        super().__init__(network, repo, policies, catalog, config=config, **kwargs)

    def handle(self, request):
        return self.request(request)
