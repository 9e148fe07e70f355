# gargoyle/agents/fbac_static.py
from gargoyle.agents.rbac import RBACAgent
from gargoyle.fbac import AccessControlTensor, SegmentSelector


class FBACStaticAgent(RBACAgent):
    NAME = "fbac"
    DESCRIPTION = "Function-based access control with role-determined function sets; blind to context."
    USES_NETWORK_CONTEXT = False

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.tensor = AccessControlTensor(self.catalog)

    def _functions(self, request, obj) -> dict:
        index = self.policies.vocab.role_index(request.role)
        view = self.tensor
        # junior bands lose functions on labelled segments
        for band in self.baselines["fbac_bands"]:
            if index >= band["min_index"]:
                for label in band["labels"]:
                    view = view.restrict(request.user_id, obj, SegmentSelector.label(label), band["functions"])
        return view.render_view(request.user_id, obj)
