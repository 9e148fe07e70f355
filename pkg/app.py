# app.py
# Scenario explorer: pick a decision agent and a scenario, replay it, read the trace.
#
# Usage:
#   streamlit run app.py
import json

import pandas as pd
import streamlit as st

from gargoyle.config import FIXTURES, GeneratorConfig

st.set_page_config(page_title="Gargoyle Explorer", page_icon="🛡️", layout="wide")
st.title("🛡️ Gargoyle scenario explorer")
st.caption("Replay an insider scenario through the simulated network and compare decision agents.")

# ---- Safe import of agents registry ----
try:
    from gargoyle.agents import REGISTRY  # {"gargoyle": GargoyleAgent, "rbac": ..., ...}
    from gargoyle.harness import classify, run_scenario
    from gargoyle.agents._resources import get_catalog
    from gargoyle.scenarios import ScenarioSpec, generate_scenarios, load_scenarios
    if not isinstance(REGISTRY, dict) or not REGISTRY:
        raise ValueError("gargoyle.agents.REGISTRY is missing or empty.")
except Exception as e:
    st.error("Could not load the decision agents. Check that `gargoyle/agents/__init__.py` defines REGISTRY "
             "and that the fixtures directory is intact.")
    st.exception(e)
    st.stop()

SAMPLES = {
    "Sample I: proximate attacker": FIXTURES / "scenarios" / "sample_scenario_1.json",
    "Sample II: delaying switch": FIXTURES / "scenarios" / "sample_scenario_2.json",
}

# =========================
# Helpers
# =========================
@st.cache_data(show_spinner=False)
def generated(n: int, seed: int):
    return [s.model_dump(mode="json") for s in generate_scenarios(GeneratorConfig(scenarios=n), seed)]


def pick_scenario():
    source = st.radio("Scenario source", ["Shipped samples", "Generated"], horizontal=True)
    if source == "Shipped samples":
        name = st.selectbox("Sample", list(SAMPLES))
        return load_scenarios(SAMPLES[name])[0]
    col1, col2 = st.columns(2)
    n = col1.number_input("How many to generate", 1, 200, 20)
    seed = col2.number_input("Seed", 0, 10_000, 42)
    docs = generated(int(n), int(seed))
    labels = [f"{d['scenario_id']}  cat {d['category']}  {', '.join(d['subtypes'])}" for d in docs]
    idx = st.selectbox("Scenario", range(len(docs)), format_func=lambda i: labels[i])
    return ScenarioSpec.model_validate(docs[idx])


def trace_frame(trace) -> pd.DataFrame:
    if not trace:
        return pd.DataFrame()
    df = pd.DataFrame(trace)
    df["rules"] = df["triggering_rules"].map(", ".join)
    df["actions"] = df["actions"].map(lambda a: "; ".join(json.dumps(x) for x in a))
    cols = ["seq", "time", "kind", "request_id", "user_id", "object_id", "outcome", "reason", "status",
            "rules", "actions", "flow", "latency_ms"]
    return df[cols]


def render_outcome(outcome, catalog_functions):
    if outcome.status == "aborted":
        st.error(f"Scenario aborted: {outcome.diagnostic}")
        return
    if outcome.protected is not None:
        (st.success if outcome.protected else st.warning)(
            "Goal blocked" if outcome.protected else "Goal NOT blocked: the insider could exfiltrate")
    st.markdown("**Requests**")
    st.dataframe(pd.DataFrame(outcome.requests), use_container_width=True)
    st.markdown("**Decision trace**")
    st.dataframe(trace_frame(outcome.trace), use_container_width=True)

    with st.expander("Function views per record"):
        for rec in outcome.trace:
            if rec["functions"] is None:
                continue
            st.markdown(f"**{rec['seq']}. {rec['kind']} {rec['request_id']}** ({classify(rec, catalog_functions)})")
            st.code(json.dumps(rec["functions"], indent=2))


# =========================
# Session defaults
# =========================
for k, v in {"last": None}.items():
    if k not in st.session_state:
        st.session_state[k] = v

# =========================
# Inputs
# =========================
spec = pick_scenario()
with st.expander("Scenario document"):
    st.code(spec.model_dump_json(indent=1)[:20_000])

agents = st.multiselect("Agents", list(REGISTRY), default=["gargoyle"])

# =========================
# Run
# =========================
if st.button("Replay scenario"):
    try:
        st.session_state["last"] = {name: run_scenario(spec, agent=name) for name in agents}
    except Exception as e:
        st.error("The replay raised an exception. Check the scenario and the fixtures.")
        st.exception(e)

if st.session_state["last"]:
    functions = get_catalog().functions
    for tab, (name, outcome) in zip(st.tabs(list(st.session_state["last"])), st.session_state["last"].items()):
        with tab:
            st.caption(REGISTRY[name].DESCRIPTION)
            render_outcome(outcome, functions)

st.divider()
st.caption("Simulated network and synthetic users only. This is a research demo, not a production access-control system.")
