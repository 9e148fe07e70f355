# gargoyle/agents/_resources.py
import json
from functools import lru_cache

from gargoyle.config import FIXTURES
from gargoyle.context import load_blocklist
from gargoyle.fbac import load_catalog
from gargoyle.netsim import load_topology
from gargoyle.policy import load_policies

MAP_IDS = range(1, 8)
POLICY_PATH = FIXTURES / "policies.json"
CATALOG_PATH = FIXTURES / "catalog.json"
BASELINES_PATH = FIXTURES / "baselines.json"
BLOCKLIST_PATH = FIXTURES / "blocklist.txt"


def map_path(map_id: int):
    return FIXTURES / "maps" / f"org{map_id}.json"


def _read(path):
    try:
        return path.read_text(encoding="utf-8")
    except OSError as e:
        raise SystemExit(f"Could not load {path}: {e}")


@lru_cache(maxsize=8)
def get_map(map_id: int):
    if map_id not in MAP_IDS:
        raise SystemExit(f"No org map {map_id}; shipped maps are 1..7")
    return load_topology(_read(map_path(map_id)))


@lru_cache(maxsize=1)
def get_policies():
    return load_policies(POLICY_PATH)


@lru_cache(maxsize=1)
def get_catalog():
    return load_catalog(_read(CATALOG_PATH))


@lru_cache(maxsize=1)
def get_blocklist():
    return load_blocklist(BLOCKLIST_PATH)


@lru_cache(maxsize=1)
def get_baselines():
    try:
        raw = json.loads(_read(BASELINES_PATH))
    except json.JSONDecodeError as e:
        raise SystemExit(f"{BASELINES_PATH} is not valid JSON: {e}")
    miss = [k for k in ("assignments", "fbac_bands", "working_hours") if k not in raw]
    if miss:
        raise SystemExit(f"{BASELINES_PATH} missing keys: {miss}")
    return raw

