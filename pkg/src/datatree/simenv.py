"""Deterministic simulated task environment.

Serves both executor contracts against a synthetic world: a small
universe of latent datasets, each with a hidden utility and a
discoverability weight. Discovery requests sample undiscovered datasets
by weight; exploitation requests hill-climb a selection using only what
a real run would see (context records and manifest hints) and score it
as the clamped sum of hidden utilities plus seeded noise. Everything is
a pure function of the world file and the request, so identical runs
replay bit for bit and a brute-force oracle can grade the search.

Run as a child process:

    python -m datatree.simenv --world world.json

Reads one request line from stdin, writes one terminal response line.
"""

from __future__ import annotations

import argparse
import json
import math
import random
import sys
from itertools import combinations
from typing import Optional

WORLD_VERSION = 1
ORACLE_MAX_DATASETS = 20

# Timestamp stamped on simulated provenance records. Fixed so manifests
# are identical across runs and replays.
SIM_RETRIEVED_AT = "2025-06-01T00:00:00Z"


class WorldError(Exception):
    pass


# -- world generation -----------------------------------------------------


def generate_world(
    seed: int,
    num_datasets: int = 14,
    base_score: float = 0.25,
    max_select: int = 5,
    noise_sigma: float = 0.005,
    hint_sigma: float = 0.02,
    entries_per_red: int = 4,
    strong_fraction: float = 0.25,
    fragile_fraction: float = 0.4,
    fragile_fail_rate: float = 0.65,
    red_fail_rate: float = 0.0,
    black_fail_rate: float = 0.0,
) -> dict:
    """Build a world description as a plain JSON-ready dict.

    Utilities are two-tiered: a minority of strong datasets among many
    weak ones, so a search that concentrates on the right combination
    clearly beats one that settles for any decent-looking subset.
    """
    if num_datasets < 2:
        raise WorldError("world needs at least 2 datasets")
    if not 0.0 <= base_score <= 1.0:
        raise WorldError("base_score must lie in [0, 1]")
    rng = random.Random(f"world:{seed}")
    modalities = ("tabular", "text", "image", "audio")
    datasets = []
    for j in range(num_datasets):
        strong = rng.random() < strong_fraction
        if strong:
            utility = rng.uniform(0.12, 0.2)
        else:
            utility = rng.uniform(0.01, 0.06)
        # Curated strong sources are stable; weak scraped ones sometimes
        # break the pipeline whenever they are part of the selection.
        fragile = (not strong) and rng.random() < fragile_fraction
        datasets.append(
            {
                "id": f"ds{j:02d}",
                "true_utility": round(utility, 6),
                "weight": round(rng.uniform(0.5, 2.0), 6),
                "modality": modalities[rng.randrange(len(modalities))],
                "scale": rng.randint(200, 5000),
                "fragile": fragile,
            }
        )
    return {
        "version": WORLD_VERSION,
        "seed": seed,
        "latent_datasets": datasets,
        "base_score": base_score,
        "max_select": max_select,
        "interaction_penalty": {"penalty_per_extra": 1.0},
        "noise_sigma": noise_sigma,
        "hint_sigma": hint_sigma,
        "entries_per_red": entries_per_red,
        "fragile_fail_rate": fragile_fail_rate,
        "red_fail_rate": red_fail_rate,
        "black_fail_rate": black_fail_rate,
    }


def write_world(world: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(world, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_world(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        world = json.load(fh)
    if world.get("version") != WORLD_VERSION:
        raise WorldError(f"unsupported world version {world.get('version')!r}")
    for d in world["latent_datasets"]:
        if not 0.0 <= d["true_utility"] <= 1.0:
            raise WorldError(f"dataset {d['id']} utility outside [0, 1]")
    return world


def _by_id(world: dict) -> dict:
    return {d["id"]: d for d in world["latent_datasets"]}


# -- scoring --------------------------------------------------------------


def noiseless_score(world: dict, dataset_ids) -> float:
    """Hidden objective of a selection, before observation noise.

    Utility is additive; selecting past ``max_select`` costs a linear
    penalty per extra dataset (diminishing returns made blunt).
    """
    table = _by_id(world)
    ids = set(dataset_ids)
    unknown = ids - table.keys()
    if unknown:
        raise WorldError(f"selection references unknown datasets: {sorted(unknown)}")
    value = world["base_score"] + sum(table[i]["true_utility"] for i in ids)
    extra = max(0, len(ids) - world["max_select"])
    value -= world["interaction_penalty"]["penalty_per_extra"] * extra
    return min(1.0, max(0.0, value))


def score_noise(world: dict, dataset_ids) -> float:
    """Observation noise, keyed by the selection so repeats agree."""
    key = ",".join(sorted(set(dataset_ids)))
    rng = random.Random(f"{world['seed']}:noise:{key}")
    return rng.gauss(0.0, world["noise_sigma"])


def observed_score(world: dict, dataset_ids) -> float:
    return min(1.0, max(0.0, noiseless_score(world, dataset_ids) + score_noise(world, dataset_ids)))


def oracle_best(world: dict) -> tuple[list[str], float]:
    """Exhaustive argmax of the noiseless score over selections within the cap.

    Refuses worlds too large to enumerate; such worlds need a sampled
    bound instead, which this module does not provide.
    """
    ids = [d["id"] for d in world["latent_datasets"]]
    if len(ids) > ORACLE_MAX_DATASETS:
        raise WorldError(
            f"{len(ids)} datasets exceed the exhaustive-oracle limit of {ORACLE_MAX_DATASETS}"
        )
    best_sel: list[str] = []
    best = noiseless_score(world, [])
    for k in range(1, world["max_select"] + 1):
        for combo in combinations(ids, k):
            value = noiseless_score(world, combo)
            if value > best:
                best = value
                best_sel = list(combo)
    return best_sel, best


def dataset_hint(world: dict, dataset_id: str) -> float:
    """Noisy public estimate of one dataset's utility.

    Stands in for what a dataset card tells a reader: correlated with
    the hidden value but not equal to it.
    """
    d = _by_id(world)[dataset_id]
    rng = random.Random(f"{world['seed']}:hint:{dataset_id}")
    return d["true_utility"] + rng.gauss(0.0, world["hint_sigma"])


def dataset_manifest(world: dict, dataset_id: str) -> dict:
    """The manifest entry a discovery step reports for one dataset."""
    d = _by_id(world)[dataset_id]
    url = f"https://data.example/sets/{dataset_id}"
    hash_rng = random.Random(f"{world['seed']}:hash:{dataset_id}")
    return {
        "source_pointer": url,
        "description": f"Synthetic corpus {dataset_id} ({d['modality']})",
        "format": "jsonl",
        "schema_summary": "fields: text, label",
        "metadata": {
            "dataset_id": dataset_id,
            "hint": f"{dataset_hint(world, dataset_id):.6f}",
        },
        "scale": d["scale"],
        "modality": d["modality"],
        "task_relevance": "candidate training corpus",
        "screening_notes": "license ok; no benchmark overlap found",
        "provenance": {
            "url": url,
            "timestamp": SIM_RETRIEVED_AT,
            "content_hash": f"sha256:{hash_rng.getrandbits(256):064x}",
        },
    }


# -- request handling -----------------------------------------------------


def _read_manifest_rows(path: str, watermark: int) -> list[dict]:
    rows: list[dict] = []
    if not path:
        return rows
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError:
        return rows
    with fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rows.append(json.loads(line))
            if len(rows) >= watermark:
                break
    return rows


def _weighted_sample(rng: random.Random, items: list[str], weights: dict, k: int) -> list[str]:
    remaining = list(items)
    picked: list[str] = []
    while remaining and len(picked) < k:
        ws = [weights[i] for i in remaining]
        choice = rng.choices(remaining, weights=ws, k=1)[0]
        picked.append(choice)
        remaining.remove(choice)
    return picked


def _fragile_break(world: dict, v: str, selection: list[str]) -> Optional[str]:
    """Return the fragile dataset id that broke the build, if any.

    The roll is keyed by node id so replays reproduce it, but each new
    attempt gets a fresh chance; a lineage built on fragile sources
    keeps crashing until the search routes around it.
    """
    rate = world.get("fragile_fail_rate", 0.0)
    if rate <= 0.0:
        return None
    fragile = {d["id"] for d in world["latent_datasets"] if d.get("fragile")}
    hit = sorted(i for i in selection if i in fragile)
    if not hit:
        return None
    rng = random.Random(f"{world['seed']}:fragile:{v}")
    if rng.random() < rate:
        return hit[0]
    return None


def _fail_roll(world: dict, v: str, kind: str) -> bool:
    rate = world["red_fail_rate"] if kind == "red" else world["black_fail_rate"]
    if rate <= 0.0:
        return False
    rng = random.Random(f"{world['seed']}:fail:{kind}:{v}")
    return rng.random() < rate


def _best_base(context: list[dict]) -> Optional[tuple[list[str], float]]:
    """Best scored (selected_entries, score) pair visible in context.

    Looks at exploitation records directly and at the carry summaries
    discovery records relay, since grandparents are out of view.
    """
    best: Optional[tuple[list[str], float]] = None
    for record in context:
        candidates = []
        state = record.get("data_state") or {}
        if record.get("kind") == "black" and record.get("score") is not None:
            candidates.append((state.get("selected_entries", []), float(record["score"])))
        carry = (record.get("diagnostics") or {}).get("carry")
        if isinstance(carry, dict) and carry.get("score") is not None:
            candidates.append((carry.get("selected_entries", []), float(carry["score"])))
        for sel, score in candidates:
            if best is None or score > best[1]:
                best = (list(sel), score)
    return best


def _initial_selection(context: list[dict]) -> Optional[list[str]]:
    for record in context:
        if (record.get("diagnostics") or {}).get("initial") and record.get("score") is None:
            state = record.get("data_state") or {}
            return list(state.get("selected_entries", []))
    return None


def handle_red(world: dict, request: dict) -> dict:
    """Discover new datasets: a weighted sample from the undiscovered part.

    The sample shrinks as the universe empties, mimicking search that
    returns mostly known results once the obvious sources are in.
    Already-discovered datasets are never re-emitted.
    """
    rows = _read_manifest_rows(request.get("pool_manifest", ""), request.get("pool_watermark", 0))
    universe = [d["id"] for d in world["latent_datasets"]]
    known = set(universe)
    discovered = {row.get("metadata", {}).get("dataset_id") for row in rows} & known
    remaining = [i for i in universe if i not in discovered]
    cost = {
        "tool_calls": 3 + len(remaining) // 4,
        "input_tokens": 1200 + 50 * len(request.get("context", [])),
        "output_tokens": 300 + 40 * min(len(remaining), world["entries_per_red"]),
        "wall_seconds": round(0.5 + 0.02 * len(remaining), 3),
    }
    if _fail_roll(world, request["v"], "red"):
        return {
            "v": request["v"],
            "status": "fail",
            "payload": {"reason": "simulated search outage"},
            "cost": cost,
        }
    diagnostics = _carry_diagnostics(request)
    if not remaining:
        diagnostics["note"] = "universe exhausted; no new sources found"
        payload = {"entries": [], "diagnostics": diagnostics}
        return {"v": request["v"], "status": "ok", "payload": payload, "cost": cost}
    k = min(len(remaining), max(1, math.ceil(world["entries_per_red"] * len(remaining) / len(universe))))
    weights = {d["id"]: d["weight"] for d in world["latent_datasets"]}
    rng = random.Random(f"{world['seed']}:red:{request['seed']}")
    picked = _weighted_sample(rng, remaining, weights, k)
    payload = {"entries": [dataset_manifest(world, i) for i in picked], "diagnostics": diagnostics}
    return {"v": request["v"], "status": "ok", "payload": payload, "cost": cost}


def _carry_diagnostics(request: dict) -> dict:
    """Relay the best scored selection seen in context.

    A discovery node sits between exploitation generations; without
    this relay its children would start from scratch because they only
    see their parent and siblings.
    """
    carry = _best_base(request.get("context", []))
    if carry is None:
        return {}
    return {"carry": {"selected_entries": list(carry[0]), "score": carry[1]}}


def handle_black(world: dict, request: dict) -> dict:
    """Adapt the best visible selection by one local move, then score it.

    Moves rank candidates by their public hints only; the hidden
    utilities stay hidden, so the climb is informed but fallible.
    """
    rows = _read_manifest_rows(request.get("pool_manifest", ""), request.get("pool_watermark", 0))
    entry_to_ds: dict[str, str] = {}
    ds_to_entry: dict[str, str] = {}
    hints: dict[str, float] = {}
    for row in rows:
        entry_id = row.get("id")
        ds = row.get("metadata", {}).get("dataset_id")
        if not entry_id or not ds:
            continue
        entry_to_ds[entry_id] = ds
        ds_to_entry[ds] = entry_id
        try:
            hints[ds] = float(row.get("metadata", {}).get("hint", 0.0))
        except (TypeError, ValueError):
            hints[ds] = 0.0
    context = request.get("context", [])
    cost = {
        "tool_calls": 4,
        "input_tokens": 1000 + 80 * len(context),
        "output_tokens": 220,
        "wall_seconds": round(0.8 + 0.005 * len(rows), 3),
    }
    if _fail_roll(world, request["v"], "black"):
        return {
            "v": request["v"],
            "status": "fail",
            "payload": {"reason": "simulated pipeline error"},
            "cost": cost,
        }

    initial = _initial_selection(context)
    base = _best_base(context)
    if initial is not None and base is None:
        # Baseline evaluation: score the given state verbatim.
        ds_ids = [entry_to_ds.get(e, e) for e in initial]
        try:
            raw = observed_score(world, ds_ids)
        except WorldError as exc:
            return _black_failure(request, cost, str(exc))
        return _black_ok(request, cost, list(initial), raw, move="baseline")

    base_entries = list(base[0]) if base is not None else []
    base_ds = [entry_to_ds[e] for e in base_entries if e in entry_to_ds]
    rng = random.Random(f"{world['seed']}:black:{request['seed']}")
    new_ds, move = _mutate(world, rng, base_ds, hints)
    broken = _fragile_break(world, request["v"], new_ds)
    if broken is not None:
        return _black_failure(request, cost, f"pipeline crash while materializing {broken}")
    selection = sorted(ds_to_entry[i] for i in new_ds if i in ds_to_entry)
    try:
        raw = observed_score(world, new_ds)
    except WorldError as exc:
        return _black_failure(request, cost, str(exc))
    return _black_ok(request, cost, selection, raw, move=move)


def _black_ok(request: dict, cost: dict, selection: list[str], raw: float, move: str) -> dict:
    state = {
        "state_id": f"state-{request['v']}",
        "selected_entries": selection,
        "recipe": [
            {"name": "concat_selected", "params": {"entries": len(selection)}},
            {"name": "build_loader", "params": {"batch_size": 32}},
        ],
        "loader_artifact": f"loader://{request['v']}",
    }
    payload = {"state": state, "raw_score": raw, "diagnostics": {"move": move}}
    return {"v": request["v"], "status": "ok", "payload": payload, "cost": cost}


def _black_failure(request: dict, cost: dict, reason: str) -> dict:
    return {"v": request["v"], "status": "fail", "payload": {"reason": reason}, "cost": cost}


def _mutate(
    world: dict, rng: random.Random, base: list[str], hints: dict
) -> tuple[list[str], str]:
    """One local move over dataset ids: add, swap, drop, or keep.

    Additions sample among the top-hinted outsiders rather than taking
    the argmax, so sibling nodes with different seeds explore different
    candidates instead of proposing identical states.
    """
    outsiders = sorted((i for i in hints if i not in base), key=lambda i: (-hints[i], i))
    can_add = bool(outsiders) and len(base) < world["max_select"]
    roll = rng.random()
    if can_add and (roll < 0.7 or not base):
        top = outsiders[:3]
        pick = rng.choices(top, weights=[5, 2, 1][: len(top)], k=1)[0]
        return sorted(base + [pick]), f"add:{pick}"
    if base and outsiders and roll < 0.9:
        weakest = min(base, key=lambda i: (hints.get(i, 0.0), i))
        top = outsiders[:3]
        pick = rng.choices(top, weights=[5, 2, 1][: len(top)], k=1)[0]
        if hints[pick] > hints.get(weakest, 0.0):
            return sorted([i for i in base if i != weakest] + [pick]), f"swap:{weakest}->{pick}"
        return sorted(base), "keep"
    if len(base) > 1:
        weakest = min(base, key=lambda i: (hints.get(i, 0.0), i))
        if hints.get(weakest, 0.0) < 0.0:
            return sorted(i for i in base if i != weakest), f"drop:{weakest}"
    return sorted(base), "keep"


def handle_request(world: dict, request: dict) -> dict:
    kind = request.get("kind")
    if kind == "red":
        return handle_red(world, request)
    if kind == "black":
        return handle_black(world, request)
    return {
        "v": request.get("v", ""),
        "status": "fail",
        "payload": {"reason": f"unsupported kind {kind!r}"},
        "cost": {"tool_calls": 0, "input_tokens": 0, "output_tokens": 0, "wall_seconds": 0.0},
    }


class InProcessSimClient:
    """Drop-in executor client that skips the subprocess round trip.

    Requests still pass through wire serialization and the shared
    response validator, so behavior matches the child-process path bit
    for bit while running orders of magnitude faster.
    """

    def __init__(self, world):
        self.world = world if isinstance(world, dict) else load_world(str(world))

    def run(self, request, timeout=None):
        from .executor import interpret_response

        try:
            wire = json.loads(request.to_wire())
            response = handle_request(self.world, wire)
        except Exception as exc:  # mirror a crashed child, never raise
            response = {
                "v": request.v,
                "status": "fail",
                "payload": {"reason": f"crash: {exc}"},
                "cost": {"tool_calls": 0, "input_tokens": 0, "output_tokens": 0, "wall_seconds": 0.0},
            }
        return interpret_response(request, response)


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="datatree-simenv", description="simulated executor speaking the wire protocol"
    )
    parser.add_argument("--world", required=True, help="path to a world JSON file")
    args = parser.parse_args(argv)
    world = load_world(args.world)
    line = sys.stdin.readline()
    if not line.strip():
        return 1
    request = json.loads(line)
    response = handle_request(world, request)
    sys.stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())