"""Scenario config files.

Configs are TOML.  One optional top-level key, ``name``, names the report
files (it defaults to the file's stem).  Everything else lives in five
sections, all optional, and every key has a default::

    name = "default"

    [world]
    population = 200            # people
    horizon_days = 30
    seed = 0                    # used when the CLI gives no --seed
    mobility = "RANDOM_MIXING"  # PAIRWISE_SCRIPTED | RANDOM_MIXING | CLUSTERED
    proximity_radius = 1.83     # metres
    initial_infected = 8
    contacts_per_day = 3.0
    transmission_prob = 0.0
    diagnosis_delay_days = 5.0
    self_report_fraction = 0.2
    mean_gathering_size = 4.0
    place_count = 12
    max_distance = 3.0
    group_size = 10             # CLUSTERED only
    within_group_prob = 0.8     # CLUSTERED only
    day_start_hour = 8
    day_end_hour = 20
    meetings = [[0, 1, 1008, 1.0]]    # PAIRWISE_SCRIPTED: a, b, slot, distance[, place]
    infections = [[1, 1008]]          # PAIRWISE_SCRIPTED: user, slot[, diagnosis slot[, kind]]

    [tokens]
    bit_length = 128
    refresh_interval = 3        # slots, or "horizon" for one token per user
    slot_duration = 300         # seconds
    exposure_window = 4032      # slots

    [variant]
    variants = ["CENTRAL", "POLLING", "POLLING_MIX", "PUBDB", "PMS"]
    report_mode = "OWN_TOKENS"  # or CONTACT_TOKENS
    noise_count = 100           # default: 100 for POLLING_NOISE, 0 otherwise
    mix_servers = 3
    mix_colluding = []
    batch_size = 50
    route_length = 2
    send_days = 15
    poll_interval_days = 1
    drain_days = 3
    scheme = "TOY_DETERMINISTIC"      # or REAL

    [adversary]
    sensor_count = 3
    sensor_places = [0, 4]      # default: the busiest places
    track_window = 3
    shuffles = 100
    ip_pool_size = 3

    [thresholds]
    yes_margin = 0.05
    no_min = 0.95
    almost_max = 0.5
    bounded_fraction = 0.1

Unknown sections or keys, wrong types and out-of-range values raise
:class:`~tracepriv.errors.ConfigError` carrying the file, line and field.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from ..adversary import Thresholds
from ..common import ReportMode
from ..cryptobox import Scheme
from ..errors import ConfigError, ParameterError
from ..protocols.base import TABLE_VARIANTS, MixConfig, Variant, VariantConfig
from ..simworld import Mobility, ScenarioConfig
from ..tokens import TokenParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

HORIZON = "horizon"


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _list_of(pred):
    return lambda v: isinstance(v, list) and all(pred(x) for x in v)


def _enum(cls):
    names = {m.value for m in cls}
    return lambda v: isinstance(v, str) and v in names


def _row(v):
    return isinstance(v, list) and all(_num(x) or isinstance(x, str) for x in v)


# section -> key -> (type check, description used in errors)
SCHEMA = {
    "world": {
        "population": (_int, "an integer"),
        "horizon_days": (_int, "an integer"),
        "seed": (_int, "an integer"),
        "mobility": (_enum(Mobility), "one of " + ", ".join(m.value for m in Mobility)),
        "proximity_radius": (_num, "a number"),
        "initial_infected": (_int, "an integer"),
        "contacts_per_day": (_num, "a number"),
        "transmission_prob": (_num, "a number"),
        "diagnosis_delay_days": (_num, "a number"),
        "self_report_fraction": (_num, "a number"),
        "mean_gathering_size": (_num, "a number"),
        "place_count": (_int, "an integer"),
        "max_distance": (_num, "a number"),
        "group_size": (_int, "an integer"),
        "within_group_prob": (_num, "a number"),
        "day_start_hour": (_int, "an integer"),
        "day_end_hour": (_int, "an integer"),
        "meetings": (_list_of(_row), "a list of [a, b, slot, distance] rows"),
        "infections": (_list_of(_row), "a list of [user, slot] rows"),
    },
    "tokens": {
        "bit_length": (_int, "an integer"),
        "refresh_interval": (lambda v: _int(v) or v == HORIZON, 'an integer or "horizon"'),
        "slot_duration": (_int, "an integer"),
        "exposure_window": (_int, "an integer"),
    },
    "variant": {
        "variants": (_list_of(_enum(Variant)), "a list of " + ", ".join(v.value for v in Variant)),
        "report_mode": (_enum(ReportMode), "OWN_TOKENS or CONTACT_TOKENS"),
        "noise_count": (_int, "an integer"),
        "mix_servers": (_int, "an integer"),
        "mix_colluding": (_list_of(_int), "a list of integers"),
        "batch_size": (_int, "an integer"),
        "route_length": (_int, "an integer"),
        "send_days": (_int, "an integer"),
        "poll_interval_days": (_int, "an integer"),
        "drain_days": (_int, "an integer"),
        "scheme": (_enum(Scheme), "TOY_DETERMINISTIC or REAL"),
    },
    "adversary": {
        "sensor_count": (_int, "an integer"),
        "sensor_places": (_list_of(_int), "a list of integers"),
        "track_window": (_int, "an integer"),
        "shuffles": (_int, "an integer"),
        "ip_pool_size": (_int, "an integer"),
    },
    "thresholds": {k: (_num, "a number") for k in ("yes_margin", "no_min", "almost_max", "bounded_fraction")},
}


@dataclass(frozen=True)
class AdversaryConfig:
    sensor_count: int = 3
    sensor_places: tuple | None = None
    track_window: int = 3
    shuffles: int = 100
    ip_pool_size: int = 3

    def __post_init__(self):
        if self.sensor_count < 0:
            raise ParameterError("sensor_count must be >= 0")
        for name in ("track_window", "shuffles", "ip_pool_size"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    """A parsed config: how to build the world for any seed, and what to run on it."""

    name: str
    world: ScenarioConfig
    variants: tuple
    variant: VariantConfig
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    static_tokens: bool = False
    source: str | None = None

    def scenario(self, seed: int | None = None) -> ScenarioConfig:
        return replace(self.world, seed=self.world.seed if seed is None else int(seed))

    def variant_config(self, variant: Variant) -> VariantConfig:
        return self.variant.with_variant(variant)

    def echo(self) -> dict:
        """The config with every default filled in; :func:`config_from_mapping` reads it back."""
        w, t, v, a, th = self.world, self.world.tokens, self.variant, self.adversary, self.thresholds
        world = {k: getattr(w, k) for k in SCHEMA["world"] if k not in ("meetings", "infections", "mobility")}
        world["mobility"] = w.mobility.value
        world["meetings"] = [list(m) for m in w.meetings]
        world["infections"] = [[x.value if hasattr(x, "value") else x for x in i] for i in w.infections]
        tokens = {k: getattr(t, k) for k in SCHEMA["tokens"]}
        if self.static_tokens:
            tokens["refresh_interval"] = HORIZON
        variant = {
            "variants": [x.value for x in self.variants],
            "report_mode": v.report_mode.value,
            "mix_servers": v.mix.server_count,
            "mix_colluding": sorted(v.mix.colluding),
            "batch_size": v.batch_size,
            "route_length": v.route_length,
            "poll_interval_days": v.poll_interval_days,
            "drain_days": v.drain_days,
            "scheme": v.scheme.value,
        }
        if v.noise_count is not None:
            variant["noise_count"] = v.noise_count
        if v.send_days is not None:
            variant["send_days"] = v.send_days
        adversary = {k: getattr(a, k) for k in SCHEMA["adversary"] if k != "sensor_places"}
        if a.sensor_places is not None:
            adversary["sensor_places"] = list(a.sensor_places)
        thresholds = {f.name: getattr(th, f.name) for f in fields(th)}
        return {"name": self.name, "world": world, "tokens": tokens, "variant": variant,
                "adversary": adversary, "thresholds": thresholds}


def _key_lines(text: str) -> dict:
    """``(section, key) -> line number`` for simple ``key = value`` lines."""
    out = {}
    section = ""
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if m := re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", s):
            section = m.group(1)
            out.setdefault((section, None), n)
        elif m := re.match(r'^([A-Za-z0-9_-]+|"[^"]*")\s*=', s):
            out.setdefault((section, m.group(1).strip('"')), n)
    return out


def config_from_mapping(data: dict, *, name: str = "config", path=None, lines: dict | None = None) -> RunConfig:
    lines = lines or {}

    def err(msg, section=None, key=None):
        where = key if section in (None, "") else (f"{section}.{key}" if key else section)
        line = lines.get((section or "", key)) if key else lines.get((section, None))
        return ConfigError(msg, field=where, line=line, path=path)

    for section, body in data.items():
        if section == "name":
            if not isinstance(body, str) or not body or re.search(r"[\\/\s]", body):
                raise err("name must be a non-empty string without spaces or slashes", None, "name")
            continue
        if section not in SCHEMA:
            raise err(f"unknown section [{section}]; expected one of {', '.join(SCHEMA)}", section)
        if not isinstance(body, dict):
            raise err(f"{section} must be a section", None, section)
        for key, value in body.items():
            spec = SCHEMA[section].get(key)
            if spec is None:
                raise err(f"unknown key '{key}' in [{section}]", section, key)
            check, desc = spec
            if not check(value):
                raise err(f"expected {desc}, got {value!r}", section, key)

    def section(s):
        return dict(data.get(s, {}))

    def build(s, fn):
        body = section(s)
        try:
            return fn(body)
        except ConfigError:
            raise
        except (ParameterError, ValueError, TypeError) as e:
            key = _blame(str(e), body, SCHEMA[s])
            raise err(str(e), s, key) from e

    world = section("world")
    tok = section("tokens")
    static = tok.get("refresh_interval") == HORIZON
    if static:
        spd = 86400 // tok.get("slot_duration", TokenParams.slot_duration)
        tok["refresh_interval"] = world.get("horizon_days", ScenarioConfig.horizon_days) * spd
    tokens = build("tokens", lambda _: TokenParams(**tok))

    def make_world(body):
        body = dict(body)
        if "mobility" in body:
            body["mobility"] = Mobility(body["mobility"])
        for k in ("meetings", "infections"):
            if k in body:
                body[k] = tuple(tuple(r) for r in body[k])
        return ScenarioConfig(tokens=tokens, **body)

    scenario = build("world", make_world)

    def make_variant(body):
        body = dict(body)
        variants = tuple(Variant(x) for x in body.pop("variants", [v.value for v in TABLE_VARIANTS]))
        if not variants:
            raise ParameterError("variants must list at least one variant")
        if len(set(variants)) != len(variants):
            raise ParameterError("variants lists a variant twice")
        mix = MixConfig(body.pop("mix_servers", 3), frozenset(body.pop("mix_colluding", ())))
        kw = {}
        if "report_mode" in body:
            kw["report_mode"] = ReportMode(body.pop("report_mode"))
        if "scheme" in body:
            kw["scheme"] = Scheme(body.pop("scheme"))
        return variants, VariantConfig(variants[0], mix=mix, **kw, **body)

    variants, vcfg = build("variant", make_variant)

    def make_adversary(body):
        if "sensor_places" in body:
            body["sensor_places"] = tuple(body["sensor_places"])
        return AdversaryConfig(**body)

    adversary = build("adversary", make_adversary)
    thresholds = build("thresholds", lambda body: Thresholds(**{k: float(v) for k, v in body.items()}))
    return RunConfig(data.get("name", name), scenario, variants, vcfg, adversary, thresholds, static,
                     str(path) if path is not None else None)


def _blame(message: str, body: dict, schema: dict) -> str | None:
    """Which key an error message is about, preferring keys the user wrote."""
    words = set(re.findall(r"[a-z_]+", message))
    for key in list(body) + list(schema):
        if key in words:
            return key
    return None


def parse_config(text: str, *, name: str = "config", path=None) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError(f"syntax error: {e}", line=int(m.group(1)) if m else None, path=path) from e
    return config_from_mapping(data, name=name, path=path, lines=_key_lines(text))


def packaged_config(name: str) -> Path | None:
    """A config shipped with the package (``default.cfg``, ``canonical.cfg``), if one has that name."""
    ref = resources.files("tracepriv") / "data" / Path(name).name
    return Path(str(ref)) if ref.is_file() else None


def resolve_config_path(path: str | Path) -> Path:
    """``path`` itself, else a packaged config of the same file name; raises FileNotFoundError."""
    p = Path(path)
    if p.is_file():
        return p
    if p.parent == Path(".") and (q := packaged_config(p.name)) is not None:
        return q
    raise FileNotFoundError(f"config file not found: {path}")


def load_config(path: str | Path) -> RunConfig:
    p = resolve_config_path(path)
    return parse_config(p.read_text(encoding="utf-8"), name=p.stem, path=p)
