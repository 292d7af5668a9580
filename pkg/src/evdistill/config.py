"""Run configuration: a flat sectioned key-value file, schema-validated.

Every key has a typed default; unknown sections or keys are rejected by
name.  ``auto`` lets mode-dependent defaults through (distill lr and
n_levels).  The fully resolved configuration is what run manifests record
and what checkpoint hashes are computed from.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from typing import Any

from .distill import DistillConfig
from .errors import ConfigError
from .events import GridMode
from .seeding import seed_stream
from .snn import LifParams, NetworkSpec, default_network
from .toydata import ToyConfig

_AUTO = object()

# (type, default); type "intpair" parses "a b"
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "run": {
        "seed": ("int", 0),
        "out_dir": ("str", "runs/out"),
        "threads": ("int", 0),
    },
    "data": {
        "source": ("choice:toy,nmnist,container", "toy"),
        "path": ("str", ""),
        "mode": ("choice:bin,int", "bin"),
        "t_bins": ("int", 6),
        "height": ("int", 32),
        "width": ("int", 32),
        "limit_per_class": ("int", 0),
        "test_limit_per_class": ("int", 0),
        "pad_to": ("int", 0),
        "resize_to": ("int", 0),
        "toy_samples_per_class": ("int", 500),
        "toy_test_per_class": ("int", 150),
        "toy_bar_width": ("int", 3),
        "toy_speed": ("int", 3),
        "toy_edge_margin": ("int", 2),
        "toy_offset_jitter": ("int", 2),
        "toy_keep_prob": ("float", 0.8),
        "toy_noise_events": ("int", 20),
        "toy_intensity": ("int", 1),
        "toy_distractor": ("bool", True),
    },
    "network": {
        "channels": ("intpair", (32, 64)),
        "kernel": ("int", 3),
        "tau": ("float", 0.5),
        "v_th": ("float", 1.0),
        "v_reset": ("float", 0.0),
        "surrogate_width": ("float", 1.0),
    },
    "teacher": {
        "epochs": ("int", 3),
        "lr": ("float", 0.05),
        "batch_size": ("int", 32),
        "momentum": ("float", 0.9),
    },
    "distill": {
        "ipc": ("int", 1),
        "iterations": ("int", 5000),
        "lr": ("float_or_auto", _AUTO),
        "n_levels": ("int_or_auto", _AUTO),
        "optimizer": ("choice:sgd,adaptive", "sgd"),
        "momentum": ("float", 0.5),
        "m_directions": ("int", 64),
        "alpha": ("float", 0.5),
        "beta": ("float", 0.5),
        "lambda_in": ("float", 1.0),
        "lambda_inter": ("float", 0.01),
        "real_batch": ("int", 64),
        "cf_bandwidth": ("float", 2.0),
        "temperature": ("float", 1.0),
        "bin_init_bias": ("float", 1.0),
        "anneal": ("choice:none,linear", "none"),
        "anneal_floor": ("float", 0.1),
        "feature_layer": ("int", -1),
        "densify_features": ("bool", True),
        "use_temporal_dft": ("bool", True),
        "per_term_root": ("bool", True),
        "match_kind": ("choice:amp-phase,spatial-cf,feature-mean", "amp-phase"),
        "augment": ("choice:none,flip,flip-tcrop", "none"),
        "resample_directions": ("bool", True),
        "cache_real_features": ("bool", True),
    },
    "eval": {
        "n_sets": ("int", 3),
        "n_models": ("int", 3),
        "student_epochs": ("int", 100),
        "student_lr": ("float", 0.05),
        "student_batch": ("int", 16),
        "student_momentum": ("float", 0.9),
    },
}


def _coerce(section: str, key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "intpair":
            parts = raw.split()
            if len(parts) != 2:
                raise ValueError(raw)
            return (int(parts[0]), int(parts[1]))
        if kind == "float_or_auto":
            return _AUTO if raw.lower() == "auto" else float(raw)
        if kind == "int_or_auto":
            return _AUTO if raw.lower() == "auto" else int(raw)
        if kind.startswith("choice:"):
            options = kind.split(":", 1)[1].split(",")
            if raw not in options:
                raise ConfigError(
                    f"[{section}] {key}: {raw!r} is not one of {options}"
                )
            return raw
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind}") from None
    raise ConfigError(f"[{section}] {key}: unknown schema type {kind}")


@dataclass
class RunConfig:
    """Resolved view of one configuration file."""

    values: dict[str, dict[str, Any]]

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def resolved(self) -> dict[str, dict[str, Any]]:
        """JSON-safe nested dict with auto defaults expanded (manifests)."""
        out = {}
        for section, keys in self.values.items():
            out[section] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in keys.items()}
        dc = self.distill_config()
        out["distill"]["lr"] = dc.lr
        out["distill"]["n_levels"] = dc.n_levels
        return out

    # ---- section builders -------------------------------------------------

    def grid_mode(self) -> GridMode:
        return GridMode(self["data"]["mode"])

    def toy_config(self) -> ToyConfig:
        d = self["data"]
        return ToyConfig(
            samples_per_class=d["toy_samples_per_class"],
            test_per_class=d["toy_test_per_class"],
            height=d["height"],
            width=d["width"],
            t_bins=d["t_bins"],
            bar_width=d["toy_bar_width"],
            speed=d["toy_speed"],
            edge_margin=d["toy_edge_margin"],
            offset_jitter=d["toy_offset_jitter"],
            keep_prob=d["toy_keep_prob"],
            noise_events=d["toy_noise_events"],
            intensity=d["toy_intensity"],
            distractor=d["toy_distractor"],
            mode=self.grid_mode(),
        )

    def network_spec(self, input_shape: tuple[int, int, int], class_count: int) -> NetworkSpec:
        n = self["network"]
        lif = LifParams(
            tau=n["tau"], v_th=n["v_th"], v_reset=n["v_reset"], surrogate_width=n["surrogate_width"]
        )
        return default_network(input_shape, class_count, channels=n["channels"], lif=lif)

    def distill_config(self) -> DistillConfig:
        d = self["distill"]
        master = self["run"]["seed"]
        return DistillConfig(
            ipc=d["ipc"],
            iterations=d["iterations"],
            mode=self.grid_mode(),
            lr=None if d["lr"] is _AUTO else d["lr"],
            n_levels=None if d["n_levels"] is _AUTO else d["n_levels"],
            optimizer=d["optimizer"],
            momentum=d["momentum"],
            m_directions=d["m_directions"],
            alpha=d["alpha"],
            beta=d["beta"],
            lambda_in=d["lambda_in"],
            lambda_inter=d["lambda_inter"],
            real_batch=d["real_batch"],
            cf_bandwidth=d["cf_bandwidth"],
            temperature=d["temperature"],
            bin_init_bias=d["bin_init_bias"],
            anneal=d["anneal"],
            anneal_floor=d["anneal_floor"],
            feature_layer=None if d["feature_layer"] < 0 else d["feature_layer"],
            densify_features=d["densify_features"],
            use_temporal_dft=d["use_temporal_dft"],
            per_term_root=d["per_term_root"],
            match_kind=d["match_kind"],
            augment=d["augment"],
            resample_directions=d["resample_directions"],
            cache_real_features=d["cache_real_features"],
            data_seed=seed_stream(master, "distill-data"),
            direction_seed=seed_stream(master, "directions"),
            init_seed=seed_stream(master, "synth-init"),
        )


def load_config(path) -> RunConfig:
    """Parse and validate a config file; unknown keys are fatal, by name."""
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    unknown = []
    for section in parser.sections():
        if section not in SCHEMA:
            unknown.append(f"[{section}]")
            continue
        for key in parser[section]:
            if key not in SCHEMA[section]:
                unknown.append(f"[{section}] {key}")
    if unknown:
        raise ConfigError("unknown configuration keys: " + ", ".join(sorted(unknown)))
    values: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (kind, default) in keys.items():
            if parser.has_option(section, key):
                values[section][key] = _coerce(section, key, kind, parser[section][key])
            else:
                values[section][key] = default
    cfg = RunConfig(values)
    cfg.distill_config()  # surfaces mode/level conflicts at load time
    return cfg


def default_config() -> RunConfig:
    return RunConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})
