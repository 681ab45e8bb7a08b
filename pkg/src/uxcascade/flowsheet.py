"""Cascade flowsheet: physical parameters, stage topology and derived flows.

The cascade is a chain of mixer-settler stages numbered 1..n_stages. The
aqueous phase flows from stage n_stages down to stage 1 (raffinate leaves
stage 1), the organic phase flows from stage 1 up to stage n_stages (loaded
solvent leaves stage n_stages). Fresh solvent enters the mixer of stage 1,
the scrub acid stream enters the mixer of stage n_stages, and the uranium
feed enters the mixer of ``feed_stage``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = ["FlowSheet", "StageFlows", "load_flowsheet", "stage_flows",
           "reference_flowsheet", "reference_config_path"]


@dataclass(frozen=True)
class FlowSheet:
    """All physical, chemical and topology parameters of the cascade.

    Flow rates are L/h, volumes are L, concentrations are mol/L. The
    equilibrium constants carry the units implied by the mass-action
    expressions: (L/mol)^4 for uranium and (L/mol)^2 for acid.
    """

    n_stages: int
    feed_stage: int
    A_E: float              # scrub acid flow, enters stage n_stages
    O_E_nominal: float      # nominal solvent flow, enters stage 1
    A_F_nominal: float      # nominal feed flow
    U_feed: float
    H_feed: float
    H_scrub: float          # scrub acidity; scrub uranium is zero
    U_solvent_in: float
    H_solvent_in: float
    TBP_total: float        # total extractant, uniform across stages
    K_U: float
    K_H: float
    V_mixer_total: float    # aqueous + organic mixer volume, per stage
    V_settler_aq: float
    V_settler_og: float
    u_min: float            # bounds on the manipulated feed flow
    u_max: float
    du_min: float           # per-control-step rate bounds
    du_max: float
    raffinate_tol: float    # uranium tolerance on the stage-1 aqueous outlet

    def __post_init__(self):
        if not isinstance(self.n_stages, int) or self.n_stages < 2:
            raise ConfigError(f"n_stages must be an integer >= 2, got {self.n_stages!r}")
        if not isinstance(self.feed_stage, int) or not (1 <= self.feed_stage < self.n_stages):
            raise ConfigError(
                f"feed_stage must satisfy 1 <= feed_stage < n_stages, got {self.feed_stage!r}")
        strictly_positive = (
            "A_E", "O_E_nominal", "A_F_nominal", "TBP_total", "K_U", "K_H",
            "V_mixer_total", "V_settler_aq", "V_settler_og", "raffinate_tol",
        )
        for name in strictly_positive:
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ConfigError(f"{name} must be strictly positive, got {value!r}")
        # External inlet concentrations may legitimately be zero (pure scrub
        # water, clean solvent, uranium-free feed for startup studies).
        nonnegative = ("U_feed", "H_feed", "H_scrub", "U_solvent_in", "H_solvent_in")
        for name in nonnegative:
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ConfigError(f"{name} must be nonnegative, got {value!r}")
        if not (0.0 <= self.u_min < self.u_max):
            raise ConfigError(
                f"feed flow bounds must satisfy 0 <= u_min < u_max, "
                f"got [{self.u_min!r}, {self.u_max!r}]")
        if not (self.du_min < 0.0 < self.du_max):
            raise ConfigError(
                f"rate bounds must satisfy du_min < 0 < du_max, "
                f"got [{self.du_min!r}, {self.du_max!r}]")

    @property
    def n_states(self) -> int:
        return 6 * self.n_stages


@dataclass(frozen=True)
class StageFlows:
    """Per-stage throughputs, mixer sub-volumes and routing for given (A_F, O_E).

    ``aq_in_stage[i]`` / ``og_in_stage[i]`` give the 0-based index of the
    stage whose settler feeds stage i, or -1 for an external inlet (the
    scrub stream on the aqueous side of the last stage, fresh solvent on
    the organic side of the first stage). ``A_in[i]`` is the aqueous flow
    arriving from that neighbor; the feed stream additionally enters the
    mixer of ``feed_stage``.
    """

    n_stages: int
    feed_stage: int
    A_F: float
    O_E: float
    A: np.ndarray        # aqueous throughput per stage
    O: np.ndarray        # organic throughput per stage
    A_in: np.ndarray     # aqueous inflow from the upstream neighbor
    VM: np.ndarray       # mixer aqueous volume per stage
    WM: np.ndarray       # mixer organic volume per stage
    aq_in_stage: np.ndarray
    og_in_stage: np.ndarray

    def __post_init__(self):
        for arr in (self.A, self.O, self.A_in, self.VM, self.WM,
                    self.aq_in_stage, self.og_in_stage):
            arr.setflags(write=False)


def stage_flows(fs: FlowSheet, A_F: float, O_E: float) -> StageFlows:
    """Resolve countercurrent routing and derived volumes for given flows.

    The aqueous throughput is A_E + A_F in stages 1..feed_stage and A_E in
    the scrubbing stages above the feed; the organic throughput is O_E
    everywhere. Mixer sub-volumes split the constant total in proportion
    to the phase throughputs (stationary mixer volumes).
    """
    if A_F < 0.0:
        raise ValueError(f"A_F must be nonnegative, got {A_F!r}")
    if O_E <= 0.0:
        raise ValueError(f"O_E must be strictly positive, got {O_E!r}")
    n = fs.n_stages
    stage = np.arange(1, n + 1)
    A = np.where(stage <= fs.feed_stage, fs.A_E + A_F, fs.A_E)
    O = np.full(n, float(O_E))
    A_in = np.empty(n)
    A_in[:-1] = A[1:]
    A_in[-1] = fs.A_E
    VM = fs.V_mixer_total * A / (A + O)
    WM = fs.V_mixer_total - VM
    aq_in = np.arange(1, n + 1)
    aq_in[-1] = -1
    og_in = np.arange(-1, n - 1)
    return StageFlows(n_stages=n, feed_stage=fs.feed_stage, A_F=float(A_F),
                      O_E=float(O_E), A=A, O=O, A_in=A_in, VM=VM, WM=WM,
                      aq_in_stage=aq_in, og_in_stage=og_in)


_FIELD_NAMES = tuple(f.name for f in fields(FlowSheet))
_INT_FIELDS = ("n_stages", "feed_stage")


def load_flowsheet(path) -> FlowSheet:
    """Load and validate a flowsheet from a JSON configuration file.

    The file must contain a single object whose keys are exactly the
    FlowSheet field names; unknown keys are rejected.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read flowsheet config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    unknown = sorted(set(raw) - set(_FIELD_NAMES))
    if unknown:
        raise ConfigError(f"{path}: unknown configuration keys {unknown}")
    missing = sorted(set(_FIELD_NAMES) - set(raw))
    if missing:
        raise ConfigError(f"{path}: missing configuration keys {missing}")
    kwargs = {}
    for name in _FIELD_NAMES:
        value = raw[name]
        if name in _INT_FIELDS:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{path}: {name} must be an integer, got {value!r}")
            kwargs[name] = value
        else:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{path}: {name} must be a number, got {value!r}")
            kwargs[name] = float(value)
    return FlowSheet(**kwargs)


def flowsheet_to_dict(fs: FlowSheet) -> dict:
    """Plain-dict form of a flowsheet, suitable for JSON round-tripping."""
    return {name: getattr(fs, name) for name in _FIELD_NAMES}


def flowsheet_from_dict(d: dict) -> FlowSheet:
    unknown = sorted(set(d) - set(_FIELD_NAMES))
    if unknown:
        raise ConfigError(f"unknown flowsheet keys {unknown}")
    return FlowSheet(**{k: (int(v) if k in _INT_FIELDS else float(v)) for k, v in d.items()})


def reference_config_path() -> Path:
    """Path of the packaged reference flowsheet configuration."""
    return Path(resources.files("uxcascade").joinpath("data/reference_flowsheet.json"))


def reference_flowsheet() -> FlowSheet:
    """The shipped 16-stage reference flowsheet."""
    return load_flowsheet(reference_config_path())
