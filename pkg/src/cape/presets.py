"""Experiment presets: named expansions of a base session config into runs."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .prompt import load_variants
from .session import SessionConfig, SessionError

PRESET_VERSION = 1
FACTORS = ("stability", "temperature", "option-wording", "option-order", "instruction", "item-paraphrasing")
PRESETS = FACTORS + ("fewshot-ablation", "adversarial", "ordering", "alignment", "logical-consistency")
TEMPERATURES = (0.5, 1.0, 1.5)
FEWSHOT_KS = (1, 5, 10)


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    expansion: tuple[SessionConfig, ...]

    def __post_init__(self):
        if not self.expansion:
            raise SessionError(f"preset {self.name!r} expands to nothing")
        if self.name in FACTORS and self.name != "stability" and len(self.expansion) != 3:
            raise SessionError(f"factor preset {self.name!r} must expand to 3 runs")


def _tag(cfg: SessionConfig, name: str, suffix: str, **changes) -> SessionConfig:
    return replace(cfg, run_id=f"{cfg.run_id}-{suffix}", factor=name, **changes)


def expand_preset(name: str, base: SessionConfig, *, fewshot_ks=FEWSHOT_KS,
                  force_option: int = 2, stability_runs: int = 3) -> ExperimentPreset:
    """Configs for preset ``name``; each config is one run (seeds filled later).

    Factor presets give one run per level; stability gives ``stability_runs``
    repeats of the unmodified config.
    """
    if name not in PRESETS:
        raise SessionError(f"unknown preset {name!r} (known: {', '.join(PRESETS)})")
    if name == "stability":
        runs = [_tag(base, name, f"r{i}") for i in range(1, stability_runs + 1)]
    elif name == "temperature":
        runs = [_tag(base, name, f"t{t:g}", params=replace(base.params, temperature=t)) for t in TEMPERATURES]
    elif name == "item-paraphrasing":
        runs = [_tag(base, name, f"p{v}", paraphrase_version=v) for v in (1, 2, 3)]
    elif name in FACTORS:
        variants = load_variants(base.variants_file).factors.get(name, ())
        if len(variants) != 3:
            raise SessionError(f"variant file lists {len(variants)} variants for factor {name!r}, need 3")
        runs = [_tag(base, name, v, variant=v) for v in variants]
    elif name == "fewshot-ablation":
        runs = [_tag(base, name, f"k{k}", history_mode="few-shot", fewshot_k=k) for k in fewshot_ks]
    elif name == "adversarial":
        dep = replace(base, history_mode="context-dependent")
        runs = [_tag(dep, name, "baseline"), _tag(dep, name, f"forced{force_option}", adversarial=force_option)]
    elif name == "ordering":
        runs = [_tag(base, name, o, ordering=o) for o in ("canonical", "random", "trait-grouped", "cyclic-rotation")]
    else:
        runs = [_tag(base, name, "r1")]
    return ExperimentPreset(name, tuple(runs))
