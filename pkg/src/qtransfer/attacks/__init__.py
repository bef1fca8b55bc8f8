"""Adversarial example generators."""
from .base import AdversarialBatch, assemble, ce_input_gradient, distortions, sample_rng
from .boundary import boundary_attack, boundary_search, orthogonal_proposal
from .cw import cw_l2, logit_margin
from .fgsm import fgsm, fgsm_step
from .jsma import jsma, pixel_budget, saliency_map
from .params import (ATTACKS, AttackConfig, BaParams, CwParams, FgsmParams, JsmaParams, UapParams,
                     load_config, make_config, override, parse_config_text, preset_path)
from .uap import fooling_rate, project_linf, uap, universal_perturbation

_RUNNERS = {"fgsm": fgsm, "jsma": jsma, "uap": uap, "ba": boundary_attack, "cw": cw_l2}


def craft(model, x, labels, cfg: AttackConfig, indices=None, seed: int = 0) -> AdversarialBatch:
    """Run the attack named by ``cfg`` on ``model``."""
    return _RUNNERS[cfg.attack](model, x, labels, cfg.params, indices=indices, seed=seed)


__all__ = [
    "ATTACKS", "AdversarialBatch", "AttackConfig", "BaParams", "CwParams", "FgsmParams", "JsmaParams",
    "UapParams", "assemble", "boundary_attack", "boundary_search", "ce_input_gradient", "craft",
    "cw_l2", "distortions", "fgsm", "fgsm_step", "fooling_rate", "jsma", "load_config", "logit_margin",
    "make_config", "orthogonal_proposal", "override", "parse_config_text", "pixel_budget",
    "preset_path", "project_linf", "sample_rng", "saliency_map", "uap", "universal_perturbation",
]
