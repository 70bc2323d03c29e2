"""FedCLASS simulator: new-class augmented self-distillation for federated
class-incremental learning."""

try:
    from . import _fedclass as _m
except ImportError:  # build-tree layout: extension sits next to the package
    import _fedclass as _m

import json as _json

softmax_temp = _m.softmax_temp
cross_entropy = _m.cross_entropy
kl_divergence = _m.kl_divergence
augment_scores = _m.augment_scores
theorem_oracle = _m.theorem_oracle
run_experiment = _m.run_experiment
default_config = _m.default_config


def run(config=None, seed=1, **overrides):
    """Run one seeded experiment and return the report as a dict."""
    cfg = dict(config or {})
    cfg.update(overrides)
    return _json.loads(_m.run_experiment({k: str(v) for k, v in cfg.items()}, int(seed)))
