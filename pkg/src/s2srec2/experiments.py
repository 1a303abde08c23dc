"""Train and assemble every comparable system on one set of splits."""
import dataclasses
import logging

from .baselines import LogisticBaseline, MeanPoolSetModel, MultiLabelSetModel, VanillaNN
from .evaluation import (
    OracleSystem,
    RandomSystem,
    StopGatedSystem,
    ThresholdSystem,
    build_eval_tasks,
    fixed_length_system,
)
from .model import S2SRec2
from .train import InferenceConfig, train

log = logging.getLogger(__name__)

SYSTEM_NAMES = (
    "s2srec2",
    "s2srec2_no_stop",
    "s2srec2_multilabel",
    "set_encoder_stop",
    "vanilla_nn_stop",
    "logistic",
    "oracle",
    "random",
)


def _threshold_tasks(val_recipes, train_recipes, seed):
    return build_eval_tasks(val_recipes or train_recipes, seed=seed + 1)


def train_multilabel(cls, model_config, train_recipes, val_recipes, train_config, **kw):
    model = cls(model_config, seed=train_config.seed, **kw)
    train(model, train_recipes, train_config)
    if hasattr(model, "finalize"):
        model.finalize(train_recipes)
    model.fit_threshold(_threshold_tasks(val_recipes, train_recipes, train_config.seed))
    return model


def ablation_variants(s2s_model, model_config, train_recipes, val_recipes, train_config, inference_config=None):
    """The four ablation systems: no stop head, multi-label head, mean-pool encoder, vanilla NN."""
    inference_config = inference_config or InferenceConfig()
    ml = train_multilabel(MultiLabelSetModel, model_config, train_recipes, val_recipes, train_config)
    mp = MeanPoolSetModel(model_config, seed=train_config.seed)
    train(mp, train_recipes, train_config)
    nn = VanillaNN(model_config, seed=train_config.seed)
    train(nn, train_recipes, train_config)
    return [
        fixed_length_system(s2s_model, "s2srec2_no_stop", inference_config),
        ThresholdSystem(ml, "s2srec2_multilabel"),
        StopGatedSystem(mp, "set_encoder_stop", inference_config),
        StopGatedSystem(nn, "vanilla_nn_stop", inference_config),
    ]


def build_systems(
    names,
    model_config,
    train_recipes,
    val_recipes,
    train_config,
    s2s_model=None,
    inference_config=None,
    baseline_config=None,
):
    """Instantiate (training where needed) the named systems, in the order given.

    ``baseline_config`` overrides ``train_config`` for every model other than
    the main one, which is reused from ``s2s_model`` when provided.
    """
    unknown = [n for n in names if n not in SYSTEM_NAMES]
    if unknown:
        raise KeyError(f"unknown system(s) {unknown}; valid names: {', '.join(SYSTEM_NAMES)}")
    inference_config = inference_config or InferenceConfig()
    bcfg = baseline_config or train_config
    needs_main = {"s2srec2", "s2srec2_no_stop"} & set(names)
    if needs_main and s2s_model is None:
        s2s_model = S2SRec2(model_config, seed=train_config.seed)
        train(s2s_model, train_recipes, train_config)
    systems = []
    for name in names:
        log.info("preparing system %s", name)
        if name == "s2srec2":
            systems.append(StopGatedSystem(s2s_model, name, inference_config))
        elif name == "s2srec2_no_stop":
            systems.append(fixed_length_system(s2s_model, name, inference_config))
        elif name == "s2srec2_multilabel":
            model = train_multilabel(MultiLabelSetModel, model_config, train_recipes, val_recipes, bcfg)
            systems.append(ThresholdSystem(model, name))
        elif name == "logistic":
            model = train_multilabel(LogisticBaseline, model_config, train_recipes, val_recipes, bcfg)
            systems.append(ThresholdSystem(model, name))
        elif name == "set_encoder_stop":
            model = MeanPoolSetModel(model_config, seed=bcfg.seed)
            train(model, train_recipes, bcfg)
            systems.append(StopGatedSystem(model, name, inference_config))
        elif name == "vanilla_nn_stop":
            model = VanillaNN(model_config, seed=bcfg.seed)
            train(model, train_recipes, bcfg)
            systems.append(StopGatedSystem(model, name, inference_config))
        elif name == "oracle":
            systems.append(OracleSystem())
        elif name == "random":
            systems.append(RandomSystem(model_config.vocab_size, seed=train_config.seed))
    return systems


def with_seed(train_config, seed):
    return dataclasses.replace(train_config, seed=seed)
