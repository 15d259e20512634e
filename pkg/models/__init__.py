from models.bundle import (ModelBundle, ModelError, Task, TrainedModel,
                           accuracy, negative_mse)
from models.linear import builtin_linear_regression
from models.logistic import builtin_logistic_regression
from models.stumps import builtin_stump_ensemble

BUILTIN_BUNDLES = {
    "logistic_regression": builtin_logistic_regression,
    "stump_ensemble": builtin_stump_ensemble,
    "linear_regression": builtin_linear_regression,
}


def get_bundle(name, **params):
    """
    Rebuild a registered bundle from its name and parameters
    (as stored in model_config sections and saved configs).
    """
    try:
        factory = BUILTIN_BUNDLES[name]
    except KeyError:
        raise ModelError("unknown model {!r}; expected one of {}".format(
            name, sorted(BUILTIN_BUNDLES))) from None
    return factory(**params)
