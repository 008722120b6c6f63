"""Input checks shared by the estimator and the command line."""

import numbers

from .corpus import Dialogue
from .exceptions import ConfigError, InputError


def check_dialogues(X, require_links=False):
    """Return ``X`` as a non-empty list of validated dialogues.

    A single :class:`Dialogue` is wrapped in a list.

    Raises
    ------
    InputError
        If ``X`` is empty or holds something other than dialogues.
    ConfigError
        If ``require_links`` is set and a dialogue is unannotated.
    """
    if isinstance(X, Dialogue):
        X = [X]
    try:
        X = list(X)
    except TypeError:
        raise InputError(f"expected a Dialogue or a list of them, got {type(X).__name__}") from None
    if not X:
        raise InputError("no dialogues given")
    for k, d in enumerate(X):
        if not isinstance(d, Dialogue):
            raise InputError(f"item {k} is {type(d).__name__}, not a Dialogue")
        d.validate()
        if require_links and not d.annotated:
            raise ConfigError(f"dialogue {k} has no reply-to annotation")
    return X


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value <= 0:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_non_negative(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not value >= 0:
        raise ConfigError(f"{name} must be a non-negative number, got {value!r}")
    return float(value)


def check_random_state(seed):
    """Seeds must be plain non-negative integers so runs are reproducible."""
    if seed is None:
        return 0
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral) or seed < 0:
        raise ConfigError(f"random_state must be a non-negative integer, got {seed!r}")
    return int(seed)
