"""Problem domains and a small registry to build them from configuration."""
from ..errors import UnknownIdError
from .base import Domain, Stage
from .billiards import Billiards, BilliardsSpec
from .gaussian_mixture import GaussianMixture
from .pickplace import PickPlace, PickPlaceSpec
from .pusher import Pusher, PusherSpec

REGISTRY = {
    "gaussian_mixture": GaussianMixture,
    "billiards": Billiards,
    "pusher": Pusher,
    "pickplace": PickPlace,
}


def build(name, cfg=None):
    """Instantiate a domain by id with its (possibly empty) spec dictionary."""
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise UnknownIdError(f"unknown domain {name!r}; expected one of {sorted(REGISTRY)}") from None
    return cls.from_config(cfg or {})


__all__ = ["Domain", "Stage", "Billiards", "BilliardsSpec", "GaussianMixture", "PickPlace",
           "PickPlaceSpec", "Pusher", "PusherSpec", "REGISTRY", "build"]
