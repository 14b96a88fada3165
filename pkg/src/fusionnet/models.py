"""ModelSpec documents: build a standalone backbone or a FusionNet from JSON-able dicts."""
import numpy as np

from .backbones import Backbone, BackboneSpec
from .fusion import FusionNet, FusionSpec
from .tensor import Tensor

DESK_BRANCH = dict(channels=[16, 16, 32, 32, 32], pool_layers=[True, True, True, False, False])


def backbone_model_spec(kind="DGCNN", band="B76", **overrides):
    return {"type": "backbone", "band": band, "backbone": BackboneSpec(kind=kind, **overrides).to_dict()}


def fusion_model_spec(kind="DGCNN", head_widths=(512, 256, 128, 64, 2), reduction=4, seed=0, **branch):
    spec = FusionSpec(branch=BackboneSpec(kind=kind, with_head=False, **branch), reduction=reduction,
                      head_widths=head_widths, seed=seed)
    return {"type": "fusion", "fusion": spec.to_dict()}


def normalise_model_spec(model_spec):
    """Round-trip a ModelSpec through the dataclasses, rejecting unknown keys."""
    kind = model_spec.get("type")
    if kind == "backbone":
        extra = set(model_spec) - {"type", "band", "backbone"}
        if extra:
            raise ValueError(f"unknown ModelSpec keys: {sorted(extra)}")
        spec = BackboneSpec.from_dict(model_spec["backbone"])
        return {"type": "backbone", "band": model_spec.get("band", "B76").upper(), "backbone": spec.to_dict()}
    if kind == "fusion":
        extra = set(model_spec) - {"type", "fusion"}
        if extra:
            raise ValueError(f"unknown ModelSpec keys: {sorted(extra)}")
        return {"type": "fusion", "fusion": FusionSpec.from_dict(model_spec["fusion"]).to_dict()}
    raise ValueError(f"ModelSpec type must be 'backbone' or 'fusion', got {kind!r}")


def build_model(model_spec):
    model_spec = normalise_model_spec(model_spec)
    if model_spec["type"] == "backbone":
        return Backbone(BackboneSpec.from_dict(model_spec["backbone"]))
    return FusionNet(FusionSpec.from_dict(model_spec["fusion"]))


def model_bands(model_spec):
    if model_spec["type"] == "backbone":
        return (model_spec["band"].upper(),)
    return tuple(model_spec["fusion"]["bands"])


def logits(model, xs):
    """Forward a list of per-band ``B x 3 x H x W`` arrays/tensors to ``B x 2`` logits."""
    xs = [x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64)) for x in xs]
    if isinstance(model, FusionNet):
        return model(xs)
    if model.head is None:
        raise ValueError("standalone backbone has no classification head")
    return model(xs[0])[1]
