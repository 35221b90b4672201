"""Explicit box-detection pose estimation: python surface over the C++ core."""

from _edpose import (
    EdPoseError,
    box_iou,
    eval_oks,
    focal,
    giou,
    hungarian,
    interaction_mask,
    synth_scene,
)

__all__ = [
    "EdPoseError",
    "box_iou",
    "eval_oks",
    "focal",
    "giou",
    "hungarian",
    "interaction_mask",
    "synth_scene",
]
