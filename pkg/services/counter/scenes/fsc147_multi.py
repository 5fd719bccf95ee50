"""
FSC-147-Multi: the multi-class subset of FSC-147 used for target-confusion
evaluation, plus the selection rule that defines it.
"""

from typing import Dict, List, Tuple

from errors import ConfigurationError
from models.sample_models import CountingSample

FSC147_MULTI: Dict[str, Tuple[int, ...]] = {
    "val": (
        216, 236, 243, 244, 252, 752, 913, 1930, 1999, 2303, 2305, 2306, 2826, 2830, 2837, 2868,
        2872, 2875, 2890, 3520, 3592, 3785, 3979, 3980, 4102, 4851, 5103, 5105, 5111, 5669, 6872,
    ),
    "test": (336, 343, 344, 681, 2143, 3114, 4495, 4885, 4920, 4921, 5379, 6732),
}


def fsc147_multi_indices(split: str) -> List[int]:
    if split not in FSC147_MULTI:
        raise ConfigurationError(f"FSC-147-Multi has no '{split}' split, expected one of {sorted(FSC147_MULTI)}")
    return list(FSC147_MULTI[split])


def is_multiclass(sample: CountingSample, min_ratio: float = 0.2) -> bool:
    """Non-target objects amount to at least `min_ratio` of the target objects"""
    if sample.count == 0 or not sample.nontarget_points:
        return False
    return len(sample.nontarget_points) >= min_ratio * sample.count
