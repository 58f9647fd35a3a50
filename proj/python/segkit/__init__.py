"""U-Net variants, labelling criteria and ensembles for lumbar spine MRI segmentation."""

from ._segkit import (
    FormatError,
    Network,
    ShapeError,
    average_arith,
    average_geo,
    ensemble_roster,
    extract_patches,
    gradient_suite,
    iou_mean,
    iou_per_class,
    label_map_map,
    label_map_th,
    named_ensemble_ids,
    named_topology_ids,
    pgm_read,
    pgm_write,
    plan_grid,
    reconstruct,
    shape_suite,
    synthetic_dataset,
    topology_json,
    train,
    tsr_read,
    tsr_write,
    tune_thresholds,
    wilcoxon_signed_rank,
    zscore_normalize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
