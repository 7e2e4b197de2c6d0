"""Virtual experiments: confocal scans, gradiometry, widefield imaging, stitching."""

from .config import ScanConfig, apply_overrides, config_from_dict, load_config

__all__ = ["ScanConfig", "apply_overrides", "config_from_dict", "load_config"]
