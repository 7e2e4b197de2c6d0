"""Analysis chain from fluorescence to calibrated strain."""
