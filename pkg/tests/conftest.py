import warnings

from diffcv.noise import StabilityWarning

# sweeps over the default eps grid intentionally reach the cautioned regime
warnings.simplefilter("ignore", StabilityWarning)
