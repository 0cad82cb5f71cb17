"""Plücker spectrogram transform and generalized relative transfer functions.

Joint localization of K simultaneous sources with M > K microphones from
K-frame multichannel STFT blocks.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, GrtfError
from .spectral import (MultichannelSignal, MultiFrameBlock, SpectrogramTensor, StftConfig,
                       extract_block, iter_blocks, stft)
from .plucker import (CombinationIndex, Grtf, Normalization, PluckerVector, combinations,
                      count_sources, count_sources_all, det_small, grtf, normalize,
                      numerical_rank, plucker_transform)
from .acoustics import (AtfSet, Direction, DirectionSet, MicArray, SceneConfig, add_noise,
                        freefield_atf, random_directions, simulate_scene,
                        simulate_spectrogram, synthetic_room_atf)
from .localization import (ErrorReport, GrtfDictionary, LocalizationResult, Localizer,
                           build_dictionary, localize, query_grtf, score)

__all__ = [
    "ConfigError", "DataError", "GrtfError",
    "MultichannelSignal", "MultiFrameBlock", "SpectrogramTensor", "StftConfig",
    "extract_block", "iter_blocks", "stft",
    "CombinationIndex", "Grtf", "Normalization", "PluckerVector", "combinations",
    "count_sources", "count_sources_all", "det_small", "grtf", "normalize",
    "numerical_rank", "plucker_transform",
    "AtfSet", "Direction", "DirectionSet", "MicArray", "SceneConfig", "add_noise",
    "freefield_atf", "random_directions", "simulate_scene", "simulate_spectrogram",
    "synthetic_room_atf",
    "ErrorReport", "GrtfDictionary", "LocalizationResult", "Localizer",
    "build_dictionary", "localize", "query_grtf", "score",
]
