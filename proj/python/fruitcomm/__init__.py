"""Fruit and tools communication workbench: data generation, training, message
effect analysis and conversation probes."""

import os as _os

_packaged = _os.path.join(_os.path.dirname(__file__), "data")
if "FRUITCOMM_DATA_DIR" not in _os.environ and _os.path.isdir(_packaged):
    _os.environ["FRUITCOMM_DATA_DIR"] = _packaged

from ._core import (
    AgentParameters,
    CategoryTable,
    ConfigError,
    DataError,
    GameSample,
    Instance,
    NumericError,
    ObjectKind,
    UtilityMatrices,
    analyze,
    best_tool,
    config_hash,
    config_text,
    default_table_path,
    derive_seed,
    gen_data,
    generate_split,
    load_agents,
    load_category_table,
    message_effect,
    play,
    probe,
    read_samples,
    train,
    utility,
)

__version__ = "0.1.0"
