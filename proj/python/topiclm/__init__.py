"""Topic-entity-aware language model workbench.

Thin wrappers over the compiled core: configs may be passed as dicts or JSON
strings; everything else is delegated to the extension module.
"""

import json as _json

try:
    from ._core import *  # noqa: F401,F403  (installed package layout)
    from . import _core as _impl
except ImportError:  # in-tree builds put _core next to the build directory
    from _core import *  # noqa: F401,F403
    import _core as _impl

__version__ = _impl.__version__


def _config_text(config):
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def default_config():
    """Full run configuration with every default filled in, as a dict."""
    return _json.loads(_impl.default_config())


def pretrain(config):
    return _impl.pretrain(_config_text(config))


def finetune(config, checkpoint):
    return _impl.finetune(_config_text(config), checkpoint)


def sweep(config, axis, seeds=3):
    return _impl.sweep(_config_text(config), axis, seeds)


def checkpoint_metadata(path):
    """Parsed metadata block of a checkpoint file."""
    return _json.loads(_impl.load_checkpoint(path)["metadata"])
