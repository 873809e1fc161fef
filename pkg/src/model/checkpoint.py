"""Self-describing model checkpoints: one float32 array per parameter plus JSON metadata."""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import torch

from src.corpus.queries import Vocab
from src.model.pawa import ModelConfig, PawaModel
from src.utils.errors import IoFailureError
from src.utils.log import get_logger

logger = get_logger(__name__)

CHECKPOINT_FORMAT = "semindex-pawa"
CHECKPOINT_VERSION = 1
META_KEY = "__meta__"


@dataclass
class CheckpointState:
    model: PawaModel
    vocab: Vocab
    m: int
    shape_hash: str
    seed: int
    history: List[float] = field(default_factory=list)


def save_checkpoint(state: CheckpointState, path: Union[str, Path]) -> None:
    arrays: Dict[str, np.ndarray] = {
        name: tensor.detach().cpu().numpy().astype("<f4")
        for name, tensor in state.model.state_dict().items()
    }
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.model.config.model_dump(),
        "vocab": state.vocab.to_list(),
        "m": state.m,
        "shape_hash": state.shape_hash,
        "seed": state.seed,
        "history": list(state.history),
    }
    arrays[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    try:
        with open(path, "wb") as f:
            np.savez(f, **arrays)
    except OSError as e:
        raise IoFailureError(f"cannot write checkpoint {path}: {e}")
    logger.info("Saved checkpoint (%d tensors, m=%d) to %s", len(arrays) - 1, state.m, path)


def _read_meta(archive: Any, path: Union[str, Path]) -> Dict[str, Any]:
    if META_KEY not in archive.files:
        raise IoFailureError(f"{path} has no checkpoint metadata")
    meta = json.loads(archive[META_KEY].tobytes().decode("utf-8"))
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise IoFailureError(f"{path} is not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
    return meta


def load_checkpoint(path: Union[str, Path]) -> CheckpointState:
    """Rebuilds the model in eval mode from a checkpoint written by save_checkpoint."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = _read_meta(archive, path)
            config = ModelConfig.model_validate(meta["config"])
            model = PawaModel(config)
            expected = model.state_dict()
            missing = set(expected) - set(archive.files)
            if missing:
                raise IoFailureError(f"{path} lacks parameters: {sorted(missing)}")
            loaded = {}
            for name, ref in expected.items():
                arr = archive[name]
                if tuple(arr.shape) != tuple(ref.shape):
                    raise IoFailureError(f"{path}: {name} has shape {arr.shape}, expected {tuple(ref.shape)}")
                loaded[name] = torch.from_numpy(arr.astype(np.float32)).to(ref.dtype)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise IoFailureError(f"cannot read checkpoint {path}: {e}")
    model.load_state_dict(loaded)
    model.eval()
    logger.info("Loaded checkpoint from %s (m=%d, seed=%d)", path, meta["m"], meta["seed"])
    return CheckpointState(
        model=model,
        vocab=Vocab(tuple(meta["vocab"])),
        m=int(meta["m"]),
        shape_hash=str(meta["shape_hash"]),
        seed=int(meta["seed"]),
        history=[float(x) for x in meta.get("history", [])],
    )
