"""Teacher-forced cross-entropy training of the PAWA model."""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
from pydantic import BaseModel, Field
from torch import Tensor

from src.corpus.queries import TrainingPair
from src.index.semtree import SemTree, semid_groups
from src.model.pawa import PAD_ID, ModelConfig, PawaModel
from src.utils.errors import DivergedLossError, EmptyBatchError, InvalidSemIdError, NonFiniteLossError
from src.utils.log import get_logger

logger = get_logger(__name__)


class TrainConfig(BaseModel):
    lr_encoder: float = Field(2e-4, gt=0)
    lr_decoder: float = Field(1e-4, gt=0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(200, ge=0)
    seed: int = 42
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    log_every: int = Field(10, ge=1)


@dataclass
class Batch:
    queries: Tensor  # (B, T) token ids, PAD_ID padded
    inputs: Tensor   # (B, L) decoder inputs l0..l_{L-1}, pad_token padded
    targets: Tensor  # (B, L) labels then END, pad_token padded


@dataclass
class TrainResult:
    model: PawaModel
    history: List[float] = field(default_factory=list)


def model_config_for(tree: SemTree, m: int, vocab_size: int, max_query_len: int = 64, **dims) -> ModelConfig:
    """Sizes the decoder for the longest truncated SemId the tree can emit."""
    longest = max(len(semid) for semid in semid_groups(tree, m))
    return ModelConfig(vocab_size=vocab_size, k=tree.k, max_semid_len=longest, max_query_len=max_query_len, **dims)


def collate(pairs: Sequence[TrainingPair], config: ModelConfig) -> Batch:
    if not pairs:
        raise EmptyBatchError("cannot collate an empty batch")
    t = max(1, max(len(p.query_tokens) for p in pairs))
    steps = max(len(p.target) for p in pairs)
    if steps > config.max_semid_len:
        raise InvalidSemIdError(f"a target needs {steps} decoding steps, model has {config.max_semid_len}")
    queries = torch.full((len(pairs), t), PAD_ID, dtype=torch.long)
    inputs = torch.full((len(pairs), steps), config.pad_token, dtype=torch.long)
    targets = torch.full((len(pairs), steps), config.pad_token, dtype=torch.long)
    for row, pair in enumerate(pairs):
        labels = pair.target.labels
        if any(label >= config.k for label in labels):
            raise InvalidSemIdError(f"target {pair.target} has a label >= k={config.k}")
        if pair.query_tokens:
            queries[row, : len(pair.query_tokens)] = torch.tensor(pair.query_tokens, dtype=torch.long)
        seq_in = pair.target.tokens
        seq_out = labels + (config.end_token,)
        inputs[row, : len(seq_in)] = torch.tensor(seq_in, dtype=torch.long)
        targets[row, : len(seq_out)] = torch.tensor(seq_out, dtype=torch.long)
    return Batch(queries=queries, inputs=inputs, targets=targets)


def batch_loss(model: PawaModel, pairs: Sequence[TrainingPair]) -> Tensor:
    """Mean over pairs of the teacher-forced negative sequence log-likelihood."""
    if not pairs:
        raise EmptyBatchError("batch_loss needs at least one pair")
    batch = collate(pairs, model.config)
    enc = model.encode(batch.queries)
    log_probs = torch.log_softmax(model.teacher_forced_logits(enc, batch.inputs), dim=-1)
    real = batch.targets != model.config.pad_token
    # padded targets pick a masked (-inf) entry; they are zeroed, not multiplied
    picked = log_probs.gather(-1, batch.targets.unsqueeze(-1)).squeeze(-1).masked_fill(~real, 0.0)
    nll = -picked.sum(dim=1)
    return nll.mean()


def gradients(model: PawaModel, pairs: Sequence[TrainingPair]) -> Dict[str, Tensor]:
    """Exact gradients of batch_loss (dropout off) for every named parameter."""
    model.eval()
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, pairs)
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"loss is {loss.item()}")
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    model.zero_grad(set_to_none=True)
    return grads


def parameter_groups(model: PawaModel) -> Dict[str, List[torch.nn.Parameter]]:
    """encoder / decoder (theta) / adaptor (theta') parameter groups."""
    groups: Dict[str, List[torch.nn.Parameter]] = {"encoder": [], "decoder": [], "adaptor": []}
    for name, p in model.named_parameters():
        if name.startswith(("token_embedding", "position_embedding", "encoder_layers")):
            groups["encoder"].append(p)
        elif name.startswith("adaptors"):
            groups["adaptor"].append(p)
        else:
            groups["decoder"].append(p)
    return groups


def make_optimizer(model: PawaModel, config: TrainConfig) -> torch.optim.Adam:
    groups = parameter_groups(model)
    return torch.optim.Adam(
        [
            {"params": groups["encoder"], "lr": config.lr_encoder},
            {"params": groups["decoder"], "lr": config.lr_decoder},
            {"params": groups["adaptor"], "lr": config.lr_decoder},
        ],
        betas=config.betas,
        eps=config.eps,
        foreach=True,
    )


def train(
    pairs: Sequence[TrainingPair],
    model_config: ModelConfig,
    train_config: TrainConfig,
    model: Optional[PawaModel] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Adam over shuffled mini-batches. Deterministic for a fixed seed on one thread."""
    if not pairs:
        raise EmptyBatchError("no training pairs")
    torch.manual_seed(train_config.seed)
    if model is None:
        model = PawaModel(model_config)
    history: List[float] = []
    if train_config.epochs == 0:
        model.eval()
        return TrainResult(model=model, history=history)

    optimizer = make_optimizer(model, train_config)
    order_rng = torch.Generator().manual_seed(train_config.seed)
    n = len(pairs)
    for epoch in range(1, train_config.epochs + 1):
        model.train()
        total = 0.0
        idx = torch.randperm(n, generator=order_rng)
        for start in range(0, n, train_config.batch_size):
            chunk = [pairs[int(i)] for i in idx[start: start + train_config.batch_size]]
            loss = batch_loss(model, chunk)
            if not torch.isfinite(loss):
                raise DivergedLossError(f"loss became {loss.item()} in epoch {epoch}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(chunk)
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise DivergedLossError(f"epoch {epoch} loss is {epoch_loss}")
        history.append(epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        if epoch == 1 or epoch % train_config.log_every == 0 or epoch == train_config.epochs:
            logger.info("Epoch %d/%d: loss %.4f", epoch, train_config.epochs, epoch_loss)
    model.eval()
    return TrainResult(model=model, history=history)
