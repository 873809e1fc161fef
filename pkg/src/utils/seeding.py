import os
import random

import numpy as np
import torch


def set_seeds(seed: int, num_threads: int = 1) -> None:
    """Sets random seeds for reproducibility and pins torch to a fixed thread count."""
    os.environ["PYTHONHASHSEED"] = str(seed)
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.set_num_threads(num_threads)
