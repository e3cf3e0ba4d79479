"""Seeded synthetic zero-shot task for the toy encoder.

Each image starts as smooth random texture and is then pushed (densely, over
all pixels) toward its class prompt until its zero-shot margin reaches a
per-image level. Margins are spread over a range so that a sparse attack flips
some images but not all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .encoders import EncoderHandle, class_prompt_features
from .objective import logits_from, margin_loss

TOY_CLASSES = ("cat", "dog", "bird", "boat", "airplane", "elephant", "bear", "stop sign")


@dataclass
class ToyTask:
    images: list[torch.Tensor]
    labels: list[int]
    class_names: list[str]
    class_features: torch.Tensor
    margins: list[float]

    @property
    def image_ids(self) -> list[str]:
        return [f"toy_{i:03d}" for i in range(len(self.images))]


def _texture(rng: np.random.Generator, size: int, channels: int) -> np.ndarray:
    coarse = rng.uniform(0.25, 0.75, size=(1, channels, 7, 7))
    up = F.interpolate(torch.from_numpy(coarse), size=(size, size), mode="bicubic",
                       align_corners=False)[0].numpy()
    return np.clip(up + rng.normal(0.0, 0.03, size=up.shape), 0.0, 1.0)


def make_toy_task(encoder: EncoderHandle, n_images: int = 64, image_size: int = 224,
                  channels: int = 3, class_names=TOY_CLASSES, seed: int = 0,
                  margin_range=(0.05, 1.5), max_steps: int = 2000,
                  step: float = 0.002) -> ToyTask:
    """Build ``n_images`` labelled images whose clean margins lie in ``margin_range``.

    Margins are in logit units of the encoder's zero-shot head.
    """
    rng = np.random.default_rng(seed)
    names = list(class_names)
    feats = class_prompt_features(names, encoder)
    targets = np.linspace(*margin_range, n_images)
    rng.shuffle(targets)
    images, labels, margins = [], [], []
    for i in range(n_images):
        k = i % len(names)
        x = torch.tensor(_texture(rng, image_size, channels), dtype=torch.float32)
        m = float(targets[i])
        for _ in range(max_steps):
            x.requires_grad_(True)
            v = encoder.encode_image(x)
            margin = margin_loss(logits_from(v, feats.to(x.dtype), encoder.temperature), k)
            if margin.item() >= m:
                break
            (g,) = torch.autograd.grad(margin, x)
            with torch.no_grad():
                x = (x + step * torch.sign(g)).clamp(0.0, 1.0)
        x = x.detach()
        with torch.no_grad():
            v = encoder.encode_image(x)
            final = float(margin_loss(logits_from(v, feats.to(x.dtype), encoder.temperature), k))
        images.append(x)
        labels.append(k)
        margins.append(final)
    return ToyTask(images, labels, names, feats, margins)
