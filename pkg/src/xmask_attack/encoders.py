"""Image-text encoders behind a single handle contract.

An encoder maps a ``C x H x W`` image in [0, 1] to a unit-norm feature and a
string to a unit-norm feature in the same space. Image encoding must be
differentiable with respect to pixel values.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import EncoderUnavailableError, InvalidInputError
from .objective import TextPools

PROMPT_TEMPLATE = "a photo of a {label}"


class EncoderHandle:
    """Base class; subclasses implement ``_image_features`` and ``_text_features``."""

    identity: str = "abstract"
    temperature: float = 0.07
    feature_dim: int = 0
    concurrent_safe: bool = True

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        """Unit-norm feature for a C x H x W image (or a batch N x C x H x W)."""
        batched = image.ndim == 4
        x = image if batched else image.unsqueeze(0)
        feats = F.normalize(self._image_features(x), dim=-1)
        return feats if batched else feats[0]

    def encode_text(self, texts):
        single = isinstance(texts, str)
        feats = F.normalize(self._text_features([texts] if single else list(texts)), dim=-1)
        return feats[0] if single else feats

    def _image_features(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def _text_features(self, texts: list[str]) -> torch.Tensor:
        raise NotImplementedError


def _stable_int(*parts) -> int:
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


class ToyEncoder(EncoderHandle):
    """Deterministic stand-in encoder for desk-scale work.

    Image path: patch average pool, seeded linear map, tanh, L2 norm.
    Text path: hashed bag of tokens, seeded linear map, L2 norm.
    """

    concurrent_safe = True

    def __init__(self, seed: int = 0, feature_dim: int = 64, patch_size: int = 8,
                 temperature: float = 0.07, hash_dim: int = 512, gain: float = 4.0):
        if feature_dim < 4:
            raise InvalidInputError("feature_dim must be >= 4")
        if patch_size < 1:
            raise InvalidInputError("patch_size must be >= 1")
        if not temperature > 0:
            raise InvalidInputError("temperature must be positive")
        self.seed = int(seed)
        self.feature_dim = int(feature_dim)
        self.patch_size = int(patch_size)
        self.temperature = float(temperature)
        self.hash_dim = int(hash_dim)
        self.gain = float(gain)
        self.identity = f"toy(seed={self.seed},dim={self.feature_dim},patch={self.patch_size})"
        self._maps: dict = {}
        self._lock = threading.Lock()
        g = torch.Generator().manual_seed(_stable_int("text", self.seed))
        self._text_map = torch.randn(self.hash_dim, self.feature_dim, generator=g, dtype=torch.float64)

    def image_map(self, n_in: int) -> torch.Tensor:
        with self._lock:
            w = self._maps.get(n_in)
            if w is None:
                g = torch.Generator().manual_seed(_stable_int("image", self.seed, n_in))
                w = torch.randn(n_in, self.feature_dim, generator=g, dtype=torch.float64)
                w /= n_in ** 0.5
                self._maps[n_in] = w
        return w

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        p = self.patch_size
        if x.shape[-1] % p or x.shape[-2] % p:
            raise InvalidInputError(
                f"patch_size {p} does not divide image sides {tuple(x.shape[-2:])}")
        # centred so a mid-gray image sits at the origin of the map
        return F.avg_pool2d(x - 0.5, p).flatten(1)

    def _image_features(self, x):
        z = self.pooled(x)
        w = self.image_map(z.shape[1]).to(z.dtype)
        return torch.tanh(self.gain * (z @ w))

    def _text_features(self, texts):
        bags = torch.zeros(len(texts), self.hash_dim, dtype=torch.float64)
        for i, t in enumerate(texts):
            for tok in tokenize(t):
                bags[i, _stable_int("tok", self.seed, tok) % self.hash_dim] += 1.0
        if not torch.all(bags.sum(1) > 0):
            raise InvalidInputError("text has no tokens")
        return (bags @ self._text_map).to(torch.get_default_dtype())


def toy_encoder(seed: int = 0, feature_dim: int = 64, patch_size: int = 8, **kw) -> ToyEncoder:
    return ToyEncoder(seed=seed, feature_dim=feature_dim, patch_size=patch_size, **kw)


@dataclass
class AttackSpecText:
    true_label: str | None = None
    target_label: str | None = None
    caption_drift_prompts: list[str] = field(default_factory=list)
    vqa_shift_prompts: list[str] = field(default_factory=list)
    source_prompts: list[str] = field(default_factory=list)


def label_prompt(label: str, template: str = PROMPT_TEMPLATE) -> str:
    return template.format(label=label)


def build_text_pools(spec: AttackSpecText, encoder: EncoderHandle,
                     template: str = PROMPT_TEMPLATE) -> TextPools:
    target = []
    if spec.target_label:
        target.append(label_prompt(spec.target_label, template))
    target += list(spec.caption_drift_prompts) + list(spec.vqa_shift_prompts)
    source = []
    if spec.true_label:
        source.append(label_prompt(spec.true_label, template))
    source += list(spec.source_prompts)
    if not target and not source:
        raise InvalidInputError("attack text spec is empty on both sides")
    if not target:
        raise InvalidInputError("target pool would be empty")
    if not source:
        raise InvalidInputError("source pool would be empty")
    with torch.no_grad():
        return TextPools(encoder.encode_text(target), encoder.encode_text(source),
                         target_prompts=target, source_prompts=source)


def class_prompt_features(class_names, encoder: EncoderHandle,
                          template: str = PROMPT_TEMPLATE) -> torch.Tensor:
    names = list(class_names)
    if not names:
        raise InvalidInputError("class list is empty")
    with torch.no_grad():
        return encoder.encode_text([label_prompt(n, template) for n in names])


# --- pretrained backends -------------------------------------------------------

_CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
_CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class TransformersCLIPEncoder(EncoderHandle):
    """Wraps a Hugging Face ``CLIPModel``; preprocessing is differentiable."""

    concurrent_safe = False

    def __init__(self, model, tokenizer=None, identity: str = "clip", device: str = "cpu"):
        self.model = model.eval().to(device)
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.device = device
        self.tokenizer = tokenizer
        cfg = model.config
        self.feature_dim = int(cfg.projection_dim)
        self.image_size = int(cfg.vision_config.image_size)
        self.vocab_size = int(cfg.text_config.vocab_size)
        self.max_len = int(cfg.text_config.max_position_embeddings)
        self.temperature = float(1.0 / model.logit_scale.exp().item())
        self.identity = identity
        self._mean = torch.tensor(_CLIP_MEAN).view(1, 3, 1, 1)
        self._std = torch.tensor(_CLIP_STD).view(1, 3, 1, 1)

    def _image_features(self, x):
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        x = x.to(self.device, torch.float32)
        if tuple(x.shape[-2:]) != (self.image_size, self.image_size):
            x = F.interpolate(x, size=(self.image_size, self.image_size),
                              mode="bilinear", align_corners=False)
        x = (x - self._mean.to(x.device)) / self._std.to(x.device)
        return _as_tensor(self.model.get_image_features(pixel_values=x))

    def _tokens(self, texts):
        if self.tokenizer is not None:
            enc = self.tokenizer(texts, padding=True, truncation=True, return_tensors="pt")
            return enc["input_ids"], enc["attention_mask"]
        # byte-level fallback for randomly initialised models without a vocabulary
        ids = [[b % (self.vocab_size - 1) for b in t.encode()][: self.max_len - 1] for t in texts]
        n = max(len(i) for i in ids) + 1
        eos = self.vocab_size - 1
        input_ids = torch.zeros(len(ids), n, dtype=torch.long)
        attn = torch.zeros(len(ids), n, dtype=torch.long)
        for r, seq in enumerate(ids):
            seq = seq + [eos]
            input_ids[r, : len(seq)] = torch.tensor(seq)
            attn[r, : len(seq)] = 1
        return input_ids, attn

    def _text_features(self, texts):
        ids, attn = self._tokens(texts)
        with torch.no_grad():
            out = self.model.get_text_features(input_ids=ids.to(self.device),
                                               attention_mask=attn.to(self.device))
        return _as_tensor(out).to(torch.get_default_dtype())


def _as_tensor(out):
    if isinstance(out, torch.Tensor):
        return out
    for attr in ("image_embeds", "text_embeds", "pooler_output"):
        v = getattr(out, attr, None)
        if v is not None:
            return v
    raise EncoderUnavailableError("model output carries no embedding tensor")


def external_encoder_adapter(model_id: str, runtime_config: dict | None = None) -> EncoderHandle:
    """Construct a pretrained encoder handle; every capability check happens here.

    ``runtime_config`` keys: ``backend`` ("transformers" or "open_clip"),
    ``device``, ``local_files_only``, and ``random_init`` (a CLIPConfig kwargs dict
    that builds an untrained model instead of loading weights).
    """
    rc = dict(runtime_config or {})
    backend = rc.get("backend", "transformers")
    device = rc.get("device", "cpu")
    if backend == "transformers":
        try:
            import transformers
        except ImportError as exc:
            raise EncoderUnavailableError("encoder backend not installed: transformers") from exc
        if rc.get("random_init") is not None:
            cfg = transformers.CLIPConfig(**rc["random_init"])
            torch.manual_seed(int(rc.get("seed", 0)))
            model = transformers.CLIPModel(cfg)
            tok = None
        else:
            try:
                model = transformers.CLIPModel.from_pretrained(
                    model_id, local_files_only=rc.get("local_files_only", False))
                tok = transformers.AutoTokenizer.from_pretrained(
                    model_id, local_files_only=rc.get("local_files_only", False))
            except (OSError, ValueError) as exc:
                raise EncoderUnavailableError(f"model unavailable: {model_id}: {exc}") from exc
        enc = TransformersCLIPEncoder(model, tok, identity=f"transformers:{model_id}", device=device)
    elif backend == "open_clip":
        try:
            import open_clip  # noqa: F401
        except ImportError as exc:
            raise EncoderUnavailableError("encoder backend not installed: open_clip") from exc
        raise EncoderUnavailableError("open_clip adapter requires a pretrained tag in model_id")
    else:
        raise EncoderUnavailableError(f"encoder backend not installed: {backend}")
    _probe_gradients(enc)
    return enc


def _probe_gradients(enc: EncoderHandle, size: int = 32) -> None:
    x = torch.full((3, size, size), 0.5, requires_grad=True)
    try:
        v = enc.encode_image(x)
        v.sum().backward()
    except RuntimeError as exc:
        raise EncoderUnavailableError(f"encoder lacks pixel-gradient support: {exc}") from exc
    if x.grad is None or not torch.isfinite(x.grad).all():
        raise EncoderUnavailableError("encoder lacks pixel-gradient support")
    if v.shape[-1] != enc.feature_dim:
        raise EncoderUnavailableError(
            f"shape mismatch: feature dim {v.shape[-1]} != declared {enc.feature_dim}")


def make_encoder(kind: str = "toy", **options) -> EncoderHandle:
    if kind == "toy":
        return toy_encoder(**options)
    model_id = options.pop("model_id", "")
    options.setdefault("backend", kind)
    return external_encoder_adapter(model_id, options)

