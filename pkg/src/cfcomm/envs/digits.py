"""Two-agent digit comparison game.

Each agent privately sees one digit image ('0' or '1'). An episode has two
steps: in the first the agents may only talk (their answers are ignored and
reward is zero), in the second each answers whether the two hidden digits are
the same (action 1) or different (action 0). The team reward at the second
step is the number of correct answers, so returns live in {0, 1, 2}. Classes
are drawn uniformly per agent, making "same" and "different" equally likely.

Images come either from IDX files (the classic big-endian binary layout,
filtered to labels 0 and 1) or from a built-in synthetic glyph generator that
needs no downloads: ellipse rings for '0', vertical strokes for '1', with
random translation, stroke thickness and pixel noise.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, IdxParseError, JointObservabilityError, UsageError

IMAGE_SIDE = 28
OBS_DIM = IMAGE_SIDE * IMAGE_SIDE
IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

ANSWER_DIFFERENT = 0
ANSWER_SAME = 1


# ---------------------------------------------------------------------------
# IDX parsing / serialization
# ---------------------------------------------------------------------------

def _read_be32(buf: bytes, offset: int) -> int:
    if offset + 4 > len(buf):
        raise IdxParseError("truncated IDX header", offset)
    return struct.unpack_from(">i", buf, offset)[0]


def parse_idx_images(buf: bytes) -> np.ndarray:
    magic = _read_be32(buf, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxParseError(f"bad image magic 0x{magic:08x}, want 0x{IDX_IMAGE_MAGIC:08x}", 0)
    n = _read_be32(buf, 4)
    rows = _read_be32(buf, 8)
    cols = _read_be32(buf, 12)
    expected = 16 + n * rows * cols
    if len(buf) < expected:
        raise IdxParseError(f"image payload ends early, want {expected} bytes", len(buf))
    if len(buf) > expected:
        raise IdxParseError("trailing bytes after image payload", expected)
    pixels = np.frombuffer(buf, dtype=np.uint8, count=n * rows * cols, offset=16)
    return pixels.reshape(n, rows, cols)


def parse_idx_labels(buf: bytes) -> np.ndarray:
    magic = _read_be32(buf, 0)
    if magic != IDX_LABEL_MAGIC:
        raise IdxParseError(f"bad label magic 0x{magic:08x}, want 0x{IDX_LABEL_MAGIC:08x}", 0)
    n = _read_be32(buf, 4)
    expected = 8 + n
    if len(buf) < expected:
        raise IdxParseError(f"label payload ends early, want {expected} bytes", len(buf))
    if len(buf) > expected:
        raise IdxParseError("trailing bytes after label payload", expected)
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=8)


def serialize_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    return struct.pack(">iiii", IDX_IMAGE_MAGIC, n, rows, cols) + images.tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">ii", IDX_LABEL_MAGIC, labels.shape[0]) + labels.tobytes()


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class DigitDataset:
    """Binary digit images in [0, 1] with labels restricted to {0, 1}."""

    images: np.ndarray               # (N, 28, 28) float64
    labels: np.ndarray               # (N,) int64
    source: str = "unknown"
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.images.ndim != 3 or self.images.shape[1:] != (IMAGE_SIDE, IMAGE_SIDE):
            raise ConfigError(f"expected (N, {IMAGE_SIDE}, {IMAGE_SIDE}) images")
        if len(self.images) != len(self.labels):
            raise ConfigError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.images) == 0:
            raise ConfigError("dataset is empty")
        if not set(np.unique(self.labels)) <= {0, 1}:
            raise ConfigError("labels must be 0 or 1")

    def __len__(self):
        return len(self.images)

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def flat(self, index: int) -> np.ndarray:
        return self.images[index].reshape(OBS_DIM)

    def find(self, flat_image: np.ndarray) -> int:
        """Index of an exact pixel match, for state reconstruction."""
        if self._lookup is None:
            object.__setattr__(self, "_lookup", {
                img.tobytes(): i for i, img in enumerate(self.images)})
        key = np.asarray(flat_image, dtype=np.float64).reshape(
            IMAGE_SIDE, IMAGE_SIDE).tobytes()
        idx = self._lookup.get(key)
        if idx is None:
            raise JointObservabilityError("observation image is not in the dataset")
        return idx


def load_idx_digits(images_path: str, labels_path: str) -> DigitDataset:
    """Load an IDX image/label pair, keeping only digits 0 and 1."""
    with open(images_path, "rb") as fh:
        images = parse_idx_images(fh.read())
    with open(labels_path, "rb") as fh:
        labels = parse_idx_labels(fh.read())
    if len(images) != len(labels):
        raise ConfigError(
            f"image file has {len(images)} items, label file has {len(labels)}")
    keep = (labels == 0) | (labels == 1)
    if not keep.any():
        raise ConfigError("no 0/1 digits found in the IDX pair")
    return DigitDataset(images[keep].astype(np.float64) / 255.0,
                        labels[keep].astype(np.int64),
                        source=f"idx:{images_path}")


def synthetic_digits(n_per_class: int, rng: np.random.Generator,
                     noise: float = 0.05) -> DigitDataset:
    """Procedural stand-in digits: ellipse rings ('0') and vertical strokes ('1').

    Glyphs are drawn at full intensity on a black canvas, shifted by up to
    3 px in each direction, with stroke thickness between 1 and 3 px, then
    perturbed by clipped Gaussian pixel noise.
    """
    if n_per_class < 1:
        raise ConfigError("need at least one image per class")
    yy, xx = np.mgrid[0:IMAGE_SIDE, 0:IMAGE_SIDE].astype(np.float64)
    images, labels = [], []
    for label in (0, 1):
        for _ in range(n_per_class):
            dx, dy = rng.integers(-3, 4, size=2)
            cx, cy = IMAGE_SIDE / 2 - 0.5 + dx, IMAGE_SIDE / 2 - 0.5 + dy
            thickness = rng.uniform(1.0, 3.0)
            if label == 0:
                rx = rng.uniform(6.0, 8.5)
                ry = rng.uniform(8.0, 10.5)
                radial = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
                glyph = np.abs(radial - 1.0) * min(rx, ry) < thickness / 2
            else:
                half_h = rng.uniform(8.0, 10.5)
                glyph = (np.abs(xx - cx) < thickness / 2) & (np.abs(yy - cy) < half_h)
            img = glyph.astype(np.float64)
            img += rng.normal(0.0, noise, size=img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(label)
    return DigitDataset(np.stack(images), np.asarray(labels, dtype=np.int64),
                        source=f"synthetic:{n_per_class}")


# ---------------------------------------------------------------------------
# The game
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DigitGameState:
    image_indices: np.ndarray    # (2,) indices into the dataset
    labels: np.ndarray           # (2,)
    phase: int                   # 0 = talk, 1 = answer, 2 = finished


class DigitGame:
    n_agents = 2
    n_actions = 2               # 0 = "different", 1 = "same"
    obs_dim = OBS_DIM
    steps_per_episode = 2
    comm_bits = 1
    fact_names = ("digit 0", "digit 1")
    n_facts = 2
    action_train_steps = (1,)   # talk-step answers are ignored by training

    def __init__(self, dataset: DigitDataset):
        self.dataset = dataset

    def reset(self, rng: np.random.Generator):
        classes = rng.integers(0, 2, size=2)
        indices = np.array([
            rng.choice(self.dataset.class_indices(int(c))) for c in classes])
        state = DigitGameState(indices, self.dataset.labels[indices].copy(), phase=0)
        return state, self.observations(state)

    def observations(self, state: DigitGameState) -> np.ndarray:
        return np.stack([self.dataset.flat(int(i)) for i in state.image_indices])

    def step(self, state: DigitGameState, actions):
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (2,) or actions.min() < 0 or actions.max() >= self.n_actions:
            raise ConfigError(f"expected 2 binary answers, got {actions}")
        if state.phase == 0:
            new = DigitGameState(state.image_indices, state.labels, phase=1)
            return new, self.observations(new), 0.0
        if state.phase == 1:
            truth = ANSWER_SAME if state.labels[0] == state.labels[1] else ANSWER_DIFFERENT
            reward = float(np.sum(actions == truth))
            new = DigitGameState(state.image_indices, state.labels, phase=2)
            return new, self.observations(new), reward
        raise UsageError("episode is over; reset the game")

    def joint_state(self, obs_a: np.ndarray, obs_b: np.ndarray) -> DigitGameState:
        """Recover images and labels (both agents' views pin the state)."""
        ia = self.dataset.find(obs_a)
        ib = self.dataset.find(obs_b)
        return DigitGameState(np.array([ia, ib]),
                              self.dataset.labels[[ia, ib]].copy(), phase=0)

    def comm_fact(self, state: DigitGameState, agent: int) -> int:
        """The fact this agent alone can tell: its own digit's class."""
        return int(state.labels[agent])


class OracleAnswerer:
    """Perfect in-protocol play: send your label, answer from the reply.

    At the talk step it emits its own digit class as the message; at the
    answer step it says "same" exactly when the received bit matches its own
    class. Earns the maximum return of 2.0 on every episode.
    """

    def __init__(self, dataset: DigitDataset):
        self.dataset = dataset

    def _own_labels(self, obs) -> np.ndarray:
        rows = np.atleast_2d(obs)
        return np.array([self.dataset.labels[self.dataset.find(r)] for r in rows])

    def act(self, obs, inbox_enc, rng, greedy=False):
        own = self._own_labels(obs)
        received = np.argmax(np.atleast_2d(inbox_enc), axis=1)
        return np.where(received == own, ANSWER_SAME, ANSWER_DIFFERENT)

    def communicate(self, obs, rng, greedy=False):
        return self._own_labels(obs)
