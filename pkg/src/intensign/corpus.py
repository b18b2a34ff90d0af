"""Gloss/text/pose corpus handling: loading, validation, synthesis, vocabularies.

On-disk layout of a corpus directory:

    train.jsonl / dev.jsonl / test.jsonl   one record per line:
        {"id": str, "text": [str], "text_pos": [str]?, "gloss": [str],
         "frames": [[150 floats]]?}
    stats.json                              per-dimension mean/std (presence
                                            marks frames as already normalized)
    train.labels.tsv / ...                  optional per-token intensity labels

A freshly built corpus (synthetic or external) carries raw joint coordinates;
the Corpus constructor z-scores them with train-split statistics. Saving
writes the normalized values verbatim plus stats.json, so load(save(c)) is
bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from intensign.autodiff import seeded_rng

FRAME_DIM = 150
SPLITS = ("train", "dev", "test")

_MODIFIER_WORDS = {2: "very", 1: "slightly"}


class CorpusError(ValueError):
    """Malformed corpus data."""


@dataclass
class SampleInstance:
    """One aligned (transcript, gloss, pose) triple."""

    id: str
    text: list[str]
    gloss: list[str]
    text_pos: list[str] | None = None
    frames: np.ndarray | None = None  # (T, 150) float64
    gloss_labels: list[int] | None = None

    def validate(self) -> None:
        if not self.text or not self.gloss:
            raise CorpusError(f"instance {self.id}: text and gloss must be non-empty")
        if self.text_pos is not None and len(self.text_pos) != len(self.text):
            raise CorpusError(
                f"instance {self.id}: {len(self.text_pos)} POS tags for {len(self.text)} tokens")
        if self.frames is not None:
            if self.frames.ndim != 2 or self.frames.shape[1] != FRAME_DIM:
                raise CorpusError(
                    f"instance {self.id}: frame vectors must have {FRAME_DIM} entries, "
                    f"got shape {self.frames.shape}")
            if not np.all(np.isfinite(self.frames)):
                raise CorpusError(f"instance {self.id}: non-finite frame values")
        if self.gloss_labels is not None:
            if len(self.gloss_labels) != len(self.gloss):
                raise CorpusError(f"instance {self.id}: label count does not match gloss length")
            if any(l not in (0, 1, 2) for l in self.gloss_labels):
                raise CorpusError(f"instance {self.id}: labels must be 0, 1 or 2")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_frames(cls, frames: list[np.ndarray]) -> "NormStats":
        if not frames:
            return cls(np.zeros(FRAME_DIM), np.ones(FRAME_DIM))
        stacked = np.concatenate(frames, axis=0)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std[std == 0] = 1.0  # constant dimensions pass through unscaled
        return cls(mean, std)

    def normalize(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.mean) / self.std

    def denormalize(self, frames: np.ndarray) -> np.ndarray:
        return frames * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


class Corpus:
    """Train/dev/test splits with frames held in normalized space.

    Instances are treated as immutable after construction; sharing a Corpus
    across threads read-only is safe.
    """

    def __init__(self, train, dev, test, stats: NormStats | None = None):
        self.train = list(train)
        self.dev = list(dev)
        self.test = list(test)
        for inst in self.all_instances():
            inst.validate()
        ids = [i.id for i in self.all_instances()]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise CorpusError(f"duplicate instance ids across splits: {dupes[:5]}")
        if stats is None:
            stats = NormStats.from_frames([i.frames for i in self.train if i.frames is not None])
            for inst in self.all_instances():
                if inst.frames is not None:
                    inst.frames = stats.normalize(inst.frames)
        self.stats = stats

    def all_instances(self):
        return self.train + self.dev + self.test

    def split(self, name: str) -> list[SampleInstance]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def raw_frames(self, inst: SampleInstance) -> np.ndarray:
        """Frames in original units (inverse of the z-score applied on load)."""
        if inst.frames is None:
            raise CorpusError(f"instance {inst.id} has no frames")
        return self.stats.denormalize(inst.frames)


def _parse_record(line: str, path: Path, lineno: int) -> SampleInstance:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
    try:
        inst_id = str(rec["id"])
        frames = rec.get("frames")
        if frames is not None:
            bad = sorted({len(f) for f in frames} - {FRAME_DIM})
            if bad:
                raise CorpusError(
                    f"{path}:{lineno}: instance {inst_id}: frame vector lengths {bad} != {FRAME_DIM}")
        inst = SampleInstance(
            id=inst_id,
            text=list(rec["text"]),
            gloss=list(rec["gloss"]),
            text_pos=list(rec["text_pos"]) if rec.get("text_pos") is not None else None,
            frames=np.asarray(frames, dtype=np.float64) if frames is not None else None,
        )
    except KeyError as exc:
        raise CorpusError(f"{path}:{lineno}: missing field {exc}") from exc
    inst.validate()
    return inst


def _read_split(path: Path) -> list[SampleInstance]:
    if not path.exists():
        raise FileNotFoundError(f"missing corpus split file: {path}")
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                instances.append(_parse_record(line, path, lineno))
    return instances


def read_label_file(path) -> dict[str, dict[int, int]]:
    """Parse the (instance_id, gloss_index, label) TSV."""
    labels: dict[str, dict[int, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 3 tab-separated columns")
            inst_id, idx, label = parts
            if label not in ("0", "1", "2"):
                raise CorpusError(f"{path}:{lineno}: label must be 0, 1 or 2, got {label!r}")
            labels.setdefault(inst_id, {})[int(idx)] = int(label)
    return labels


def write_label_file(path, labels: dict[str, dict[int, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst_id in labels:
            for idx in sorted(labels[inst_id]):
                fh.write(f"{inst_id}\t{idx}\t{labels[inst_id][idx]}\n")


def attach_labels(instances: list[SampleInstance], labels: dict[str, dict[int, int]]) -> None:
    """Fill gloss_labels from a label map; unlisted tokens default to 0."""
    for inst in instances:
        per = labels.get(inst.id, {})
        inst.gloss_labels = [per.get(i, 0) for i in range(len(inst.gloss))]


def load_corpus(path) -> Corpus:
    """Load and validate a corpus directory; frames come back z-scored."""
    path = Path(path)
    splits = {name: _read_split(path / f"{name}.jsonl") for name in SPLITS}
    stats_file = path / "stats.json"
    stats = None
    if stats_file.exists():
        stats = NormStats.from_dict(json.loads(stats_file.read_text(encoding="utf-8")))
    for name in SPLITS:
        label_file = path / f"{name}.labels.tsv"
        if label_file.exists():
            attach_labels(splits[name], read_label_file(label_file))
    return Corpus(splits["train"], splits["dev"], splits["test"], stats=stats)


def save_corpus(corpus: Corpus, path) -> None:
    """Write JSONL splits, stats.json, and label TSVs for labeled splits."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        with open(path / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            for inst in corpus.split(name):
                rec = {"id": inst.id, "text": inst.text}
                if inst.text_pos is not None:
                    rec["text_pos"] = inst.text_pos
                rec["gloss"] = inst.gloss
                if inst.frames is not None:
                    rec["frames"] = [[float(v) for v in row] for row in inst.frames]
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        labeled = {i.id: dict(enumerate(i.gloss_labels))
                   for i in corpus.split(name) if i.gloss_labels is not None}
        if labeled:
            write_label_file(path / f"{name}.labels.tsv", labeled)
    (path / "stats.json").write_text(json.dumps(corpus.stats.to_dict()) + "\n", encoding="utf-8")


# --- POS-based sampling --------------------------------------------------------


def _is_modifier_tag(tag: str) -> bool:
    # covers UPOS (ADJ/ADV) and TIGER-style tags (ADJA/ADJD/ADV)
    t = tag.upper()
    return t.startswith("ADJ") or t.startswith("ADV")


def gloss_pos(inst: SampleInstance) -> list[str]:
    """Approximate gloss POS: inherit the tag of a case-insensitive text match."""
    if inst.text_pos is None:
        raise CorpusError(f"instance {inst.id}: text_pos required")
    lookup = {}
    for tok, tag in zip(inst.text, inst.text_pos):
        lookup.setdefault(tok.lower(), tag)
    return [lookup.get(g.lower(), "UNKNOWN") for g in inst.gloss]


def pos_filter_sample(instances: list[SampleInstance]) -> list[SampleInstance]:
    """Instances whose transcript has adjectives/adverbs but whose gloss has none."""
    selected = []
    for inst in instances:
        if inst.text_pos is None:
            raise CorpusError(f"instance {inst.id}: text_pos required for POS filtering")
        text_count = sum(_is_modifier_tag(t) for t in inst.text_pos)
        gloss_count = sum(_is_modifier_tag(t) for t in gloss_pos(inst))
        if text_count > 0 and gloss_count == 0:
            selected.append(inst)
    return selected


# --- vocabulary ------------------------------------------------------------------


class Vocabulary:
    """Token/index map with reserved padding, unknown, begin and end symbols."""

    PAD, UNK, BOS, EOS = 0, 1, 2, 3
    RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

    def __init__(self, tokens: list[str]):
        self._tokens = list(self.RESERVED) + list(tokens)
        self._index = {t: i for i, t in enumerate(self._tokens)}
        if len(self._index) != len(self._tokens):
            raise CorpusError("vocabulary tokens must be distinct")

    @classmethod
    def build(cls, sequences) -> "Vocabulary":
        seqs = list(sequences)
        if not seqs:
            raise CorpusError("cannot build a vocabulary from an empty collection")
        seen = sorted({tok for seq in seqs for tok in seq if tok not in cls.RESERVED})
        return cls(seen)

    def index(self, token: str) -> int:
        return self._index.get(token, self.UNK)

    def encode(self, tokens: list[str]) -> np.ndarray:
        return np.asarray([self.index(t) for t in tokens], dtype=np.int64)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def content_tokens(self) -> list[str]:
        return self._tokens[len(self.RESERVED):]

    def to_list(self) -> list[str]:
        return self.content_tokens()

    @classmethod
    def from_list(cls, tokens: list[str]) -> "Vocabulary":
        return cls(tokens)


# --- synthetic signer ---------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the deterministic synthetic corpus generator."""

    seed: int = 7
    vocab_size: int = 12
    instances: int = 625
    base_frames: int = 10
    duration_multiplier: float = 1.7
    low_duration_multiplier: float = 1.3
    amplitude_scale: float = 1.6
    low_amplitude_scale: float = 1.25
    hold_frames: int = 3
    low_hold_frames: int = 1
    repeat_high: bool = False
    min_tokens: int = 2
    max_tokens: int = 4
    p_high: float = 0.25
    p_low: float = 0.2
    train_fraction: float = 0.8
    dev_fraction: float = 0.1

    def validate(self) -> None:
        if self.instances <= 0 or self.vocab_size <= 0:
            raise CorpusError("instance count and vocab size must be positive")
        if self.base_frames < 4:
            raise CorpusError("base frame count must be at least 4")
        if self.duration_multiplier <= 1.0:
            raise CorpusError("intensity duration multiplier must exceed 1")


def render_gloss_pose(token_index: int, n_frames: int, *, amplitude: float = 1.0,
                      hold: int = 0, seed: int = 0) -> np.ndarray:
    """Deterministic smooth trajectory for one gloss: per-joint sinusoid sums.

    The first `hold` frames repeat the starting pose (delayed release); the
    remaining frames sweep the trajectory once. Amplitude scales the motion
    around each joint's rest offset, so peak deviation from the trajectory
    mean is proportional to `amplitude`.
    """
    if n_frames < 1:
        raise CorpusError("n_frames must be at least 1")
    rng = seeded_rng(seed, "gloss-trajectory", token_index)
    offset = rng.normal(0.0, 0.5, size=FRAME_DIM)
    a1 = rng.uniform(0.2, 1.0, size=FRAME_DIM)
    f1 = rng.uniform(0.5, 1.5, size=FRAME_DIM)
    p1 = rng.uniform(0.0, 2 * np.pi, size=FRAME_DIM)
    a2 = rng.uniform(0.1, 0.4, size=FRAME_DIM)
    f2 = rng.uniform(1.5, 3.0, size=FRAME_DIM)
    p2 = rng.uniform(0.0, 2 * np.pi, size=FRAME_DIM)

    hold = min(max(hold, 0), n_frames - 1)
    sweep = np.linspace(0.0, 1.0, n_frames - hold)
    tau = np.concatenate([np.zeros(hold), sweep])[:, None]
    motion = a1 * np.sin(2 * np.pi * f1 * tau + p1) + a2 * np.sin(2 * np.pi * f2 * tau + p2)
    return offset + amplitude * motion


def intensity_render_plan(config: SynthConfig, label: int) -> tuple[int, float, int]:
    """(frame count, amplitude, hold frames) for a gloss at a given label."""
    if label == 2:
        n = int(round(config.base_frames * config.duration_multiplier))
        return n, config.amplitude_scale, config.hold_frames
    if label == 1:
        n = int(round(config.base_frames * config.low_duration_multiplier))
        return n, config.low_amplitude_scale, config.low_hold_frames
    return config.base_frames, 1.0, 0


def _token_name(i: int) -> str:
    return f"G{i:02d}"


def _render_instance(config: SynthConfig, tokens: list[int], labels: list[int]) -> np.ndarray:
    parts = []
    for tok, lab in zip(tokens, labels):
        n, amp, hold = intensity_render_plan(config, lab)
        pose = render_gloss_pose(tok, n, amplitude=amp, hold=hold, seed=config.seed)
        parts.append(pose)
        if lab == 2 and config.repeat_high:
            parts.append(pose)
    return np.concatenate(parts, axis=0)


def synth_generate(config: SynthConfig) -> Corpus:
    """Deterministic synthetic corpus exhibiting intensified signing.

    High/low-intensity glosses render with longer duration, larger amplitude
    and an initial hold; transcripts carry the matching modifier words
    ("very", "slightly") with ADV tags.
    """
    config.validate()
    rng = seeded_rng(config.seed, "synth-instances")
    instances = []
    for i in range(config.instances):
        n_tokens = int(rng.integers(config.min_tokens, config.max_tokens + 1))
        tokens: list[int] = []
        while len(tokens) < n_tokens:
            cand = int(rng.integers(0, config.vocab_size))
            if not tokens or cand != tokens[-1]:
                tokens.append(cand)
        u = rng.random(n_tokens)
        labels = [2 if x < config.p_high else 1 if x < config.p_high + config.p_low else 0
                  for x in u]
        text: list[str] = []
        pos: list[str] = []
        for tok, lab in zip(tokens, labels):
            if lab in _MODIFIER_WORDS:
                text.append(_MODIFIER_WORDS[lab])
                pos.append("ADV")
            text.append(_token_name(tok).lower())
            pos.append("NOUN")
        instances.append(SampleInstance(
            id=f"synth-{i:04d}",
            text=text,
            text_pos=pos,
            gloss=[_token_name(t) for t in tokens],
            frames=_render_instance(config, tokens, labels),
            gloss_labels=labels,
        ))

    order = seeded_rng(config.seed, "synth-splits").permutation(len(instances))
    n_train = int(round(config.train_fraction * len(instances)))
    n_dev = int(round(config.dev_fraction * len(instances)))
    train = [instances[j] for j in order[:n_train]]
    dev = [instances[j] for j in order[n_train:n_train + n_dev]]
    test = [instances[j] for j in order[n_train + n_dev:]]
    return Corpus(train, dev, test)
