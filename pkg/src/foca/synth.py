"""Synthetic two-modality dataset with a label hierarchy.

Leaves of a label tree are the classes. The visual modality only sees the
leaf's parent (siblings share a prototype), the audio modality sees the
leaf itself but through heavier noise. Neither modality alone reaches
high accuracy; together they do.
"""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from .data import ManifestRecord, write_feature_file, write_manifest

# audio noise is this multiple of ``noise_sigma``
AUDIO_NOISE_FACTOR = 4.0
MOTIF_PERIOD = 16
SIBLING_WEIGHT = 1.5
LEAF_WEIGHT = 0.5


def leaf_labels(branching) -> list[tuple[int, ...]]:
    return list(itertools.product(*(range(b) for b in branching)))


def label_name(leaf: tuple[int, ...]) -> str:
    return "c" + "-".join(str(v) for v in leaf)


def _motifs(rng, count: int, period: int) -> np.ndarray:
    """``count`` mutually orthogonal Gaussian motifs of squared norm ``period``."""
    q, _ = np.linalg.qr(rng.standard_normal((period, count)))
    return q.T * np.sqrt(period)


def prototypes(branching, d_audio: int, d_visual: int, seed: int):
    """Return ``(leaves, audio_protos, visual_protos)``; visual rows are per leaf.

    Prototypes are short orthogonal motifs tiled to the feature length, so
    the same pattern repeats along the signal. Visual rows carry the
    parent's motif. Audio rows mix a motif shared by all leaves in the
    same sibling position with a weaker leaf-specific motif.
    """
    rng = np.random.default_rng(seed)
    leaves = leaf_labels(branching)
    parents = sorted({leaf[:-1] for leaf in leaves})
    n_sib = branching[-1]
    period = max(MOTIF_PERIOD, len(parents), n_sib + len(leaves))
    parent_motif = dict(zip(parents, _motifs(rng, len(parents), period)))
    audio_motifs = _motifs(rng, n_sib + len(leaves), period)
    sibling, own = audio_motifs[:n_sib], audio_motifs[n_sib:]
    audio = np.stack(
        [np.resize(SIBLING_WEIGHT * sibling[leaf[-1]] + LEAF_WEIGHT * own[i], d_audio) for i, leaf in enumerate(leaves)]
    )
    visual = np.stack([np.resize(parent_motif[leaf[:-1]], d_visual) for leaf in leaves])
    return leaves, audio, visual


def generate(
    n_per_class: int,
    tree_depth: int = 2,
    branching=(5, 2),
    d_audio: int = 32,
    d_visual: int = 32,
    noise_sigma: float = 0.5,
    seed: int = 0,
):
    """Sample features in memory.

    Returns ``(labels, audio, visual, class_names)`` with ``labels`` as
    integer indices into ``class_names``; rows are shuffled.
    """
    branching = tuple(int(b) for b in branching)
    if tree_depth != len(branching):
        raise ValueError(f"tree_depth={tree_depth} but {len(branching)} branching factors given")
    if any(b < 1 for b in branching) or branching[-1] < 2:
        raise ValueError("branching factors must be positive and the last level must split")
    if min(d_audio, d_visual) < 16:
        raise ValueError("feature dimensions must be at least 16")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")

    leaves, audio_proto, visual_proto = prototypes(branching, d_audio, d_visual, seed)
    rng = np.random.default_rng([seed, 1])
    labels = rng.permutation(np.repeat(np.arange(len(leaves)), n_per_class))
    audio = audio_proto[labels] + AUDIO_NOISE_FACTOR * noise_sigma * rng.standard_normal((len(labels), d_audio))
    visual = visual_proto[labels] + noise_sigma * rng.standard_normal((len(labels), d_visual))
    return labels, audio.astype(np.float32), visual.astype(np.float32), [label_name(l) for l in leaves]


def synth_dataset(out_dir, n_per_class: int, **kwargs) -> Path:
    """Write ``audio.fmx``, ``image.fmx`` and ``manifest.csv`` under ``out_dir``.

    Keyword arguments go to :func:`generate`. Returns the manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels, audio, visual, names = generate(n_per_class, **kwargs)
    write_feature_file(out / "audio.fmx", audio)
    write_feature_file(out / "image.fmx", visual)
    records = [
        ManifestRecord(f"s{i:06d}", names[lab], "audio.fmx", i, "image.fmx", i)
        for i, lab in enumerate(labels)
    ]
    write_manifest(out / "manifest.csv", records)
    return out / "manifest.csv"
