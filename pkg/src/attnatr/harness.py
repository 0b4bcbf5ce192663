"""Experiment protocols: multi-trial accuracy, noise robustness, reporting.

A protocol run trains one model per (variant, trial) with trial-specific
seeds, evaluates clean and optionally noise-perturbed top-1 accuracy, and
formats the results as fixed-width tables whose printed averages follow the
printed per-test values under round-half-even at two decimals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .backbone import ModelConfig, ResNet, build_resnet18, desk_config
from .checkpoint import dump_tensors, load_checkpoint, save_checkpoint
from .data import Dataset, SarImage, SynthConfig, synth_dataset
from .layers import SgdOptimizer, softmax_cross_entropy
from .rng import SplitMix64, derive_seed
from .tensor import Tensor, no_grad


class HarnessError(ValueError):
    pass


class TrainingDivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""


# ---------------------------------------------------------------------------
# input perturbation


@dataclass
class PerturbSpec:
    mean: float = 0.0
    scale: float = 3.0 / 255.0
    interpretation: str = "std_dev"  # std_dev | variance
    clamp: tuple = (0.0, 1.0)
    seed: int = 0

    def sigma(self) -> float:
        if self.scale <= 0:
            raise HarnessError(f"perturbation scale must be > 0, got {self.scale}")
        if self.interpretation == "std_dev":
            return self.scale
        if self.interpretation == "variance":
            return float(np.sqrt(self.scale))
        raise HarnessError(
            f"unknown interpretation {self.interpretation!r}, "
            "expected std_dev or variance")


def perturb_gaussian(image: SarImage, spec: PerturbSpec, rng: SplitMix64) -> SarImage:
    """Add seeded gaussian noise per pixel and clamp back into range."""
    noise = rng.gaussian(image.magnitude.shape, spec.mean, spec.sigma())
    lo, hi = spec.clamp
    return SarImage(np.clip(image.magnitude + noise, lo, hi),
                    image.label, image.source)


def perturb_dataset(dataset: Dataset, spec: PerturbSpec) -> Dataset:
    """Perturb every image with an independent stream derived per index."""
    images = [perturb_gaussian(img, spec, SplitMix64(derive_seed(spec.seed, "perturb", i)))
              for i, img in enumerate(dataset.images)]
    return Dataset(images, dataset.class_names, dataset.split)


# ---------------------------------------------------------------------------
# evaluation and training


def _batch_array(images) -> np.ndarray:
    return np.stack([img.magnitude for img in images])[:, None, :, :]


def top1_accuracy(model: ResNet, dataset: Dataset, batch_size: int = 32) -> float:
    """Fraction of samples whose argmax logit equals the label.

    Argmax ties break to the lowest class index; results are independent of
    batch size because eval-mode forward is per-sample deterministic.
    """
    if len(dataset) == 0:
        raise HarnessError("cannot evaluate on an empty dataset")
    hits = 0
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            chunk = dataset.images[start:start + batch_size]
            logits = model.forward(Tensor(_batch_array(chunk)), mode="eval")
            pred = np.argmax(logits.data, axis=1)
            hits += int(sum(p == img.label for p, img in zip(pred, chunk)))
    return hits / len(dataset)


def train_model(model: ResNet, dataset: Dataset, epochs: int, lr: float,
                momentum: float, batch_size: int, seed: int,
                context: str = "training") -> list:
    """SGD training with seeded shuffling; returns mean loss per epoch."""
    params = model.named_params()
    opt = SgdOptimizer(params, lr=lr, momentum=momentum)
    shuffle_rng = SplitMix64(derive_seed(seed, "shuffle"))
    labels = np.array([img.label for img in dataset.images])
    epoch_losses = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(dataset))
        total, batches = 0.0, 0
        for start in range(0, len(dataset), batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue  # batchnorm needs at least two samples
            batch = [dataset.images[i] for i in idx]
            logits = model.forward(Tensor(_batch_array(batch)), mode="train")
            loss = softmax_cross_entropy(logits, labels[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergenceError(
                    f"{context}: loss became non-finite ({value}) "
                    f"at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value
            batches += 1
        epoch_losses.append(total / max(1, batches))
    return epoch_losses


# ---------------------------------------------------------------------------
# reports


@dataclass
class TrialReport:
    tag: str
    trials: list  # per-trial accuracies as fractions
    baseline_tag: str | None = None

    @property
    def mean(self) -> float:
        return float(sum(self.trials) / len(self.trials))


def _pct(fraction) -> Decimal:
    return Decimal(repr(float(fraction) * 100.0)).quantize(
        Decimal("0.01"), rounding=ROUND_HALF_EVEN)


def format_report(reports: list, title: str = "", trials: int | None = None) -> str:
    """Render TrialReports as a fixed-width Table-I-style text table.

    Per-test cells are percentages rounded half-even to two decimals; the
    Average column is the mean of the printed per-test values under the same
    rounding; deltas compare printed averages against the baseline row.
    """
    if trials is None:
        trials = len(reports[0].trials) if reports else 3
    header = ["Model"] + [f"Test {i + 1}" for i in range(trials)] + ["Average"]

    printed_avg: dict[str, Decimal] = {}
    rows = []
    for rep in reports:
        cells = [_pct(v) for v in rep.trials]
        avg = (sum(cells) / len(cells)).quantize(
            Decimal("0.01"), rounding=ROUND_HALF_EVEN)
        printed_avg[rep.tag] = avg
        rows.append((rep, cells, avg))

    lines = []
    table = []
    for rep, cells, avg in rows:
        avg_text = f"{avg}%"
        if rep.baseline_tag is not None and rep.baseline_tag in printed_avg \
                and rep.baseline_tag != rep.tag:
            delta = avg - printed_avg[rep.baseline_tag]
            avg_text += f" ({'+' if delta >= 0 else '-'}{abs(delta)}%)"
        table.append([rep.tag] + [f"{c}%" for c in cells] + [avg_text])

    widths = [len(h) for h in header]
    for row in table:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    if title:
        lines.append(title)
    lines.append(" | ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("-+-".join("-" * w for w in widths))
    for row in table:
        lines.append(" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# config plumbing


def model_config_from(cfg: dict) -> ModelConfig:
    profile = cfgmod.get_str(cfg, "model.profile", choices=("desk", "full"))
    base = desk_config() if profile == "desk" else ModelConfig()
    return ModelConfig(
        in_channels=1,
        input_size=cfgmod.get_int(cfg, "data.image_size"),
        num_classes=cfgmod.get_int(cfg, "data.classes"),
        stage_widths=base.stage_widths,
        blocks_per_stage=base.blocks_per_stage,
        attention=cfgmod.get_str(cfg, "model.attention"),
        insertion=cfgmod.get_str(cfg, "model.insertion"),
        reduction=cfgmod.get_int(cfg, "model.reduction"),
        eca_gamma=cfgmod.get_int(cfg, "model.eca_gamma"),
        spatial_kernel=cfgmod.get_int(cfg, "model.spatial_kernel"),
    ).validate()


def synth_config_from(cfg: dict) -> SynthConfig:
    return SynthConfig(
        num_classes=cfgmod.get_int(cfg, "data.classes"),
        per_class_train=cfgmod.get_int(cfg, "data.per_class_train"),
        per_class_test=cfgmod.get_int(cfg, "data.per_class_test"),
        image_size=cfgmod.get_int(cfg, "data.image_size"),
        speckle_looks=cfgmod.get_int(cfg, "data.speckle_looks"),
        seed=cfgmod.get_int(cfg, "seed"),
    )


def perturb_spec_from(cfg: dict) -> PerturbSpec:
    return PerturbSpec(
        mean=cfgmod.get_float(cfg, "perturb.mean"),
        scale=cfgmod.get_float(cfg, "perturb.scale"),
        interpretation=cfgmod.get_str(cfg, "perturb.interpretation",
                                      choices=("std_dev", "variance")),
        seed=derive_seed(cfgmod.get_int(cfg, "seed"), "perturb"),
    )


def save_model(path, model: ResNet):
    """Write the checkpoint plus a flat-config sidecar describing the topology."""
    save_checkpoint(path, model.named_state())
    cfg = model.cfg
    sidecar = {
        "model.in_channels": str(cfg.in_channels),
        "model.input_size": str(cfg.input_size),
        "model.num_classes": str(cfg.num_classes),
        "model.stage_widths": ",".join(str(w) for w in cfg.stage_widths),
        "model.blocks_per_stage": str(cfg.blocks_per_stage),
        "model.attention": cfg.attention,
        "model.insertion": cfg.insertion,
        "model.reduction": str(cfg.reduction),
        "model.eca_gamma": str(cfg.eca_gamma),
        "model.spatial_kernel": str(cfg.spatial_kernel),
        "model.seed": str(model.seed),
    }
    Path(str(path) + ".cfg").write_text(cfgmod.format_config(sidecar))


def load_model(path) -> ResNet:
    """Rebuild a model from a checkpoint and its topology sidecar."""
    sidecar_path = Path(str(path) + ".cfg")
    if not sidecar_path.is_file():
        raise HarnessError(
            f"missing topology sidecar {sidecar_path}; checkpoints are saved "
            "with a .cfg companion describing the architecture")
    side = cfgmod.parse_config(sidecar_path.read_text())
    cfg = ModelConfig(
        in_channels=cfgmod.get_int(side, "model.in_channels"),
        input_size=cfgmod.get_int(side, "model.input_size"),
        num_classes=cfgmod.get_int(side, "model.num_classes"),
        stage_widths=tuple(int(w) for w in side["model.stage_widths"].split(",")),
        blocks_per_stage=cfgmod.get_int(side, "model.blocks_per_stage"),
        attention=cfgmod.get_str(side, "model.attention"),
        insertion=cfgmod.get_str(side, "model.insertion"),
        reduction=cfgmod.get_int(side, "model.reduction"),
        eca_gamma=cfgmod.get_int(side, "model.eca_gamma"),
        spatial_kernel=cfgmod.get_int(side, "model.spatial_kernel"),
    )
    model = build_resnet18(cfg, seed=cfgmod.get_int(side, "model.seed"))
    model.load_state(load_checkpoint(path))
    return model


# ---------------------------------------------------------------------------
# the protocol


@dataclass
class ProtocolResult:
    resolved: dict
    clean: list = field(default_factory=list)
    perturbed: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)  # (variant, trial) -> bytes

    def render(self) -> str:
        trials = int(self.resolved.get("protocol.trials", "3"))
        sigma = PerturbSpec(
            scale=float(self.resolved["perturb.scale"]),
            interpretation=self.resolved["perturb.interpretation"]).sigma()
        parts = ["== Resolved config ==",
                 cfgmod.format_config(self.resolved),
                 "== Top-1 accuracy ==",
                 format_report(self.clean, trials=trials)]
        if self.perturbed:
            parts += [f"== Top-1 accuracy under N({self.resolved['perturb.mean']}, "
                      f"sigma={sigma:.6f}) input perturbation ==",
                      format_report(self.perturbed, trials=trials)]
        return "\n".join(parts)


def run_protocol(cfg: dict | None, variants, trials: int,
                 with_perturbed: bool = True, out_dir=None) -> ProtocolResult:
    """Train and evaluate each attention variant over seeded trials.

    Trial t of any variant uses seed base_seed + t for both parameter
    initialization and shuffling; the datasets are fixed across trials.
    Perturbed rows reuse the clean-trained model of the same trial unless
    protocol.perturbed_models is "fresh", which trains a separate model
    from a derived seed for the noisy evaluation.
    """
    if trials < 1:
        raise HarnessError(f"need at least one trial, got {trials}")
    resolved = cfgmod.resolve(cfg)
    base_seed = cfgmod.get_int(resolved, "seed")
    synth_cfg = synth_config_from(resolved)
    train_ds = synth_dataset(synth_cfg, "train")
    test_ds = synth_dataset(synth_cfg, "test")
    spec = perturb_spec_from(resolved)
    epochs = cfgmod.get_int(resolved, "train.epochs")
    lr = cfgmod.get_float(resolved, "train.lr")
    momentum = cfgmod.get_float(resolved, "train.momentum")
    batch_size = cfgmod.get_int(resolved, "train.batch_size")

    baseline = "none" if "none" in variants else None
    fresh_perturbed = resolved.get("protocol.perturbed_models", "reuse") == "fresh"
    result = ProtocolResult(resolved={**resolved, "protocol.trials": str(trials)})
    for variant in variants:
        clean_accs, noisy_accs = [], []
        for trial in range(trials):
            seed = base_seed + trial
            model_cfg = model_config_from({**resolved, "model.attention": variant})
            model = build_resnet18(model_cfg, seed=seed)
            train_model(model, train_ds, epochs, lr, momentum, batch_size, seed,
                        context=f"variant {variant!r} trial {trial + 1}")
            clean_accs.append(top1_accuracy(model, test_ds, batch_size))
            if with_perturbed:
                noisy = perturb_dataset(
                    test_ds,
                    PerturbSpec(spec.mean, spec.scale, spec.interpretation,
                                seed=derive_seed(spec.seed, variant, trial)))
                noisy_model = model
                if fresh_perturbed:
                    alt_seed = derive_seed(seed, "perturbed-model")
                    noisy_model = build_resnet18(model_cfg, seed=alt_seed)
                    train_model(noisy_model, train_ds, epochs, lr, momentum,
                                batch_size, alt_seed,
                                context=f"variant {variant!r} trial {trial + 1} "
                                        "(perturbed-eval model)")
                noisy_accs.append(top1_accuracy(noisy_model, noisy, batch_size))
            result.checkpoints[(variant, trial)] = dump_tensors(model.named_state())
            if out_dir is not None:
                out = Path(out_dir)
                out.mkdir(parents=True, exist_ok=True)
                save_model(out / f"{variant}_t{trial + 1}.ckpt", model)
        tag_base = baseline if variant != baseline else None
        result.clean.append(TrialReport(variant, clean_accs, baseline_tag=tag_base))
        if with_perturbed:
            result.perturbed.append(TrialReport(variant, noisy_accs, baseline_tag=tag_base))
    return result
