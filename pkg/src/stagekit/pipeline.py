"""Stage 7: off-the-shelf pipelines — MPCA classification, DANN/DAN adaptation, DeepDTA.

Each pipeline consumes a frozen config plus a dataset, derives every random
stream from SOLVER.SEED, logs per-epoch metrics to OUTPUT_DIR/<run_id>/
metrics.csv, and serializes its fitted models, so reruns with an identical
config are byte-identical.
"""

import hashlib
import os
import time
from dataclasses import dataclass

import numpy as np

from . import interpret as interpret_stage
from .config import Config, dump_config
from .embed import ExtractorSpec, build_feature_extractor, mpca_fit, mpca_transform, save_mpca
from .evaluate import accuracy, concordance_index, roc_auc
from .loaddata import (
    Dataset,
    MultiDomainDataset,
    paired_domain_batches,
    shuffled_batches,
    split_three_way,
)
from .nnkernel import (
    GradReverse,
    LossSpec,
    Net,
    Optimizer,
    loss_value_and_grad,
    mmd_rbf,
    save_net,
)
from .predict import (
    HeadSpec,
    build_head,
    decision_function,
    fit_linear_classifier,
    save_classifier,
)
from .prepdata import fit_standardizer
from .utils import MetricRecord, log_metrics_csv, set_seed

_ADAPT_METHODS = ("dann", "dan_mmd", "none")

# Child-stream registry for the root seed: 0 is reserved for dataset
# generation (used by the CLI), 1 feeds training.
DATA_STREAM = 0
TRAIN_STREAM = 1


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainReport:
    """Everything a finished run reports."""

    records: list
    final: dict
    wall_time: float
    config_text: str


@dataclass
class DannConfig:
    """Adaptation settings for the domain-adaptation trainer."""

    method: str = "dann"
    gamma: float = 10.0
    lam_max: float = 1.0
    trade_off: float = 1.0
    bandwidths: tuple = (0.5, 1.0, 2.0, 4.0)

    def __post_init__(self):
        if self.method not in _ADAPT_METHODS:
            raise ValueError(f"adaptation method must be one of {_ADAPT_METHODS}, got {self.method!r}")

    @classmethod
    def from_config(cls, cfg: Config) -> "DannConfig":
        return cls(
            method=cfg.MODEL.ADAPT_METHOD,
            gamma=cfg.MODEL.ADAPT_GAMMA,
            lam_max=cfg.MODEL.ADAPT_LAMBDA_MAX,
            trade_off=cfg.MODEL.ADAPT_TRADE_OFF,
            bandwidths=tuple(cfg.MODEL.MMD_BANDWIDTHS),
        )


def lambda_schedule(progress: float, gamma: float = 10.0, lam_max: float = 1.0) -> float:
    """Reversal-strength ramp: lam_max * (2 / (1 + exp(-gamma p)) - 1).

    Zero at p = 0, monotone non-decreasing, approaching lam_max as p grows.
    """
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must be in [0, 1], got {progress}")
    return lam_max * (2.0 / (1.0 + np.exp(-gamma * progress)) - 1.0)


def make_run_id(cfg: Config) -> str:
    """Reproducible run name: seed plus the first 8 hex of the config digest."""
    digest = hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()[:8]
    return f"run-{cfg.SOLVER.SEED}-{digest}"


def prepare_run_dir(cfg: Config) -> str:
    """Create OUTPUT_DIR/<run_id>, clearing any metrics file from a prior run."""
    run_dir = os.path.join(cfg.OUTPUT_DIR, make_run_id(cfg))
    os.makedirs(run_dir, exist_ok=True)
    metrics = os.path.join(run_dir, "metrics.csv")
    if os.path.exists(metrics):
        os.remove(metrics)
    return run_dir


def trainer_loop(
    nets,
    make_batches,
    step_fn,
    optimizer: Optimizer | None,
    epochs: int,
    rng,
    evaluate_fn,
    run_id: str,
    metrics_path=None,
) -> list:
    """Seeded epoch loop shared by the neural pipelines.

    Per epoch: draw batches from a child stream, run ``step_fn(batch,
    progress)`` (forward/backward, returning named loss components including
    ``loss``), step the optimizer, then record per-epoch mean losses and
    whatever ``evaluate_fn()`` yields as (split, metric, value) tuples. With
    ``epochs == 0`` only the untrained evaluation is recorded, at epoch 0.

    Raises:
        TrainingDivergedError: a step produced a non-finite loss; the message
        names the epoch and batch index.
    """
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    records = []

    def log(epoch, split, metric, value):
        record = MetricRecord(run_id, epoch, split, metric, float(value))
        records.append(record)
        if metrics_path is not None:
            log_metrics_csv(metrics_path, record)

    if epochs == 0:
        for split, metric, value in evaluate_fn():
            log(0, split, metric, value)
        return records

    total_steps = None
    step = 0
    for epoch in range(1, epochs + 1):
        batches = list(make_batches(rng.child(epoch)))
        if total_steps is None:
            total_steps = max(epochs * len(batches), 1)
        sums: dict = {}
        for index, batch in enumerate(batches):
            parts = step_fn(batch, step / total_steps)
            for name, value in parts.items():
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite {name} at epoch {epoch} batch {index}"
                    )
                sums[name] = sums.get(name, 0.0) + float(value)
            if optimizer is not None:
                optimizer.step()
            step += 1
        for name in sums:
            log(epoch, "train", name, sums[name] / len(batches))
        for split, metric, value in evaluate_fn():
            log(epoch, split, metric, value)
    return records


def run_mpca_pipeline(dataset: Dataset, cfg: Config) -> TrainReport:
    """Split, standardize, fit MPCA, select features, classify, interpret.

    Logs train/test accuracy and test ROC-AUC, exports the top-weight map in
    CSV and PGM form, and serializes the MPCA model and classifier.
    """
    start = time.perf_counter()
    config_text = dump_config(cfg)
    run_id = make_run_id(cfg)
    run_dir = prepare_run_dir(cfg)
    metrics_path = os.path.join(run_dir, "metrics.csv")

    x = dataset.feature_array()
    y = np.asarray(dataset.labels)
    if not np.all(np.isin(np.unique(y), (0, 1))):
        raise ValueError("mpca pipeline requires binary 0/1 labels")

    rng = set_seed(cfg.SOLVER.SEED).child(TRAIN_STREAM)
    split = split_three_way(
        len(dataset),
        (cfg.DATASET.TRAIN_FRACTION, cfg.DATASET.VAL_FRACTION, cfg.DATASET.TEST_FRACTION),
        rng.child(0),
    )

    if cfg.DATASET.STANDARDIZE:
        scaler = fit_standardizer(x[split.train])
        x = scaler.transform(x)

    model = mpca_fit(x[split.train], cfg.MODEL.VAR_RATIO, cfg.MODEL.MAX_ITERS)
    n_features = min(cfg.MODEL.N_FEATURES, model.n_features)
    feats_train = mpca_transform(model, x[split.train], return_vector=True, n_features=n_features)
    feats_test = mpca_transform(model, x[split.test], return_vector=True, n_features=n_features)

    clf = fit_linear_classifier(
        cfg.MODEL.CLASSIFIER,
        feats_train,
        y[split.train],
        lam=cfg.MODEL.L2,
        epochs=cfg.SOLVER.MAX_EPOCHS,
        lr=cfg.SOLVER.BASE_LR,
        rng=rng.child(1),
    )

    scores = decision_function(clf, feats_test)
    pred_train = (decision_function(clf, feats_train) > 0).astype(np.int64)
    pred_test = (scores > 0).astype(np.int64)
    final = {
        "train_accuracy": accuracy(pred_train, y[split.train]),
        "test_accuracy": accuracy(pred_test, y[split.test]),
        "test_roc_auc": roc_auc(scores, y[split.test]),
    }
    epoch = cfg.SOLVER.MAX_EPOCHS
    records = [
        MetricRecord(run_id, epoch, "train", "accuracy", final["train_accuracy"]),
        MetricRecord(run_id, epoch, "test", "accuracy", final["test_accuracy"]),
        MetricRecord(run_id, epoch, "test", "roc_auc", final["test_roc_auc"]),
    ]
    for record in records:
        log_metrics_csv(metrics_path, record)

    weight_map = interpret_stage.weights_to_input_space(model, clf)
    top = interpret_stage.select_top_weight(weight_map.values, cfg.INTERPRET.TOP_K)
    top_map = interpret_stage.WeightMap(top, provenance=weight_map.provenance)
    interpret_stage.export_weight_map(top_map, os.path.join(run_dir, "top_weights.csv"), "csv")
    interpret_stage.export_weight_map(top_map, os.path.join(run_dir, "top_weights"), "pgm-slices")

    save_mpca(model, os.path.join(run_dir, "models", "mpca"))
    save_classifier(clf, os.path.join(run_dir, "models", "classifier"))

    return TrainReport(records, final, time.perf_counter() - start, config_text)


def _build_optimizer(cfg: Config, nets) -> Optimizer:
    kind = cfg.SOLVER.OPTIMIZER
    if kind == "adam":
        return Optimizer("adam", nets, lr=cfg.SOLVER.BASE_LR)
    return Optimizer("sgd", nets, lr=cfg.SOLVER.BASE_LR, momentum=cfg.SOLVER.MOMENTUM)


def run_dann_pipeline(md: MultiDomainDataset, cfg: Config) -> TrainReport:
    """Train a source classifier with optional adversarial or MMD alignment.

    The feature extractor and class head always train on labeled source
    batches; per batch the adaptation term is, by MODEL.ADAPT_METHOD:

    - ``dann``: a 2-way domain head behind gradient reversal with strength
      lambda(progress), on source+target features;
    - ``dan_mmd``: the RBF MMD between source and target feature batches;
    - ``none``: nothing (source-only baseline).

    Target labels are touched only by the per-epoch oracle evaluation.
    """
    start = time.perf_counter()
    config_text = dump_config(cfg)
    run_id = make_run_id(cfg)
    run_dir = prepare_run_dir(cfg)
    metrics_path = os.path.join(run_dir, "metrics.csv")
    adapt = DannConfig.from_config(cfg)

    rng = set_seed(cfg.SOLVER.SEED).child(TRAIN_STREAM)
    src_x = md.source.feature_array()
    src_y = np.asarray(md.source.labels, dtype=np.int64)
    tgt_x = md.target_feature_array()
    tgt_y = md.target_eval_labels()
    n_classes = int(src_y.max()) + 1

    split = split_three_way(
        len(md.source),
        (cfg.DATASET.TRAIN_FRACTION, cfg.DATASET.VAL_FRACTION, cfg.DATASET.TEST_FRACTION),
        rng.child(0),
    )
    train_source = Dataset(
        [src_x[i] for i in split.train], src_y[split.train], "source_train"
    )
    md_train = MultiDomainDataset(
        train_source,
        Dataset(list(tgt_x), np.zeros(len(tgt_x), dtype=np.int64), md.target_name),
    )

    feature_dim = cfg.MODEL.EXTRACT_DIM
    extractor = build_feature_extractor(
        ExtractorSpec(
            "small_vector_mlp",
            input_dim=int(src_x.shape[1]),
            hidden=tuple(cfg.MODEL.EXTRACT_HIDDEN),
            output_dim=feature_dim,
        ),
        rng.child(1),
    )
    class_head = build_head(HeadSpec("class_head", feature_dim, n_classes=n_classes), rng.child(2))
    nets = [extractor, class_head]
    domain_net = None
    if adapt.method == "dann":
        head = build_head(HeadSpec("domain_head", feature_dim), rng.child(3))
        domain_net = Net((feature_dim,), [GradReverse(0.0)] + head.layers)
        nets.append(domain_net)

    optimizer = _build_optimizer(cfg, nets)
    ce = LossSpec("softmax_cross_entropy")

    def make_batches(epoch_rng):
        return paired_domain_batches(md_train, cfg.SOLVER.TRAIN_BATCH_SIZE, epoch_rng)

    def step_fn(batch, progress):
        (xs, ys), xt = batch
        n_src = xs.shape[0]
        acts = extractor.forward(np.concatenate([xs, xt], axis=0))
        feats = acts.output
        class_acts = class_head.forward(feats[:n_src])
        class_loss, g_logits = loss_value_and_grad(ce, class_acts.output, ys)
        g_feats = np.zeros_like(feats)
        g_feats[:n_src] += class_head.backward(class_acts, g_logits)
        parts = {"class_loss": class_loss, "loss": class_loss}

        if adapt.method == "dann":
            domain_net.layers[0].lam = lambda_schedule(progress, adapt.gamma, adapt.lam_max)
            domain_acts = domain_net.forward(feats)
            domain_labels = np.concatenate(
                [np.zeros(n_src), np.ones(feats.shape[0] - n_src)]
            )
            domain_loss, g_domain = loss_value_and_grad(ce, domain_acts.output, domain_labels)
            g_feats += domain_net.backward(domain_acts, adapt.trade_off * g_domain)
            parts["domain_loss"] = domain_loss
            parts["loss"] = class_loss + adapt.trade_off * domain_loss
        elif adapt.method == "dan_mmd":
            mmd, g_src, g_tgt = mmd_rbf(feats[:n_src], feats[n_src:], adapt.bandwidths)
            g_feats[:n_src] += adapt.trade_off * g_src
            g_feats[n_src:] += adapt.trade_off * g_tgt
            parts["mmd"] = mmd
            parts["loss"] = class_loss + adapt.trade_off * mmd

        extractor.backward(acts, g_feats)
        return parts

    def classify(x):
        feats = extractor.forward(x).output
        return np.argmax(class_head.forward(feats).output, axis=1)

    def evaluate_fn():
        yield "val", "source_accuracy", accuracy(classify(src_x[split.val]), src_y[split.val])
        yield "test", "target_accuracy", accuracy(classify(tgt_x), tgt_y)

    records = trainer_loop(
        nets,
        make_batches,
        step_fn,
        optimizer,
        cfg.SOLVER.MAX_EPOCHS,
        rng.child(4),
        evaluate_fn,
        run_id,
        metrics_path,
    )

    source_test = accuracy(classify(src_x[split.test]), src_y[split.test])
    target_acc = accuracy(classify(tgt_x), tgt_y)
    record = MetricRecord(run_id, cfg.SOLVER.MAX_EPOCHS, "test", "source_accuracy", source_test)
    records.append(record)
    log_metrics_csv(metrics_path, record)

    save_net(extractor, os.path.join(run_dir, "models", "extractor"))
    save_net(class_head, os.path.join(run_dir, "models", "class_head"))
    if domain_net is not None:
        save_net(domain_net, os.path.join(run_dir, "models", "domain_net"))

    final = {
        "target_accuracy": target_acc,
        "source_test_accuracy": source_test,
        "source_val_accuracy": accuracy(classify(src_x[split.val]), src_y[split.val]),
    }
    return TrainReport(records, final, time.perf_counter() - start, config_text)


def run_deepdta_pipeline(dataset: Dataset, cfg: Config) -> TrainReport:
    """Dual CNN encoders over drug/target sequences, MLP decoder, MSE training.

    The dataset is split by count (DATASET.N_TRAIN / N_TEST); the report
    carries test MSE and the concordance index.
    """
    start = time.perf_counter()
    config_text = dump_config(cfg)
    run_id = make_run_id(cfg)
    run_dir = prepare_run_dir(cfg)
    metrics_path = os.path.join(run_dir, "metrics.csv")

    n_train, n_test = cfg.DATASET.N_TRAIN, cfg.DATASET.N_TEST
    if len(dataset) < n_train + n_test:
        raise ValueError(
            f"dataset holds {len(dataset)} samples, need {n_train} + {n_test}"
        )
    drug_x = np.stack([np.asarray(f[0], dtype=np.float64) for f in dataset.features])
    target_x = np.stack([np.asarray(f[1], dtype=np.float64) for f in dataset.features])
    y = np.asarray(dataset.labels, dtype=np.float64)

    rng = set_seed(cfg.SOLVER.SEED).child(TRAIN_STREAM)
    perm = rng.child(0).permutation(len(dataset))
    train_idx = perm[:n_train]
    test_idx = perm[n_train : n_train + n_test]

    model_cfg = cfg.MODEL
    drug_net = build_feature_extractor(
        ExtractorSpec(
            "sequence_cnn",
            vocab_size=model_cfg.DRUG_VOCAB,
            max_len=cfg.DATASET.DRUG_MAX_LEN,
            embed_dim=model_cfg.DRUG_EMBED_DIM,
            filters=tuple(model_cfg.DRUG_FILTERS),
            kernels=tuple(model_cfg.DRUG_KERNELS),
            output_dim=model_cfg.DRUG_DIM,
        ),
        rng.child(1),
    )
    target_net = build_feature_extractor(
        ExtractorSpec(
            "sequence_cnn",
            vocab_size=model_cfg.TARGET_VOCAB,
            max_len=cfg.DATASET.TARGET_MAX_LEN,
            embed_dim=model_cfg.TARGET_EMBED_DIM,
            filters=tuple(model_cfg.TARGET_FILTERS),
            kernels=tuple(model_cfg.TARGET_KERNELS),
            output_dim=model_cfg.TARGET_DIM,
        ),
        rng.child(2),
    )
    decoder = build_head(
        HeadSpec(
            "mlp_decoder",
            feature_dim=model_cfg.DRUG_DIM + model_cfg.TARGET_DIM,
            hidden=tuple(model_cfg.DECODER_HIDDEN),
        ),
        rng.child(3),
    )
    nets = [drug_net, target_net, decoder]
    optimizer = _build_optimizer(cfg, nets)
    mse = LossSpec("mse")
    drug_dim = model_cfg.DRUG_DIM

    def make_batches(epoch_rng):
        return [
            train_idx[b]
            for b in shuffled_batches(n_train, cfg.SOLVER.TRAIN_BATCH_SIZE, epoch_rng)
        ]

    def step_fn(batch_idx, progress):
        drug_acts = drug_net.forward(drug_x[batch_idx])
        target_acts = target_net.forward(target_x[batch_idx])
        joint = np.concatenate([drug_acts.output, target_acts.output], axis=1)
        dec_acts = decoder.forward(joint)
        loss, grad = loss_value_and_grad(mse, dec_acts.output, y[batch_idx][:, None])
        g_joint = decoder.backward(dec_acts, grad)
        drug_net.backward(drug_acts, g_joint[:, :drug_dim])
        target_net.backward(target_acts, g_joint[:, drug_dim:])
        return {"loss": loss}

    def predict(idx):
        joint = np.concatenate(
            [drug_net.forward(drug_x[idx]).output, target_net.forward(target_x[idx]).output],
            axis=1,
        )
        return decoder.forward(joint).output[:, 0]

    def evaluate_fn():
        preds = predict(test_idx)
        truth = y[test_idx]
        yield "test", "mse", float(np.mean((preds - truth) ** 2))
        yield "test", "ci", concordance_index(preds, truth)

    records = trainer_loop(
        nets,
        make_batches,
        step_fn,
        optimizer,
        cfg.SOLVER.MAX_EPOCHS,
        rng.child(4),
        evaluate_fn,
        run_id,
        metrics_path,
    )

    save_net(drug_net, os.path.join(run_dir, "models", "drug_encoder"))
    save_net(target_net, os.path.join(run_dir, "models", "target_encoder"))
    save_net(decoder, os.path.join(run_dir, "models", "decoder"))

    preds = predict(test_idx)
    truth = y[test_idx]
    final = {
        "test_mse": float(np.mean((preds - truth) ** 2)),
        "test_ci": concordance_index(preds, truth),
    }
    return TrainReport(records, final, time.perf_counter() - start, config_text)
