"""Experiment configuration and pipeline orchestration.

An experiment is described by an INI file (sections for paths, corpus
generation, features, and each model); the stage functions here read and
write only their declared artifacts under the configured directories, so
any stage can be rerun in isolation. Every stage drops a manifest (config
digest, seed, input hashes) into results/manifests so a report can state
exactly which configuration produced each number. Manifests carry no
timestamps: rerunning a stage with identical inputs is byte-identical.

`run_trend` is the same pipeline end to end but entirely in memory, used
for quick GMM-vs-DNN comparisons on a synthetic corpus without touching
disk.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autoencoder, decoder, dnn_hmm, gmm_hmm, lexicon_lm, plots, scoring
from .autoencoder import DaeTrainConfig
from .corpus import (
    CorpusManifest,
    SyntheticCorpusSpec,
    generate_corpus,
    load_corpus,
    load_utterance_frames,
    make_demo_vocabulary,
    synthesize_utterances,
)
from .dct_features import (
    DctConfig,
    FeatureSequence,
    MvnStats,
    assemble_frame_features,
    compute_mvn_stats,
    dct_frame_features,
    mvn,
    read_features,
    write_features,
)
from .decoder import DecodeConfig
from .dnn_hmm import DnnTrainConfig

MODALITIES = ("tongue", "lip")


class MissingArtifact(FileNotFoundError):
    """A stage input that an earlier stage should have produced is absent."""

    def __init__(self, path):
        super().__init__(f"missing input artifact: {path}")
        self.path = Path(path)


@dataclass
class ExperimentConfig:
    # paths
    corpus_dir: Path = Path("corpus")
    work_dir: Path = Path("work")
    results_dir: Path = Path("results")
    lexicon_file: Path | None = None      # default: <corpus_dir>/lexicon.txt
    lm_file: Path | None = None           # default: <corpus_dir>/lm.arpa
    # experiment
    seed: int = 0
    feature_kind: str = "dct"             # "dct" or "dae"
    k: int = 8                            # coefficients/codes per modality
    with_delta: bool = True
    # corpus generation
    num_words: int = 20
    num_phones: int = 12
    vocab_seed: int = 0
    num_train: int = 200
    num_test: int = 50
    frames_per_phone: int = 6
    image_width: int = 16
    image_height: int = 16
    noise_sigma: float = 0.25
    words_min: int = 2
    words_max: int = 5
    # feature extraction
    resize_to: int = 16
    # models (desk-scale defaults; full-scale values go in the INI)
    dae: DaeTrainConfig = field(default_factory=lambda: DaeTrainConfig(
        hidden_dims=(128, 64, 32), code_dim=8, rbm_epochs=2,
        finetune_epochs=12, minibatch=32, finetune_lr=0.3, train_fraction=0.5))
    dnn: DnnTrainConfig = field(default_factory=lambda: DnnTrainConfig(
        hidden_dims=(64, 64), train_hidden_layers=2, pretrain_epochs=2,
        epochs=12, minibatch=128, ce_lr=0.5))
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    states_per_phone: int = 3
    em_iters: int = 6
    gaussian_target: int = 0              # 0 means two Gaussians per state

    def __post_init__(self):
        if self.feature_kind not in ("dct", "dae"):
            raise ValueError(f"feature_kind must be dct or dae, got {self.feature_kind!r}")
        if self.k <= 0:
            raise ValueError("k must be positive")
        self.corpus_dir = Path(self.corpus_dir)
        self.work_dir = Path(self.work_dir)
        self.results_dir = Path(self.results_dir)

    @property
    def tag(self) -> str:
        return f"{self.feature_kind}_k{self.k}"

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_width, self.image_height)

    def lexicon_path(self) -> Path:
        return Path(self.lexicon_file) if self.lexicon_file else self.corpus_dir / "lexicon.txt"

    def lm_path(self) -> Path:
        return Path(self.lm_file) if self.lm_file else self.corpus_dir / "lm.arpa"

    def dct_config(self) -> DctConfig:
        return DctConfig(resize_to=self.resize_to, k_per_modality=self.k)

    def dae_config(self) -> DaeTrainConfig:
        return dataclasses.replace(self.dae, code_dim=self.k, seed=self.seed)

    def dnn_config(self) -> DnnTrainConfig:
        return dataclasses.replace(self.dnn, seed=self.seed)


# ---------------------------------------------------------------------------
# INI round trip
# ---------------------------------------------------------------------------

def _dims(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    return _config_from_parser(parser)


def _config_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    base = ExperimentConfig()
    paths = parser["paths"] if parser.has_section("paths") else {}
    exp = parser["experiment"] if parser.has_section("experiment") else {}
    corp = parser["corpus"] if parser.has_section("corpus") else {}
    feat = parser["features"] if parser.has_section("features") else {}
    dae_s = parser["dae"] if parser.has_section("dae") else {}
    gmm_s = parser["gmm"] if parser.has_section("gmm") else {}
    dnn_s = parser["dnn"] if parser.has_section("dnn") else {}
    dec_s = parser["decode"] if parser.has_section("decode") else {}

    def get(section, key, cast, default):
        if key not in section:
            return default
        raw = section[key]
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)

    dae = DaeTrainConfig(
        hidden_dims=get(dae_s, "hidden_dims", _dims, base.dae.hidden_dims),
        code_dim=base.dae.code_dim,
        rbm_epochs=get(dae_s, "rbm_epochs", int, base.dae.rbm_epochs),
        finetune_epochs=get(dae_s, "finetune_epochs", int, base.dae.finetune_epochs),
        minibatch=get(dae_s, "minibatch", int, base.dae.minibatch),
        rbm_lr_gb=get(dae_s, "rbm_lr_gb", float, base.dae.rbm_lr_gb),
        rbm_lr_bb=get(dae_s, "rbm_lr_bb", float, base.dae.rbm_lr_bb),
        finetune_lr=get(dae_s, "finetune_lr", float, base.dae.finetune_lr),
        train_fraction=get(dae_s, "train_fraction", float, base.dae.train_fraction),
    )
    dnn = DnnTrainConfig(
        hidden_dims=get(dnn_s, "hidden_dims", _dims, base.dnn.hidden_dims),
        train_hidden_layers=get(dnn_s, "train_hidden_layers", int,
                                base.dnn.train_hidden_layers),
        pretrain_epochs=get(dnn_s, "pretrain_epochs", int, base.dnn.pretrain_epochs),
        epochs=get(dnn_s, "epochs", int, base.dnn.epochs),
        minibatch=get(dnn_s, "minibatch", int, base.dnn.minibatch),
        ce_lr=get(dnn_s, "ce_lr", float, base.dnn.ce_lr),
        pretrain_lr_gb=get(dnn_s, "pretrain_lr_gb", float, base.dnn.pretrain_lr_gb),
        pretrain_lr_bb=get(dnn_s, "pretrain_lr_bb", float, base.dnn.pretrain_lr_bb),
        val_fraction=get(dnn_s, "val_fraction", float, base.dnn.val_fraction),
        context_window=get(dnn_s, "context_window", int, base.dnn.context_window),
    )
    dec = DecodeConfig(
        beam=get(dec_s, "beam", float, base.decode.beam),
        acwt=get(dec_s, "acwt", float, base.decode.acwt),
        word_insertion_penalty=get(dec_s, "word_insertion_penalty", float,
                                   base.decode.word_insertion_penalty),
        max_active=get(dec_s, "max_active", int, base.decode.max_active),
        lattice_beam=get(dec_s, "lattice_beam", float, base.decode.lattice_beam),
    )
    lexicon = get(paths, "lexicon", str, "")
    lm = get(paths, "lm", str, "")
    return ExperimentConfig(
        corpus_dir=Path(get(paths, "corpus", str, str(base.corpus_dir))),
        work_dir=Path(get(paths, "work", str, str(base.work_dir))),
        results_dir=Path(get(paths, "results", str, str(base.results_dir))),
        lexicon_file=Path(lexicon) if lexicon else None,
        lm_file=Path(lm) if lm else None,
        seed=get(exp, "seed", int, base.seed),
        feature_kind=get(exp, "feature", str, base.feature_kind),
        k=get(exp, "k", int, base.k),
        with_delta=get(exp, "with_delta", bool, base.with_delta),
        num_words=get(corp, "num_words", int, base.num_words),
        num_phones=get(corp, "num_phones", int, base.num_phones),
        vocab_seed=get(corp, "vocab_seed", int, base.vocab_seed),
        num_train=get(corp, "num_train", int, base.num_train),
        num_test=get(corp, "num_test", int, base.num_test),
        frames_per_phone=get(corp, "frames_per_phone", int, base.frames_per_phone),
        image_width=get(corp, "image_width", int, base.image_width),
        image_height=get(corp, "image_height", int, base.image_height),
        noise_sigma=get(corp, "noise_sigma", float, base.noise_sigma),
        words_min=get(corp, "words_min", int, base.words_min),
        words_max=get(corp, "words_max", int, base.words_max),
        resize_to=get(feat, "resize_to", int, base.resize_to),
        dae=dae, dnn=dnn, decode=dec,
        states_per_phone=get(gmm_s, "states_per_phone", int, base.states_per_phone),
        em_iters=get(gmm_s, "iters", int, base.em_iters),
        gaussian_target=get(gmm_s, "gaussian_target", int, base.gaussian_target),
    )


def config_to_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    parser["paths"] = {
        "corpus": str(cfg.corpus_dir),
        "work": str(cfg.work_dir),
        "results": str(cfg.results_dir),
        "lexicon": str(cfg.lexicon_file) if cfg.lexicon_file else "",
        "lm": str(cfg.lm_file) if cfg.lm_file else "",
    }
    parser["experiment"] = {
        "seed": str(cfg.seed),
        "feature": cfg.feature_kind,
        "k": str(cfg.k),
        "with_delta": str(cfg.with_delta).lower(),
    }
    parser["corpus"] = {
        "num_words": str(cfg.num_words),
        "num_phones": str(cfg.num_phones),
        "vocab_seed": str(cfg.vocab_seed),
        "num_train": str(cfg.num_train),
        "num_test": str(cfg.num_test),
        "frames_per_phone": str(cfg.frames_per_phone),
        "image_width": str(cfg.image_width),
        "image_height": str(cfg.image_height),
        "noise_sigma": str(cfg.noise_sigma),
        "words_min": str(cfg.words_min),
        "words_max": str(cfg.words_max),
    }
    parser["features"] = {"resize_to": str(cfg.resize_to)}
    parser["dae"] = {
        "hidden_dims": ",".join(str(d) for d in cfg.dae.hidden_dims),
        "rbm_epochs": str(cfg.dae.rbm_epochs),
        "finetune_epochs": str(cfg.dae.finetune_epochs),
        "minibatch": str(cfg.dae.minibatch),
        "rbm_lr_gb": str(cfg.dae.rbm_lr_gb),
        "rbm_lr_bb": str(cfg.dae.rbm_lr_bb),
        "finetune_lr": str(cfg.dae.finetune_lr),
        "train_fraction": str(cfg.dae.train_fraction),
    }
    parser["gmm"] = {
        "states_per_phone": str(cfg.states_per_phone),
        "iters": str(cfg.em_iters),
        "gaussian_target": str(cfg.gaussian_target),
    }
    parser["dnn"] = {
        "hidden_dims": ",".join(str(d) for d in cfg.dnn.hidden_dims),
        "train_hidden_layers": str(cfg.dnn.train_hidden_layers),
        "pretrain_epochs": str(cfg.dnn.pretrain_epochs),
        "epochs": str(cfg.dnn.epochs),
        "minibatch": str(cfg.dnn.minibatch),
        "ce_lr": str(cfg.dnn.ce_lr),
        "pretrain_lr_gb": str(cfg.dnn.pretrain_lr_gb),
        "pretrain_lr_bb": str(cfg.dnn.pretrain_lr_bb),
        "val_fraction": str(cfg.dnn.val_fraction),
        "context_window": str(cfg.dnn.context_window),
    }
    parser["decode"] = {
        "beam": str(cfg.decode.beam),
        "acwt": str(cfg.decode.acwt),
        "word_insertion_penalty": str(cfg.decode.word_insertion_penalty),
        "max_active": str(cfg.decode.max_active),
        "lattice_beam": str(cfg.decode.lattice_beam),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(config_to_ini(cfg))


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_to_ini(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(path)
    return path


def write_stage_manifest(cfg: ExperimentConfig, stage: str, inputs, outputs) -> Path:
    mdir = cfg.results_dir / "manifests"
    mdir.mkdir(parents=True, exist_ok=True)
    doc = {
        "stage": stage,
        "config_sha256": config_digest(cfg),
        "seed": cfg.seed,
        "inputs": {str(p): _file_digest(p) for p in sorted(map(str, inputs))},
        "outputs": sorted(str(p) for p in outputs),
    }
    out = mdir / f"{stage}.json"
    out.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return out


# ---------------------------------------------------------------------------
# Shared feature helpers
# ---------------------------------------------------------------------------

def corpus_spec_from_config(cfg: ExperimentConfig) -> SyntheticCorpusSpec:
    vocab, lexicon = make_demo_vocabulary(cfg.num_words, cfg.num_phones,
                                          cfg.vocab_seed)
    return SyntheticCorpusSpec(
        seed=cfg.seed, vocabulary=vocab, lexicon=lexicon,
        num_train_utts=cfg.num_train, num_test_utts=cfg.num_test,
        frames_per_phone_mean=cfg.frames_per_phone,
        image_size=cfg.image_size, noise_sigma=cfg.noise_sigma,
        words_min=cfg.words_min, words_max=cfg.words_max,
    )


def dct_sequence(frames: np.ndarray, utt_id: str, dct_cfg: DctConfig) -> FeatureSequence:
    rows = np.stack([dct_frame_features(f, dct_cfg) for f in frames])
    return FeatureSequence(utt_id, rows, provenance="dct")


def features_from_stacks(stacks: dict[str, np.ndarray], utt_id: str,
                         dct_cfg: DctConfig, with_delta: bool) -> FeatureSequence:
    """DCT features for one utterance given in-memory frame stacks."""
    tongue = dct_sequence(stacks["tongue"], utt_id, dct_cfg)
    lip = dct_sequence(stacks["lip"], utt_id, dct_cfg)
    return assemble_frame_features(tongue, lip, with_delta=with_delta,
                                   delta_window=dct_cfg.delta_window)


# ---------------------------------------------------------------------------
# File-based pipeline stages
# ---------------------------------------------------------------------------

def features_dir(cfg: ExperimentConfig) -> Path:
    return cfg.work_dir / "features" / cfg.tag


def models_dir(cfg: ExperimentConfig) -> Path:
    return cfg.work_dir / "models"


def cell_results_dir(cfg: ExperimentConfig) -> Path:
    return cfg.results_dir / cfg.tag


def stage_gen_corpus(cfg: ExperimentConfig) -> CorpusManifest:
    spec = corpus_spec_from_config(cfg)
    manifest = generate_corpus(spec, cfg.corpus_dir)
    write_stage_manifest(cfg, "gen-corpus", [],
                         [cfg.corpus_dir / "manifest.txt"])
    return manifest


def _open_corpus(cfg: ExperimentConfig) -> CorpusManifest:
    _require(cfg.corpus_dir / "train.list")
    return load_corpus(cfg.corpus_dir)


def stage_extract_dct(cfg: ExperimentConfig) -> list[Path]:
    manifest = _open_corpus(cfg)
    dct_cfg = cfg.dct_config()
    out_dir = features_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for utt_id in manifest.train_ids + manifest.test_ids:
        seqs = load_utterance_frames(manifest, utt_id)
        feats = features_from_stacks(
            {m: seqs[m].frames for m in MODALITIES}, utt_id, dct_cfg,
            cfg.with_delta)
        out = out_dir / f"{utt_id}.feat"
        write_features(out, feats)
        outputs.append(out)
    write_stage_manifest(cfg, "extract-dct",
                         [cfg.corpus_dir / "manifest.txt"], outputs)
    return outputs


def _dae_model_path(cfg: ExperimentConfig, modality: str) -> Path:
    return models_dir(cfg) / f"dae_{modality}_k{cfg.k}.json"


def _resized_train_frames(cfg: ExperimentConfig, manifest: CorpusManifest,
                          modality: str) -> np.ndarray:
    from .imaging import resize_bicubic

    rows = []
    for utt_id in manifest.train_ids:
        seqs = load_utterance_frames(manifest, utt_id)
        for frame in seqs[modality].frames:
            resized = resize_bicubic(frame, cfg.resize_to, cfg.resize_to)
            rows.append(resized.reshape(-1))
    return np.array(rows)


def stage_train_dae(cfg: ExperimentConfig) -> list[Path]:
    manifest = _open_corpus(cfg)
    dae_cfg = cfg.dae_config()
    models_dir(cfg).mkdir(parents=True, exist_ok=True)
    cell = cell_results_dir(cfg)
    cell.mkdir(parents=True, exist_ok=True)
    outputs = []
    for modality in MODALITIES:
        data = _resized_train_frames(cfg, manifest, modality)
        model, curve = autoencoder.train_dae(data, dae_cfg)
        path = _dae_model_path(cfg, modality)
        autoencoder.save_dae(path, model)
        curve_csv = path.with_suffix(".loss.csv")
        with open(curve_csv, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss\n")
            for i, loss in enumerate(curve):
                fh.write(f"{i},{loss:.6f}\n")
        fig = cell / f"dae_{modality}_loss.png"
        plots.save_loss_curve(fig, curve)
        outputs += [path, curve_csv, fig]
        # Fig. 2 / Fig. 4 style comparison: originals, truncated-DCT
        # reconstructions, and DAE reconstructions of the same frames.
        sample = data[:: max(1, len(data) // 8)][:8]
        dct_cfg = cfg.dct_config()
        side = cfg.resize_to
        dct_recon = []
        from .dct_features import dct2, reconstruct_truncated, select_low_freq
        for row in sample:
            coeffs = select_low_freq(dct2(row.reshape(side, side)), cfg.k,
                                     dct_cfg.zigzag)
            dct_recon.append(reconstruct_truncated(coeffs, dct_cfg))
        dae_recon = [autoencoder.reconstruct(model, row).reshape(side, side)
                     for row in sample]
        grid = cell / f"reconstruction_{modality}_k{cfg.k}.png"
        plots.save_reconstruction_grid(
            grid, [row.reshape(side, side) for row in sample],
            {f"dct k={cfg.k}": dct_recon, f"dae k={cfg.k}": dae_recon})
        outputs.append(grid)
    write_stage_manifest(cfg, "train-dae",
                         [cfg.corpus_dir / "manifest.txt"], outputs)
    return outputs


def stage_extract_dae(cfg: ExperimentConfig) -> list[Path]:
    manifest = _open_corpus(cfg)
    models = {m: autoencoder.load_dae(_require(_dae_model_path(cfg, m)))
              for m in MODALITIES}
    out_dir = features_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for utt_id in manifest.train_ids + manifest.test_ids:
        seqs = load_utterance_frames(manifest, utt_id)
        per_mod = {
            m: autoencoder.extract_dae_features(
                models[m], seqs[m], resize=(cfg.resize_to, cfg.resize_to))
            for m in MODALITIES
        }
        feats = assemble_frame_features(per_mod["tongue"], per_mod["lip"],
                                        with_delta=cfg.with_delta)
        out = out_dir / f"{utt_id}.feat"
        write_features(out, feats)
        outputs.append(out)
    write_stage_manifest(
        cfg, "extract-dae",
        [cfg.corpus_dir / "manifest.txt"] + [_dae_model_path(cfg, m) for m in MODALITIES],
        outputs)
    return outputs


def stage_mvn_stats(cfg: ExperimentConfig) -> Path:
    manifest = _open_corpus(cfg)
    fdir = features_dir(cfg)
    seqs = [read_features(_require(fdir / f"{u}.feat")) for u in manifest.train_ids]
    stats = compute_mvn_stats(seqs)
    out = fdir / "mvn.json"
    out.write_text(json.dumps(stats.to_dict()))
    write_stage_manifest(cfg, "mvn-stats",
                         [fdir / f"{manifest.train_ids[0]}.feat"], [out])
    return out


def load_normalized_features(cfg: ExperimentConfig, manifest: CorpusManifest,
                             split: str) -> dict[str, FeatureSequence]:
    fdir = features_dir(cfg)
    stats = MvnStats.from_dict(json.loads(_require(fdir / "mvn.json").read_text()))
    out = {}
    for utt_id in manifest.ids(split):
        seq = read_features(_require(fdir / f"{utt_id}.feat"),
                            provenance=cfg.feature_kind)
        out[utt_id] = mvn(seq, stats)
    return out


def _gmm_path(cfg: ExperimentConfig) -> Path:
    return models_dir(cfg) / f"gmm_{cfg.tag}.json"


def stage_train_gmm(cfg: ExperimentConfig) -> Path:
    manifest = _open_corpus(cfg)
    lexicon = lexicon_lm.parse_lexicon(_require(cfg.lexicon_path()))
    train = load_normalized_features(cfg, manifest, "train")
    transcripts = {u: manifest.transcripts[u] for u in manifest.train_ids}
    model = gmm_hmm.flat_start(train, transcripts, lexicon, cfg.states_per_phone)
    target = cfg.gaussian_target or 2 * model.total_states
    model, history = gmm_hmm.em_train(model, train, transcripts, lexicon,
                                      cfg.em_iters, target)
    models_dir(cfg).mkdir(parents=True, exist_ok=True)
    out = _gmm_path(cfg)
    gmm_hmm.save_acoustic_model(out, model)
    hist_csv = out.with_suffix(".history.csv")
    with open(hist_csv, "w", encoding="utf-8") as fh:
        fh.write("iteration,loglike,num_gaussians,skipped\n")
        for rec in history:
            fh.write(f"{rec['iteration']},{rec['loglike']:.4f},"
                     f"{rec['num_gaussians']},{rec['skipped']}\n")
    write_stage_manifest(cfg, "train-gmm",
                         [cfg.lexicon_path(), features_dir(cfg) / "mvn.json"],
                         [out, hist_csv])
    return out


def _alignments_path(cfg: ExperimentConfig) -> Path:
    return cfg.work_dir / f"alignments_{cfg.tag}.txt"


def stage_align(cfg: ExperimentConfig) -> Path:
    manifest = _open_corpus(cfg)
    lexicon = lexicon_lm.parse_lexicon(_require(cfg.lexicon_path()))
    model = gmm_hmm.load_acoustic_model(_require(_gmm_path(cfg)))
    train = load_normalized_features(cfg, manifest, "train")
    alignments = []
    for utt_id in manifest.train_ids:
        alignments.append(gmm_hmm.force_align(
            model, train[utt_id], manifest.transcripts[utt_id], lexicon))
    out = _alignments_path(cfg)
    gmm_hmm.write_alignments(out, alignments)
    write_stage_manifest(cfg, "align", [_gmm_path(cfg)], [out])
    return out


def _dnn_path(cfg: ExperimentConfig) -> Path:
    return models_dir(cfg) / f"dnn_{cfg.tag}.json"


def stage_train_dnn(cfg: ExperimentConfig) -> Path:
    manifest = _open_corpus(cfg)
    model_gmm = gmm_hmm.load_acoustic_model(_require(_gmm_path(cfg)))
    alignments = gmm_hmm.read_alignments(_require(_alignments_path(cfg)))
    train = load_normalized_features(cfg, manifest, "train")
    dnn_cfg = cfg.dnn_config()
    rbms = dnn_hmm.pretrain_dbn(train, dnn_cfg)
    model = dnn_hmm.init_from_dbn(rbms, model_gmm.total_states, dnn_cfg)
    model, curves = dnn_hmm.train_ce(model, train, alignments, dnn_cfg)
    model.log_priors = dnn_hmm.estimate_priors(alignments, model_gmm.total_states)
    out = _dnn_path(cfg)
    dnn_hmm.save_dnn(out, model)
    curves_csv = out.with_suffix(".curves.csv")
    with open(curves_csv, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,train_acc,val_acc\n")
        for rec in curves:
            fh.write(f"{rec['epoch']},{rec['train_loss']:.6f},"
                     f"{rec['train_acc']:.6f},{rec['val_acc']:.6f}\n")
    cell = cell_results_dir(cfg)
    cell.mkdir(parents=True, exist_ok=True)
    fig = cell / "dnn_curves.png"
    plots.save_training_curves(fig, curves)
    write_stage_manifest(cfg, "train-dnn",
                         [_gmm_path(cfg), _alignments_path(cfg)],
                         [out, curves_csv, fig])
    return out


def _graph_path(cfg: ExperimentConfig) -> Path:
    return cfg.work_dir / f"graph_{cfg.tag}.json"


def stage_build_graph(cfg: ExperimentConfig) -> Path:
    lexicon = lexicon_lm.parse_lexicon(_require(cfg.lexicon_path()))
    lm = lexicon_lm.parse_arpa(_require(cfg.lm_path()))
    model = gmm_hmm.load_acoustic_model(_require(_gmm_path(cfg)))
    graph = decoder.build_graph(lexicon, lm, model)
    out = _graph_path(cfg)
    decoder.save_graph(out, graph)
    write_stage_manifest(cfg, "build-graph",
                         [cfg.lexicon_path(), cfg.lm_path(), _gmm_path(cfg)],
                         [out])
    return out


def stage_decode(cfg: ExperimentConfig, system: str) -> list[Path]:
    if system not in ("gmm", "dnn"):
        raise ValueError(f"unknown system {system!r}")
    manifest = _open_corpus(cfg)
    graph = decoder.load_graph(_require(_graph_path(cfg)))
    test = load_normalized_features(cfg, manifest, "test")
    if system == "gmm":
        model = gmm_hmm.load_acoustic_model(_require(_gmm_path(cfg)))
        scores = {u: gmm_hmm.emission_matrix(model, test[u]) for u in test}
        model_path = _gmm_path(cfg)
    else:
        model = dnn_hmm.load_dnn(_require(_dnn_path(cfg)))
        scores = {u: dnn_hmm.scaled_loglikes(model, test[u]) for u in test}
        model_path = _dnn_path(cfg)
    hyps, failures = decoder.decode_corpus(graph, scores, cfg.decode)
    cell = cell_results_dir(cfg)
    cell.mkdir(parents=True, exist_ok=True)
    hyp_path = cell / f"hyps_{system}.txt"
    decoder.write_hypotheses(hyp_path, hyps)
    scores_csv = cell / f"hyps_{system}_scores.csv"
    decoder.write_scores_csv(scores_csv, hyps)
    outputs = [hyp_path, scores_csv]
    if failures:
        fail_path = cell / f"failures_{system}.txt"
        fail_path.write_text("".join(f"{u} {msg}\n" for u, msg in
                                     sorted(failures.items())))
        outputs.append(fail_path)
    write_stage_manifest(cfg, f"decode-{system}",
                         [_graph_path(cfg), model_path], outputs)
    return outputs


def stage_score(cfg: ExperimentConfig) -> Path:
    manifest = _open_corpus(cfg)
    refs = {u: manifest.transcripts[u].words for u in manifest.test_ids}
    cell = cell_results_dir(cfg)
    reports = {}
    inputs = []
    for system, label in (("gmm", "monophone"), ("dnn", "dnn")):
        hyp_path = cell / f"hyps_{system}.txt"
        if not hyp_path.exists():
            continue
        reports[label] = scoring.score_corpus(refs, decoder.read_hypotheses(hyp_path))
        inputs.append(hyp_path)
    if not reports:
        raise MissingArtifact(cell / "hyps_gmm.txt")
    out = cell / "report.csv"
    scoring.write_report_csv(out, reports)
    text = "\n\n".join(scoring.format_report(r, label)
                       for label, r in sorted(reports.items()))
    (cell / "report.txt").write_text(text + "\n")
    write_stage_manifest(cfg, "score", inputs, [out, cell / "report.txt"])
    return out


# ---------------------------------------------------------------------------
# Report over a grid of (feature, K) cells
# ---------------------------------------------------------------------------

def compare_features_report(results_dir) -> str:
    """Collect per-cell report.csv files into one grid.

    Rows are systems (monophone / dnn), columns are K values per feature
    kind; missing cells are rendered as "-", never invented. Writes
    summary.csv, summary.txt, and a WER-versus-K figure; returns the text
    table.
    """
    results_dir = Path(results_dir)
    cells = {}
    for report in sorted(results_dir.glob("*_k*/report.csv")):
        tag = report.parent.name
        kind, _, k_text = tag.rpartition("_k")
        try:
            k = int(k_text)
        except ValueError:
            continue
        with open(report, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                row = dict(zip(header, line.strip().split(",")))
                cells[(kind, k, row["label"])] = row
    if not cells:
        raise MissingArtifact(results_dir / "*_k*/report.csv")

    kinds = sorted({kind for kind, _, _ in cells})
    ks = sorted({k for _, k, _ in cells})
    systems = sorted({s for _, _, s in cells})

    lines = []
    col_heads = [f"{kind} K={k}" for kind in kinds for k in ks]
    lines.append("WER % by system and feature set")
    lines.append("system      | " + " | ".join(f"{h:>10}" for h in col_heads))
    for system in systems:
        row = []
        for kind in kinds:
            for k in ks:
                cell = cells.get((kind, k, system))
                row.append(cell["wer_percent"] if cell else "-")
        lines.append(f"{system:<11} | " + " | ".join(f"{v:>10}" for v in row))
    table = "\n".join(lines)

    (results_dir / "summary.txt").write_text(table + "\n")
    with open(results_dir / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write("feature,k,system,wer_percent,correct_rate_percent\n")
        for (kind, k, system), row in sorted(cells.items()):
            fh.write(f"{kind},{k},{system},{row['wer_percent']},"
                     f"{row['correct_rate_percent']}\n")
    curves = {}
    for (kind, k, system), row in cells.items():
        curves.setdefault(f"{system} ({kind})", {})[k] = float(row["wer_percent"])
    plots.save_wer_vs_k(results_dir / "wer_vs_k.png", curves)
    return table


def run_all(cfg: ExperimentConfig) -> str:
    """Every stage in dependency order for one (feature, K) cell."""
    stage_gen_corpus(cfg)
    if cfg.feature_kind == "dct":
        stage_extract_dct(cfg)
    else:
        stage_train_dae(cfg)
        stage_extract_dae(cfg)
    stage_mvn_stats(cfg)
    stage_train_gmm(cfg)
    stage_align(cfg)
    stage_train_dnn(cfg)
    stage_build_graph(cfg)
    stage_decode(cfg, "gmm")
    stage_decode(cfg, "dnn")
    stage_score(cfg)
    return compare_features_report(cfg.results_dir)


# ---------------------------------------------------------------------------
# In-memory GMM-vs-DNN trend run
# ---------------------------------------------------------------------------

def run_trend(seed: int, num_train: int = 200, num_test: int = 50,
              num_words: int = 20, num_phones: int = 12, k: int = 8,
              em_iters: int = 6, dnn_epochs: int = 30,
              noise_sigma: float = 0.75, context_window: int = 3) -> dict:
    """Full pipeline on an in-memory synthetic corpus; returns both systems'
    reports plus training histories."""
    vocab, lexicon = make_demo_vocabulary(num_words, num_phones, seed=0)
    spec = SyntheticCorpusSpec(
        seed=seed, vocabulary=vocab, lexicon=lexicon,
        num_train_utts=num_train, num_test_utts=num_test,
        frames_per_phone_mean=6, image_size=(16, 16), noise_sigma=noise_sigma)
    dct_cfg = DctConfig(resize_to=16, k_per_modality=k)

    feats = {"train": {}, "test": {}}
    transcripts = {"train": {}, "test": {}}
    for split, transcript, stacks in synthesize_utterances(spec):
        feats[split][transcript.utterance_id] = features_from_stacks(
            stacks, transcript.utterance_id, dct_cfg, with_delta=True)
        transcripts[split][transcript.utterance_id] = transcript

    stats = compute_mvn_stats(list(feats["train"].values()))
    train = {u: mvn(s, stats) for u, s in feats["train"].items()}
    test = {u: mvn(s, stats) for u, s in feats["test"].items()}

    model = gmm_hmm.flat_start(train, transcripts["train"], lexicon)
    model, history = gmm_hmm.em_train(model, train, transcripts["train"],
                                      lexicon, em_iters,
                                      2 * model.total_states)
    alignments = {
        u: gmm_hmm.force_align(model, train[u], transcripts["train"][u], lexicon)
        for u in train
    }

    dnn_cfg = DnnTrainConfig(hidden_dims=(64, 64), train_hidden_layers=2,
                             pretrain_epochs=2, epochs=dnn_epochs,
                             minibatch=128, ce_lr=0.5, seed=seed,
                             context_window=context_window)
    rbms = dnn_hmm.pretrain_dbn(train, dnn_cfg)
    dnn = dnn_hmm.init_from_dbn(rbms, model.total_states, dnn_cfg)
    dnn, curves = dnn_hmm.train_ce(dnn, train, alignments, dnn_cfg)
    dnn.log_priors = dnn_hmm.estimate_priors(alignments, model.total_states)

    lm = lexicon_lm.uniform_bigram_lm(vocab)
    graph = decoder.build_graph(lexicon, lm, model)
    dec_cfg = DecodeConfig()
    refs = {u: t.words for u, t in transcripts["test"].items()}

    results = {"seed": seed, "em_history": history, "dnn_curves": curves}
    for label, scores in (
        ("gmm", {u: gmm_hmm.emission_matrix(model, test[u]) for u in test}),
        ("dnn", {u: dnn_hmm.scaled_loglikes(dnn, test[u]) for u in test}),
    ):
        hyps, failures = decoder.decode_corpus(graph, scores, dec_cfg)
        report = scoring.score_corpus(refs, {u: h.words for u, h in hyps.items()})
        results[f"{label}_report"] = report
        results[f"{label}_wer"] = float(report.wer)
        results[f"{label}_failures"] = failures
    return results
