"""Command-line pipeline: mesh, datagen, train, invert, compare, bench, hellinger.

Configuration is a flat INI file with strictly validated keys; every
subcommand writes its artifacts plus a manifest under the output directory
so a run can be replayed from config and seed alone.  Timing lands only in
``metrics.csv``; all other artifacts are byte-reproducible and their hashes
go into the manifest.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import sys
import time

import numpy as np

from . import __version__
from . import analysis, datagen, fem, mcmc, mesh as mesh_mod, surrogate
from .problems import Problem, build_problem


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


_SCHEMA = {
    "run": {"problem", "seed", "out"},
    "mesh": {"refinement", "electrodes", "coverage", "contact_impedance"},
    "prior": {"nu", "ell", "jitter"},
    "levelset": {"sigma_background", "sigma_anomaly"},
    "dot": {"mu_background", "anomaly_amplitude", "rho"},
    "star": {
        "truncation",
        "decay",
        "const_scale",
        "kappa_inclusion",
        "kappa_background",
        "centers",
        "base_radii",
        "rho",
    },
    "noise": {"level"},
    "mcmc": {
        "delta",
        "target_accept",
        "adapt_window",
        "burn_in",
        "samples",
        "thin",
        "credible_level",
    },
    "train": {
        "epochs",
        "minibatch",
        "lr",
        "lr_drop_factor",
        "lr_drop_period",
        "channels",
        "conv_layers",
        "final_relu",
        "holdout",
    },
    "datagen": {"count", "mix_circles", "mix_gp", "mix_rotated", "mix_star"},
    "paths": {"dataset", "model"},
    "phantom": {"kind", "circles"},
    "bench": {"refinements", "iterations"},
    "hellinger": {"draws"},
}

_DEFAULTS = """
[run]
problem = eit
seed = 0
out = runs/latest

[mesh]
refinement = 4
electrodes = 16
coverage = 0.5
contact_impedance = 0.01

[prior]
nu = 3.0
ell =
jitter = 1e-10

[levelset]
sigma_background = 1.0
sigma_anomaly = 2.0

[dot]
mu_background = 1.0
anomaly_amplitude = 3.0
rho = 0.1

[star]
truncation = 16
decay = 2.0
const_scale = 0.3
kappa_inclusion = 0.15
kappa_background = 0.05
centers = -0.35,0.25;0.35,-0.3
base_radii = 0.3,0.25
rho = 0.1

[noise]
level = 0.01

[mcmc]
delta = 0.1
target_accept = 0.25
adapt_window = 100
burn_in = 5000
samples = 5000
thin = 1
credible_level = 0.2

[train]
epochs = 150
minibatch = 128
lr = 0.001
lr_drop_factor = 1.0
lr_drop_period = 50
channels = 16
conv_layers = 4
final_relu = false
holdout = 0.1

[datagen]
count = 800
mix_circles = 0.5
mix_gp = 0.5
mix_rotated = 0.0
mix_star = 0.0

[paths]
dataset = artifacts/dataset.bin
model = artifacts/model.bin

[phantom]
kind = example
circles =

[bench]
refinements = 3,4,5
iterations = 50

[hellinger]
draws = 200
"""

_FULL_SCALE = {
    ("datagen", "count"): {"eit": "7200", "dot": "6400", "qpat": "4800"},
    ("train", "epochs"): {"eit": "2000", "dot": "100", "qpat": "100"},
    ("train", "minibatch"): {"eit": "128", "dot": "8", "qpat": "8"},
    ("train", "lr_drop_factor"): {"eit": "1.0", "dot": "0.1", "qpat": "0.1"},
    ("train", "lr_drop_period"): {"eit": "2000", "dot": "50", "qpat": "20"},
    ("mcmc", "burn_in"): {"eit": "50000", "dot": "50000", "qpat": "50000"},
    ("mcmc", "samples"): {"eit": "50000", "dot": "50000", "qpat": "50000"},
}


def load_config(path: str | None, overrides=()) -> configparser.ConfigParser:
    """Defaults, overlaid with the config file, validated against the schema."""
    cfg = configparser.ConfigParser()
    cfg.read_string(_DEFAULTS)
    if path is not None:
        user = configparser.ConfigParser()
        try:
            with open(path) as fh:
                user.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for section in user.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in user.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown config key [{section}].{key}")
                cfg.set(section, key, value)
    for section, key, value in overrides:
        cfg.set(section, key, value)
    problem = cfg.get("run", "problem")
    if problem not in ("eit", "dot", "qpat"):
        raise ConfigError(f"unknown problem {problem!r} in [run].problem")
    return cfg


def apply_full_scale(cfg) -> None:
    problem = cfg.get("run", "problem")
    for (section, key), values in _FULL_SCALE.items():
        cfg.set(section, key, values[problem])


def config_text(cfg) -> str:
    parts = []
    for section in cfg.sections():
        parts.append(f"[{section}]")
        for key, value in sorted(cfg.items(section)):
            parts.append(f"{key} = {value}")
    return "\n".join(parts) + "\n"


def problem_from_config(cfg) -> Problem:
    name = cfg.get("run", "problem")
    ell_raw = cfg.get("prior", "ell").strip()
    kwargs = dict(
        refinement=cfg.getint("mesh", "refinement"),
        electrodes=cfg.getint("mesh", "electrodes"),
        coverage=cfg.getfloat("mesh", "coverage"),
        contact_impedance=cfg.getfloat("mesh", "contact_impedance"),
        nu=cfg.getfloat("prior", "nu"),
        ell=float(ell_raw) if ell_raw else None,
        jitter=cfg.getfloat("prior", "jitter"),
    )
    if name == "eit":
        kwargs.update(
            sigma_background=cfg.getfloat("levelset", "sigma_background"),
            sigma_anomaly=cfg.getfloat("levelset", "sigma_anomaly"),
        )
    elif name == "dot":
        kwargs.update(
            mu_background=cfg.getfloat("dot", "mu_background"),
            anomaly_amplitude=cfg.getfloat("dot", "anomaly_amplitude"),
            rho=cfg.getfloat("dot", "rho"),
        )
    else:
        centers = tuple(
            tuple(float(v) for v in part.split(","))
            for part in cfg.get("star", "centers").split(";")
            if part.strip()
        )
        radii = tuple(float(v) for v in cfg.get("star", "base_radii").split(","))
        kwargs.update(
            star_K=cfg.getint("star", "truncation"),
            star_decay=cfg.getfloat("star", "decay"),
            star_const_scale=cfg.getfloat("star", "const_scale"),
            kappa_inclusion=cfg.getfloat("star", "kappa_inclusion"),
            kappa_background=cfg.getfloat("star", "kappa_background"),
            star_centers=centers,
            star_base_radii=radii,
            rho=cfg.getfloat("star", "rho"),
        )
    return build_problem(name, **kwargs)


def phantom_latent(cfg, problem: Problem) -> np.ndarray:
    """Ground-truth latent from the [phantom] section."""
    kind = cfg.get("phantom", "kind")
    if kind == "example":
        return problem.example_phantom_latent()
    if kind == "circles":
        spec = cfg.get("phantom", "circles")
        circles = []
        for part in spec.split(";"):
            if part.strip():
                cx, cy, r = (float(v) for v in part.split(","))
                circles.append((cx, cy, r))
        if not circles:
            raise ConfigError("[phantom].circles is empty")
        if problem.name == "eit":
            pts = problem.mesh.nodes
        else:
            pts = mesh_mod.centroids(problem.mesh)
        if problem.name == "qpat":
            raise ConfigError("[phantom].kind=circles is not defined for qpat")
        fields = []
        for cx, cy, r in circles:
            dist = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
            if problem.name == "eit":
                fields.append(r - dist)
            else:
                fields.append(np.where(dist <= r, problem.cfg.anomaly_amplitude, 0.0))
        return np.max(fields, axis=0)
    raise ConfigError(f"unknown [phantom].kind {kind!r}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, cfg, seed, artifacts, unhashed=()) -> None:
    """Record config hash, seed, version and artifact hashes for replay."""
    lines = [
        f"version {__version__}",
        f"seed {seed}",
        f"config_sha256 {hashlib.sha256(config_text(cfg).encode()).hexdigest()}",
    ]
    for rel in sorted(artifacts):
        lines.append(f"artifact {rel} {_sha256(os.path.join(out_dir, rel))}")
    for rel in sorted(unhashed):
        lines.append(f"artifact {rel} (timing; excluded from hashing)")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _out_dir(cfg, args) -> str:
    out = args.out if args.out else cfg.get("run", "out")
    os.makedirs(out, exist_ok=True)
    return out


def _seed(cfg, args) -> int:
    return args.seed if args.seed is not None else cfg.getint("run", "seed")


def cmd_mesh(cfg, args) -> int:
    out = _out_dir(cfg, args)
    m = mesh_mod.build_disk_mesh(cfg.getint("mesh", "refinement"))
    mesh_mod.validate_mesh(m)
    path = os.path.join(out, "mesh.txt")
    mesh_mod.write_mesh(m, path)
    write_manifest(out, cfg, _seed(cfg, args), ["mesh.txt"])
    print(f"mesh: {m.node_count} nodes, {m.tri_count} triangles -> {path}")
    return 0


def cmd_datagen(cfg, args) -> int:
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    problem = problem_from_config(cfg)
    mix = datagen.MixSpec(
        circles=cfg.getfloat("datagen", "mix_circles"),
        gp=cfg.getfloat("datagen", "mix_gp"),
        rotated=cfg.getfloat("datagen", "mix_rotated"),
        star=cfg.getfloat("datagen", "mix_star"),
    )
    if problem.name == "qpat" and mix.gp > 0:
        mix = datagen.default_mix("qpat")
    ds = datagen.generate_dataset(problem, cfg.getint("datagen", "count"), mix, seed)
    path = cfg.get("paths", "dataset")
    os.makedirs(os.path.dirname(os.path.join(out, path)) or out, exist_ok=True)
    datagen.write_dataset(ds, os.path.join(out, path))
    write_manifest(out, cfg, seed, [path])
    print(f"datagen: {ds.count} pairs ({problem.name}) -> {os.path.join(out, path)}")
    return 0


def cmd_train(cfg, args) -> int:
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    problem = problem_from_config(cfg)
    ds_path = os.path.join(out, cfg.get("paths", "dataset"))
    if not os.path.exists(ds_path):
        print(f"error: dataset {ds_path} not found; run the datagen subcommand first",
              file=sys.stderr)
        return 2
    ds = datagen.read_dataset(ds_path)
    if ds.problem != problem.name:
        print(f"error: dataset problem {ds.problem!r} != configured {problem.name!r}",
              file=sys.stderr)
        return 2
    train_ds, val_ds = datagen.split(ds, cfg.getfloat("train", "holdout"), seed)
    net = problem.fresh_net(
        channels=cfg.getint("train", "channels"),
        conv_count=cfg.getint("train", "conv_layers"),
        final_relu=cfg.getboolean("train", "final_relu"),
        rng=np.random.default_rng(seed),
    )
    tcfg = surrogate.TrainConfig(
        epochs=cfg.getint("train", "epochs"),
        minibatch=cfg.getint("train", "minibatch"),
        lr=cfg.getfloat("train", "lr"),
        lr_drop_factor=cfg.getfloat("train", "lr_drop_factor"),
        lr_drop_period=cfg.getint("train", "lr_drop_period"),
        seed=seed,
    )
    net, history = surrogate.train(net, train_ds, tcfg)
    model_path = cfg.get("paths", "model")
    os.makedirs(os.path.dirname(os.path.join(out, model_path)) or out, exist_ok=True)
    surrogate.save_model(net, os.path.join(out, model_path))
    surrogate.write_loss_csv(history, os.path.join(out, "loss.csv"))
    pred = surrogate.forward_batch(net, val_ds.inputs)
    val_mse = float(np.mean((pred - val_ds.targets) ** 2))
    write_manifest(out, cfg, seed, [model_path, "loss.csv"])
    print(f"train: {len(history)} epochs, final loss {history[-1][1]:.6e}, "
          f"holdout mse {val_mse:.6e} -> {os.path.join(out, model_path)}")
    return 0


def _invert(cfg, args, problem, backend, y_obs, truth_latent, tag, out):
    level = cfg.getfloat("mcmc", "credible_level")
    pcfg = mcmc.PcnConfig(
        delta=cfg.getfloat("mcmc", "delta"),
        target_accept=cfg.getfloat("mcmc", "target_accept"),
        adapt_window=cfg.getint("mcmc", "adapt_window"),
        burn_in=cfg.getint("mcmc", "burn_in"),
        samples=cfg.getint("mcmc", "samples"),
        thin=cfg.getint("mcmc", "thin"),
        seed=_seed(cfg, args),
        flush_path=os.path.join(out, f"chain_{tag}_aborted"),
    )
    t0 = time.perf_counter()
    chain = mcmc.run_chain(pcfg, problem.prior, backend, y_obs, np.zeros(problem.latent_dim))
    inv_time = time.perf_counter() - t0
    recon_field = problem.map_to_field(mcmc.posterior_mean(chain))
    lower, upper = analysis.credible_bounds(chain, problem.map_to_field, level)
    truth_field = problem.map_to_field(truth_latent)
    report = analysis.error_metrics(recon_field, truth_field, inv_time)
    chain_dir = os.path.join(out, f"chain_{tag}")
    mcmc.dump_chain(chain, chain_dir)
    fields_dir = os.path.join(out, "fields")
    os.makedirs(fields_dir, exist_ok=True)
    artifacts = []
    for name, fld in (
        (f"recon_{tag}", recon_field),
        (f"lower_{tag}", lower),
        (f"upper_{tag}", upper),
        ("truth", truth_field),
    ):
        rel = os.path.join("fields", f"{name}.csv")
        analysis.write_field_csv(fld, os.path.join(out, rel))
        artifacts.append(rel)
    artifacts.extend(
        os.path.join(f"chain_{tag}", name) for name in ("trace.csv", "samples.bin")
    )
    recon = analysis.Reconstruction(
        recon_field, lower, upper,
        meta={"problem": problem.name, "backend": backend.kind, "seconds": inv_time},
    )
    return recon, report, chain, artifacts


def _load_net(cfg, out, problem):
    model_path = os.path.join(out, cfg.get("paths", "model"))
    if not os.path.exists(model_path):
        raise ConfigError(f"model file {model_path} not found; run the train subcommand first")
    net = surrogate.load_model(model_path)
    if net.input_dim != problem.net_input_dim:
        raise ConfigError(
            f"model input dim {net.input_dim} does not match problem ({problem.net_input_dim})"
        )
    return net


def cmd_invert(cfg, args) -> int:
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    problem = problem_from_config(cfg)
    truth = phantom_latent(cfg, problem)
    rng = np.random.default_rng(seed)
    y_obs = fem.add_noise(problem.forward(truth), cfg.getfloat("noise", "level"), rng)
    if args.backend == "net":
        backend = problem.net_backend(_load_net(cfg, out, problem))
    else:
        backend = problem.fem_backend()
    recon, report, chain, artifacts = _invert(cfg, args, problem, backend, y_obs, truth,
                                              args.backend, out)
    fem.write_measurement_csv(y_obs, os.path.join(out, "measurement.csv"))
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write("backend,mae,mse,linf,inv_time_seconds\n")
        fh.write(f"{args.backend},{report.row()}\n")
    write_manifest(out, cfg, seed, artifacts + ["measurement.csv"], unhashed=["metrics.csv"])
    print(
        f"invert[{args.backend}] {problem.name}: mae {report.mae:.6f} mse {report.mse:.6f} "
        f"linf {report.linf:.6f} accept {mcmc.acceptance_rate(chain):.3f} "
        f"time {report.inv_time_seconds:.1f}s"
    )
    return 0


def cmd_compare(cfg, args) -> int:
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    problem = problem_from_config(cfg)
    truth = phantom_latent(cfg, problem)
    rng = np.random.default_rng(seed)
    y_obs = fem.add_noise(problem.forward(truth), cfg.getfloat("noise", "level"), rng)
    net = _load_net(cfg, out, problem)
    rows = []
    artifacts = []
    for tag, backend in (("fem", problem.fem_backend()), ("net", problem.net_backend(net))):
        _, report, _, arts = _invert(cfg, args, problem, backend, y_obs, truth, tag, out)
        rows.append((tag, report))
        artifacts.extend(arts)
        print(f"compare[{tag}]: mae {report.mae:.6f} mse {report.mse:.6f} "
              f"time {report.inv_time_seconds:.1f}s")
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write("backend,mae,mse,linf,inv_time_seconds\n")
        for tag, report in rows:
            fh.write(f"{tag},{report.row()}\n")
    write_manifest(out, cfg, seed, sorted(set(artifacts)), unhashed=["metrics.csv"])
    return 0


def cmd_bench(cfg, args) -> int:
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    levels = [int(v) for v in cfg.get("bench", "refinements").split(",")]
    rows = analysis.scaling_study(
        cfg.get("run", "problem"), levels, cfg.getint("bench", "iterations"), seed
    )
    analysis.write_scaling_csv(rows, os.path.join(out, "scaling.csv"))
    write_manifest(out, cfg, seed, [], unhashed=["scaling.csv"])
    for dim, fs, ns in rows:
        print(f"bench: dim {dim} fem {fs:.2f}s net {ns:.2f}s")
    return 0


def cmd_hellinger(cfg, args) -> int:
    out = _out_dir(cfg, args)
    seed = _seed(cfg, args)
    problem = problem_from_config(cfg)
    net = _load_net(cfg, out, problem)
    rng = np.random.default_rng(seed)
    truth = phantom_latent(cfg, problem)
    y_obs = fem.add_noise(problem.forward(truth), cfg.getfloat("noise", "level"), rng)
    draws = cfg.getint("hellinger", "draws")
    fem_backend = problem.fem_backend()
    net_backend = problem.net_backend(net)
    l2mu = analysis.surrogate_l2mu_error(
        fem_backend, net_backend, problem.prior, draws, np.random.default_rng(seed + 1)
    )
    phi_fem = analysis.gaussian_potential(y_obs.data, lambda w: problem.forward(w).data,
                                          y_obs.noise_sigma)
    phi_net = analysis.gaussian_potential(
        y_obs.data, lambda w: surrogate.net_forward(net, problem.net_input(w)), y_obs.noise_sigma
    )
    hell = analysis.hellinger_estimate(
        problem.prior, phi_fem, phi_net, draws, np.random.default_rng(seed + 2)
    )
    path = os.path.join(out, "hellinger.csv")
    with open(path, "w") as fh:
        fh.write("draws,l2mu_error,hellinger\n")
        fh.write(f"{draws},{float(l2mu)!r},{float(hell)!r}\n")
    write_manifest(out, cfg, seed, ["hellinger.csv"])
    print(f"hellinger: l2mu {l2mu:.6f} hellinger {hell:.6f} -> {path}")
    return 0


_COMMANDS = {
    "mesh": cmd_mesh,
    "datagen": cmd_datagen,
    "train": cmd_train,
    "invert": cmd_invert,
    "compare": cmd_compare,
    "bench": cmd_bench,
    "hellinger": cmd_hellinger,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayestomo",
        description="PDE-based Bayesian inversion with surrogate-accelerated pCN sampling",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--backend", choices=("fem", "net"), default="fem")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--full-scale", action="store_true",
                        help="use publication-scale dataset/chain sizes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.full_scale:
            apply_full_scale(cfg)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, fem.SolverError, datagen.DatasetFormatError,
            surrogate.ModelFormatError, mesh_mod.MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
