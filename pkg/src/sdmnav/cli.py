"""Command-line interface for sdmnav.

Subcommands:
  - init-scenes:      Write the built-in sample scenes
  - gen-episodes:     Generate an episode dataset from scenes
  - run:              Play an agent through episodes (trajectories + results)
  - eval:             Aggregate results into a metrics CSV
  - make-sdm-dataset: Record teacher-forced SDM samples from agent rollouts
  - train-sdm:        Train the SDM encoder (params file + loss history)
  - check-gradients:  Finite-difference check of the encoder gradient
  - render-audio:     Render the binaural chunk heard at a pose to WAV
"""

import argparse
import logging
import sys
from pathlib import Path

from sdmnav import __version__
from sdmnav.agents import AGENT_NAMES
from sdmnav.audio import SOUND_SETS
from sdmnav.episode import PAIRING_MODES
from sdmnav.errors import SdmNavError

logger = logging.getLogger(__name__)


def main(argv=None):
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.command is None:
        parser.print_help()
        return 0

    try:
        return args.func(args)
    except (SdmNavError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdmnav",
        description="sdmnav: multi-goal audio-visual navigation with Sound Direction Maps.",
    )
    parser.add_argument("-V", "--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log debug diagnostics to stderr")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # --- init-scenes command ---
    init_parser = subparsers.add_parser(
        "init-scenes",
        help="Write the built-in sample scenes",
        description="Write corridor, L-shaped, two-room and open-hall scene files. "
        "Existing files are never overwritten.",
    )
    init_parser.add_argument("directory", nargs="?", default="scenes", help="Target directory (default: scenes)")
    _add_quiet(init_parser)
    init_parser.set_defaults(func=cmd_init_scenes)

    # --- gen-episodes command ---
    gen_parser = subparsers.add_parser(
        "gen-episodes",
        help="Generate an episode dataset",
        description="Sample start poses and goals under the placement constraints; "
        "episode i uses scene i mod |scenes| and goal count i mod |n-goals|.",
    )
    _add_scenes(gen_parser)
    _add_library(gen_parser)
    gen_parser.add_argument("--n-goals", type=int, nargs="+", default=[1], help="Goal count(s), cycled (default: 1)")
    gen_parser.add_argument("--n-episodes", type=int, required=True, help="Number of episodes")
    gen_parser.add_argument("--seed", type=int, required=True, help="Root seed")
    gen_parser.add_argument(
        "--sound-set",
        action="append",
        choices=SOUND_SETS,
        default=None,
        help="Sound set of the k-th goal (repeatable, cycled; default: all)",
    )
    gen_parser.add_argument("--pairing", choices=PAIRING_MODES, default="random", help="Category pairing mode")
    gen_parser.add_argument("--no-offset", action="store_true", help="Start every sound at time 0")
    gen_parser.add_argument(
        "--split",
        choices=("all", "train", "test"),
        default="all",
        help="Draw categories from a seeded train/test split of the library",
    )
    gen_parser.add_argument("--test-fraction", type=float, default=0.25, help="Share of test categories")
    gen_parser.add_argument("--budget", type=int, default=None, help="Placement attempts per episode")
    gen_parser.add_argument("--out", required=True, help="Output episode JSONL file")
    _add_quiet(gen_parser)
    gen_parser.set_defaults(func=cmd_gen_episodes)

    # --- run command ---
    run_parser = subparsers.add_parser(
        "run",
        help="Play an agent through an episode dataset",
        description="Write trajectories.jsonl and results.jsonl into --out, in episode order.",
    )
    _add_scenes(run_parser)
    _add_library(run_parser)
    run_parser.add_argument("--episodes", required=True, help="Episode JSONL file")
    run_parser.add_argument("--agent", choices=AGENT_NAMES, required=True, help="Agent to run")
    run_parser.add_argument("--params", default=None, help="Encoder params file (greedy-sdm-learned)")
    run_parser.add_argument("--seed", type=int, default=0, help="Root seed of the agents' streams (default: 0)")
    run_parser.add_argument("--workers", type=int, default=1, help="Parallel worker processes (default: 1)")
    run_parser.add_argument("--out", required=True, help="Output directory")
    _add_quiet(run_parser)
    run_parser.set_defaults(func=cmd_run)

    # --- eval command ---
    eval_parser = subparsers.add_parser(
        "eval",
        help="Compute SUCCESS, SPL, PROGRESS and PPL",
        description="Aggregate per-episode results into a metrics CSV, one row per goal count.",
    )
    _add_scenes(eval_parser)
    _add_library(eval_parser)
    eval_parser.add_argument("--results", required=True, help="results.jsonl written by 'run'")
    eval_parser.add_argument("--method", default=None, help="Method label (default: the agent of the run)")
    eval_parser.add_argument(
        "--sound-sets",
        nargs="+",
        choices=SOUND_SETS,
        default=None,
        help="Append the fraction of goals reached per sound set",
    )
    eval_parser.add_argument("--out", required=True, help="Output metrics CSV")
    _add_quiet(eval_parser)
    eval_parser.set_defaults(func=cmd_eval)

    # --- make-sdm-dataset command ---
    data_parser = subparsers.add_parser(
        "make-sdm-dataset",
        help="Record teacher-forced SDM samples",
        description="Roll a behavior agent through episodes and store (spectrogram, previous action, "
        "previous true SDM, true SDM) per step.",
    )
    _add_scenes(data_parser)
    _add_library(data_parser)
    data_parser.add_argument("--episodes", required=True, help="Episode JSONL file")
    data_parser.add_argument("--agent", choices=AGENT_NAMES, default="random", help="Behavior agent")
    data_parser.add_argument("--seed", type=int, required=True, help="Root seed")
    data_parser.add_argument("--horizon", type=int, default=200, help="Steps per episode at most (default: 200)")
    data_parser.add_argument("--max-samples", type=int, default=None, help="Stop after this many samples")
    data_parser.add_argument("--out", required=True, help="Output dataset file")
    _add_quiet(data_parser)
    data_parser.set_defaults(func=cmd_make_sdm_dataset)

    # --- train-sdm command ---
    train_parser = subparsers.add_parser(
        "train-sdm",
        help="Train the SDM encoder",
        description="Minibatch SGD with momentum on the teacher-forced MSE loss; writes params.bin "
        "and loss_history.csv into --out.",
    )
    train_parser.add_argument("--dataset", required=True, help="Dataset written by make-sdm-dataset")
    train_parser.add_argument("--params", default=None, help="Initial params (default: fresh initialisation)")
    train_parser.add_argument("--epochs", type=int, default=20, help="Epochs (default: 20)")
    train_parser.add_argument("--lr", type=float, default=1e-3, help="Learning rate (default: 1e-3)")
    train_parser.add_argument("--batch-size", type=int, default=32, help="Minibatch size (default: 32)")
    train_parser.add_argument("--seed", type=int, required=True, help="Root seed")
    train_parser.add_argument("--out", required=True, help="Output directory")
    _add_quiet(train_parser)
    train_parser.set_defaults(func=cmd_train_sdm)

    # --- check-gradients command ---
    grad_parser = subparsers.add_parser(
        "check-gradients",
        help="Check the encoder gradient against finite differences",
        description="For each seed, draw fresh parameters and a random batch and compare "
        "backpropagation with central differences on sampled coordinates.",
    )
    grad_parser.add_argument("--seeds", type=int, default=10, help="Number of seeds (default: 10)")
    grad_parser.add_argument("--n-coords", type=int, default=5, help="Random coordinates per tensor (default: 5)")
    grad_parser.add_argument("--eps", type=float, default=1e-6, help="Finite-difference step (default: 1e-6)")
    grad_parser.add_argument("--tolerance", type=float, default=1e-4, help="Maximum relative error (default: 1e-4)")
    _add_quiet(grad_parser)
    grad_parser.set_defaults(func=cmd_check_gradients)

    # --- render-audio command ---
    audio_parser = subparsers.add_parser(
        "render-audio",
        help="Render the binaural chunk heard at a pose",
        description="Render the 0.25 s chunk heard at --pose while every goal of the chosen episode sounds.",
    )
    _add_scenes(audio_parser)
    _add_library(audio_parser)
    audio_parser.add_argument("--episodes", required=True, help="Episode JSONL file")
    audio_parser.add_argument("--index", type=int, default=0, help="Episode index (default: 0)")
    audio_parser.add_argument(
        "--pose",
        type=float,
        nargs=3,
        metavar=("X", "Y", "HEADING"),
        default=None,
        help="Listener pose (default: the episode start)",
    )
    audio_parser.add_argument("--time", type=float, default=0.0, help="Episode time in seconds (default: 0)")
    audio_parser.add_argument("--out", required=True, help="Output WAV file")
    _add_quiet(audio_parser)
    audio_parser.set_defaults(func=cmd_render_audio)

    return parser


def _add_scenes(parser: argparse.ArgumentParser):
    parser.add_argument("--scenes", nargs="+", required=True, help="Scene files or directories of *.scene files")


def _add_library(parser: argparse.ArgumentParser):
    parser.add_argument("--library", default=None, help="Sound library JSON (default: built-in library)")


def _add_quiet(parser: argparse.ArgumentParser):
    parser.add_argument("--quiet", action="store_true", help="Suppress progress output")


# ---------------------------------------------------------------------------
# Shared loaders
# ---------------------------------------------------------------------------

def _scene_paths(entries: list[str]) -> list[Path]:
    from sdmnav.samples import SCENE_SUFFIX

    paths = []
    for entry in entries:
        path = Path(entry)
        if path.is_dir():
            found = sorted(path.glob(f"*{SCENE_SUFFIX}"))
            if not found:
                raise SdmNavError(f"no {SCENE_SUFFIX} files in {path}")
            paths.extend(found)
        else:
            paths.append(path)
    return paths


def _load_scenes(args):
    from sdmnav.scene import load_scenes

    return load_scenes(_scene_paths(args.scenes))


def _load_library(args):
    from sdmnav.audio import default_library, load_library

    if args.library is None:
        return default_library()
    return load_library(Path(args.library).read_bytes())


def _load_episodes(path, scenes):
    from sdmnav.episode import parse_dataset

    return parse_dataset(Path(path).read_bytes(), scenes)


def _header(args) -> dict:
    from sdmnav.config import RunConfig

    return RunConfig.from_args(args).as_header()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_init_scenes(args) -> int:
    """Handle the 'init-scenes' command."""
    from sdmnav.samples import write_sample_scenes

    directory = Path(args.directory)
    if not args.quiet:
        print(f"Writing sample scenes into: {directory}")
    created = write_sample_scenes(directory, verbose=not args.quiet)
    if not args.quiet:
        print(f"\nDone! {len(created)} scene file(s) created. Next step:")
        print(f"  sdmnav gen-episodes --scenes {directory} --n-episodes 10 --seed 0 --out episodes.jsonl")
    return 0


def cmd_gen_episodes(args) -> int:
    """Handle the 'gen-episodes' command."""
    from sdmnav.audio import sound_set, split_categories
    from sdmnav.episode import DEFAULT_SAMPLING_BUDGET, generate_episode, write_dataset
    from sdmnav.runio import header_line
    from sdmnav.seeding import derive_seed, make_rng

    if args.n_episodes < 1:
        raise SdmNavError("--n-episodes must be >= 1")
    scenes = _load_scenes(args)
    grids = [scenes[k] for k in sorted(scenes)]
    library = _load_library(args)
    if args.split != "all":
        train, test = split_categories(library, args.test_fraction, make_rng(args.seed, "category-split"))
        library = train if args.split == "train" else test
    pools = []
    for name in args.sound_set or ["all"]:
        pool = [c.id for c in sound_set(library, name)]
        if not pool:
            raise SdmNavError(f"sound set '{name}' is empty for this library")
        pools.append(pool)

    episodes = []
    for i in range(args.n_episodes):
        grid = grids[i % len(grids)]
        episodes.append(generate_episode(
            grid,
            args.n_goals[i % len(args.n_goals)],
            make_rng(args.seed, "episode", i),
            seed=derive_seed(args.seed, "episode", i),
            category_pools=pools,
            pairing=args.pairing,
            random_offsets=not args.no_offset,
            budget=args.budget or DEFAULT_SAMPLING_BUDGET,
        ))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(header_line(_header(args)).encode("utf-8") + write_dataset(episodes))
    if not args.quiet:
        print(f"  -> {out}")
        print(f"\nDone! {len(episodes)} episodes over {len(grids)} scene(s).")
    return 0


def cmd_run(args) -> int:
    """Handle the 'run' command."""
    from sdmnav.rollout import run_many
    from sdmnav.runio import write_jsonl

    scenes = _load_scenes(args)
    library = {c.id: c for c in _load_library(args)}
    episodes = _load_episodes(args.episodes, scenes)
    params = _load_params(args.params) if args.params else None
    if args.agent == "greedy-sdm-learned" and params is None:
        raise SdmNavError("agent 'greedy-sdm-learned' needs --params")

    runs = run_many(scenes, episodes, library, args.agent, args.seed, params=params, workers=args.workers)
    header = _header(args)
    out = Path(args.out)
    trajectories = write_jsonl(out / "trajectories.jsonl", (r for run in runs for r in run.records), header)
    results = write_jsonl(out / "results.jsonl", (run.result.to_record() for run in runs), header)
    if not args.quiet:
        print(f"  -> {trajectories}")
        print(f"  -> {results}")
        n_success = sum(run.result.success for run in runs)
        print(f"\nDone! {args.agent}: {n_success}/{len(runs)} episodes fully solved.")
    return 0


def cmd_eval(args) -> int:
    """Handle the 'eval' command."""
    from sdmnav.metrics import (
        METRIC_COLUMNS,
        EpisodeResult,
        aggregate,
        format_value,
        metrics_rows,
        n_goals_label,
        reachability_by_set,
    )
    from sdmnav.runio import dump_csv, read_jsonl

    scenes = _load_scenes(args)
    run_header, records = read_jsonl(Path(args.results))
    results = [EpisodeResult.from_record(r) for r in records]
    if not results:
        raise SdmNavError(f"no results in {args.results}")
    method = args.method or (run_header or {}).get("config", {}).get("agent", "unknown")

    labelled = []
    for n in sorted({r.episode.n_goals for r in results}):
        subset = [r for r in results if r.episode.n_goals == n]
        labelled.append((method, str(n), aggregate(scenes, subset)))
    if len(labelled) > 1:
        labelled.append((method, n_goals_label(results), aggregate(scenes, results)))

    # Identify the results by their run header, not their path.
    header = _header(args)
    del header["config"]["results"]
    header["results_run"] = run_header
    text = dump_csv(METRIC_COLUMNS, metrics_rows(labelled), header)
    if args.sound_sets:
        fractions = reachability_by_set(results, _load_library(args), args.sound_sets)
        rows = [[method, name, format_value(value)] for name, value in fractions.items()]
        text += "\n" + dump_csv(("method", "sound_set", "reached_fraction"), rows)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    if not args.quiet:
        for label, n_goals, report in labelled:
            print(
                f"  {label} n_goals={n_goals}: SUCCESS={report.success} SPL={report.spl} "
                f"PROGRESS={report.progress} PPL={report.ppl} N={report.n}"
            )
        print(f"  -> {out}")
    return 0


def cmd_make_sdm_dataset(args) -> int:
    """Handle the 'make-sdm-dataset' command."""
    from sdmnav.seeding import make_rng
    from sdmnav.training import make_dataset, write_sdm_dataset

    scenes = _load_scenes(args)
    library = {c.id: c for c in _load_library(args)}
    episodes = _load_episodes(args.episodes, scenes)
    dataset = make_dataset(
        scenes,
        episodes,
        library,
        args.agent,
        make_rng(args.seed, "behavior"),
        horizon=args.horizon,
        max_samples=args.max_samples,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(write_sdm_dataset(dataset, _header(args)))
    if not args.quiet:
        print(f"  -> {out}")
        print(f"\nDone! {len(dataset)} samples from {len(set(dataset.episodes.tolist()))} episode(s).")
    return 0


def cmd_train_sdm(args) -> int:
    """Handle the 'train-sdm' command."""
    from sdmnav.encoder import init_params, params_to_bytes
    from sdmnav.runio import write_csv
    from sdmnav.seeding import make_rng
    from sdmnav.training import (
        mean_predictor_mse,
        read_sdm_dataset,
        score_rollouts,
        sdm_mse,
        teacher_forced_predict,
        train_encoder,
    )

    dataset = read_sdm_dataset(Path(args.dataset).read_bytes())
    params = _load_params(args.params) if args.params else init_params(make_rng(args.seed, "encoder-init"))
    trained, history = train_encoder(
        params,
        dataset,
        args.epochs,
        make_rng(args.seed, "training"),
        learning_rate=args.lr,
        batch_size=args.batch_size,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params_file = out / "params.bin"
    params_file.write_bytes(params_to_bytes(trained))
    rows = [[epoch, f"{loss:.9g}"] for epoch, loss in enumerate(history, start=1)]
    loss_file = write_csv(out / "loss_history.csv", ("epoch", "loss"), rows, _header(args))
    scores = score_rollouts(trained, dataset)
    eval_rows = [[s.episode, s.steps, f"{s.teacher_forced_mse:.9g}", f"{s.closed_loop_mse:.9g}"] for s in scores]
    eval_file = write_csv(
        out / "sdm_eval.csv", ("episode", "steps", "teacher_forced_mse", "closed_loop_mse"), eval_rows, _header(args)
    )
    if not args.quiet:
        mse = sdm_mse(teacher_forced_predict(trained, dataset), dataset.targets)
        baseline = mean_predictor_mse(dataset)
        print(f"  -> {params_file}")
        print(f"  -> {loss_file}")
        print(f"  -> {eval_file}")
        print(f"\nDone! teacher-forced MSE {mse:.6f} (mean predictor {baseline:.6f}).")
    return 0


def cmd_check_gradients(args) -> int:
    """Handle the 'check-gradients' command."""
    from sdmnav.encoder import gradient_check, init_params, random_batch
    from sdmnav.seeding import make_rng

    worst = 0.0
    for seed in range(args.seeds):
        rng = make_rng(seed, "gradient-check")
        params = init_params(rng)
        errors = gradient_check(params, random_batch(rng), rng, n_coords=args.n_coords, eps=args.eps)
        name = max(errors, key=errors.get)
        worst = max(worst, errors[name])
        if not args.quiet:
            print(f"  seed {seed}: max relative error {errors[name]:.3e} ({name})")
    ok = worst < args.tolerance
    if not args.quiet:
        verdict = "passed" if ok else "FAILED"
        print(f"\nGradient check {verdict}: worst relative error {worst:.3e} (tolerance {args.tolerance:g}).")
    return 0 if ok else 1


def cmd_render_audio(args) -> int:
    """Handle the 'render-audio' command."""
    from sdmnav.audio import SourceState, export_wav, render_binaural
    from sdmnav.scene import Point, Pose

    scenes = _load_scenes(args)
    library = {c.id: c for c in _load_library(args)}
    episodes = _load_episodes(args.episodes, scenes)
    if not 0 <= args.index < len(episodes):
        raise SdmNavError(f"episode index {args.index} out of range (dataset has {len(episodes)})")
    episode = episodes[args.index]
    grid = scenes[episode.scene_id]
    if args.pose is None:
        pose = Pose(episode.start_pos, episode.start_heading)
    else:
        x, y, heading = args.pose
        pose = Pose(Point(x, y), int(heading))

    sources = []
    for goal, offset in zip(episode.goals, episode.playback_offsets):
        if goal.category not in library:
            raise SdmNavError(f"unknown sound category {goal.category}")
        sources.append(SourceState(goal.position, library[goal.category], offset))
    chunk = render_binaural(grid, pose, sources, args.time)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(export_wav(chunk))
    if not args.quiet:
        print(f"  -> {out}")
    return 0


def _load_params(path):
    from sdmnav.encoder import params_from_bytes

    return params_from_bytes(Path(path).read_bytes())
