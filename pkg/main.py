"""
Expected Exposure Toolkit - Main Entry Point

CLI to evaluate rankers as distributions over rankings, sweep stochastic
policies into disparity-relevance curves, generate synthetic collections and
train exposure-optimizing rankers.

Usage:
    python main.py synth --out data/synth --n-queries 50 --noise 0.5
    python main.py eval --run data/synth/run.txt --qrels data/synth/qrels.txt --policy pl --grid 1
    python main.py sweep --run data/synth/run.txt --qrels data/synth/qrels.txt --policy rt --static
    python main.py train --features data/synth/features.txt --groups data/synth/groups.txt --objective ee
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional

from tqdm import tqdm

from config.settings import (
    DEFAULT_BROWSING_MODEL, DEFAULT_GAMMA, DEFAULT_DEPTH, DEFAULT_SAMPLES, DEFAULT_RERANK_DEPTH,
    DEFAULT_POLICY, DEFAULT_SEED, TEST_SAMPLES, SPLIT_FRACTIONS, TRAINING_PROFILES,
    DEFAULT_TRAINING_PROFILE,
    get_points_csv_path, get_auc_csv_path, get_static_csv_path, get_table_csv_path,
    get_manifest_path, get_diagnostics_path, get_checkpoint_path, load_config_file,
)
from config.grade_tables import (
    DEFAULT_PL_GRID, DEFAULT_RT_GRID, DEFAULT_LAMBDA_GRID, DEFAULT_INVERSE_TEMPERATURE_GRID,
    parse_phi_table, parse_grid,
)
from src.analysis import paired_significance
from src.exceptions import ConfigurationError, DivergenceError, ExposureError
from src.exposure import (
    BrowsingModel, expected_exposure_mc, query_seed, ranking_exposure, target_exposure,
)
from src.ltr import TrainConfig, evaluate_trained, train
from src.metrics import (
    GROUP_MODES, GroupAttribution, ee_auc, ee_breakdown, generalized_entropy, group_fairness_loss,
    normalize_curve_point,
)
from src.policies import POLICY_KINDS, build_policy, expected_static_metrics, sweep
from src.readers import (
    attach_groups, format_features, format_groups, format_qrels, format_run, load_inputs,
    normalize_splits, parse_features_file, parse_groups_file,
)
from src.report_generator import (
    curve_rows, get_sweep_summary, print_sweep_summary, print_training_table, write_results,
    write_static_metrics, write_training_table,
)
from src.synthetic import SynthSpec, synth_collection, synth_ltr
from src.utils.logger import get_main_logger
from src.utils.storage import initialize_output_directories, save_checkpoint, save_json, write_lines

logger = get_main_logger()

NAN = float("nan")
BASELINES = ("pointwise", "pairwise")


def _hidden_sizes(text: str):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _flag(text) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='Plain key=value config file; keys match flag names')
    parser.add_argument('--model', choices=('rbp', 'err'), default=DEFAULT_BROWSING_MODEL,
                        help='Browsing model')
    parser.add_argument('--gamma', type=float, default=DEFAULT_GAMMA, help='Patience in (0, 1)')
    parser.add_argument('--depth', type=int, default=DEFAULT_DEPTH,
                        help='Ranks at or beyond this depth get no exposure')
    parser.add_argument('--phi', type=parse_phi_table, default=None,
                        help='ERR stop probabilities as grade:prob pairs, e.g. 1:0.5,2:0.75')
    parser.add_argument('--samples', type=int, default=DEFAULT_SAMPLES,
                        help='Rankings sampled per stochastic policy')
    parser.add_argument('--rerank-depth', type=int, default=DEFAULT_RERANK_DEPTH,
                        help='Documents of the run that are randomized')
    parser.add_argument('--seed', type=int, default=DEFAULT_SEED, help='Global random seed')
    parser.add_argument('--out', default=None, help='Output directory')
    parser.add_argument('--workers', type=int, default=1, help='Queries processed in parallel')


def _add_group_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--groups', default=None,
                        help='Group file (query doc group); adds group breakdown columns')
    parser.add_argument('--group-mode', choices=GROUP_MODES, default='demographic_parity',
                        help='Group fairness target used with --groups')


def build_parser():
    """
    Build the argument parser.

    Returns:
        (parser, subcommand name -> subparser)
    """
    parser = argparse.ArgumentParser(
        description='Expected Exposure Toolkit - evaluate and train stochastic rankers',
        allow_abbrev=False,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    python main.py synth --out data/synth --n-queries 50 --noise 0.5
    python main.py eval --run run.txt --qrels qrels.txt --policy oracle --samples 1000
    python main.py sweep --run run.txt --qrels qrels.txt --policy pl --grid 0,1,2,4,8
    python main.py train --features features.txt --groups groups.txt --objective group
        """
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    commands = {}

    eval_parser = subparsers.add_parser(
        'eval', help='Per-query expected-exposure breakdown', allow_abbrev=False
    )
    eval_parser.add_argument('--run', required=True, help='TREC run file')
    eval_parser.add_argument('--qrels', required=True, help='TREC qrels file')
    eval_parser.add_argument('--policy', choices=POLICY_KINDS, default=DEFAULT_POLICY,
                             help='Policy wrapped around the run')
    eval_parser.add_argument('--grid', type=parse_grid, default=None,
                             help='Policy parameter; the first value is used')
    _add_group_arguments(eval_parser)
    commands['eval'] = eval_parser

    sweep_parser = subparsers.add_parser(
        'sweep', help='Disparity-relevance curves and EE-AUC', allow_abbrev=False
    )
    sweep_parser.add_argument('--run', required=True, help='TREC run file')
    sweep_parser.add_argument('--qrels', required=True, help='TREC qrels file')
    sweep_parser.add_argument('--policy', choices=('pl', 'rt'), default=DEFAULT_POLICY,
                              help='Randomization family')
    sweep_parser.add_argument('--grid', type=parse_grid, default=None,
                              help='Comma-separated alpha (pl) or beta (rt) values')
    sweep_parser.add_argument('--static', type=_flag, nargs='?', const=True, default=False,
                              help='Also write expected static RBP/ERR and generalized entropy')
    _add_group_arguments(sweep_parser)
    commands['sweep'] = sweep_parser

    synth_parser = subparsers.add_parser(
        'synth', help='Generate a synthetic collection', allow_abbrev=False
    )
    synth_parser.add_argument('--n-queries', type=int, default=50)
    synth_parser.add_argument('--pool-size', type=int, default=100)
    synth_parser.add_argument('--grades', type=parse_grid, default=[0.9, 0.1],
                              help='Probability of each grade, starting at grade 0')
    synth_parser.add_argument('--noise', type=float, default=0.0, help='Score noise standard deviation')
    synth_parser.add_argument('--n-relevant', type=int, default=None,
                              help='Exactly this many grade-1 documents per query')
    synth_parser.add_argument('--n-features', type=int, default=10)
    commands['synth'] = synth_parser

    train_parser = subparsers.add_parser(
        'train', help='Train and compare exposure-optimizing rankers', allow_abbrev=False
    )
    train_parser.add_argument('--features', required=True, help='SVMlight feature file')
    train_parser.add_argument('--groups', default=None, help='Group file (query doc group)')
    train_parser.add_argument('--objective', choices=('ee', 'group', 'pointwise', 'pairwise'),
                              default='ee', help='Objective of the primary model')
    train_parser.add_argument('--lambda', dest='lambda_', type=parse_grid, default=None,
                              help='Tradeoff values; one model is trained per value')
    train_parser.add_argument('--grid', type=parse_grid, default=None,
                              help='Inverse temperatures every trained model is randomized over')
    train_parser.add_argument('--profile', choices=TRAINING_PROFILES, default=DEFAULT_TRAINING_PROFILE,
                              help='Hyperparameter profile; the flags below override it')
    train_parser.add_argument('--tau', type=float, default=None)
    train_parser.add_argument('--train-samples', type=int, default=None)
    train_parser.add_argument('--lr', type=float, default=None)
    train_parser.add_argument('--dropout', type=float, default=None)
    train_parser.add_argument('--hidden', type=_hidden_sizes, default=None,
                              help='Hidden layer sizes, e.g. 256,256; empty for a linear model')
    train_parser.add_argument('--epochs', type=int, default=None)
    train_parser.add_argument('--patience', type=int, default=None)
    train_parser.add_argument('--batch-size', type=int, default=None)
    train_parser.add_argument('--optimizer', choices=('sgd', 'adam'), default=None)
    train_parser.add_argument('--momentum', type=float, default=None)
    commands['train'] = train_parser

    for sub in commands.values():
        _add_common_arguments(sub)
    commands['train'].set_defaults(samples=TEST_SAMPLES)
    return parser, commands


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command line arguments, layering a config file under the flags.

    Precedence is flag, then config file, then built-in default.

    Returns:
        Namespace of resolved options
    """
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args

    subparser = commands[args.command]
    actions = {a.dest: a for a in subparser._actions if a.dest not in ('help', 'config')}
    aliases = {name.replace('-', '_').lstrip('_'): dest
               for dest, a in actions.items() for name in a.option_strings}

    try:
        values = load_config_file(args.config)
    except FileNotFoundError as e:
        raise ConfigurationError(str(e)) from None

    defaults = {}
    for key, raw in values.items():
        dest = aliases.get(key)
        if dest is None:
            raise ConfigurationError(f"Unknown config key '{key}' for command {args.command}")
        convert = actions[dest].type
        try:
            defaults[dest] = convert(raw) if convert else raw
        except ValueError as e:
            raise ConfigurationError(f"Invalid config value {key}={raw}: {e}") from None
        if actions[dest].choices is not None and defaults[dest] not in actions[dest].choices:
            raise ConfigurationError(f"Invalid config value {key}={raw}")

    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def build_browsing_model(args: argparse.Namespace) -> BrowsingModel:
    if args.model == 'err':
        return BrowsingModel.err(args.gamma, args.depth, args.phi)
    return BrowsingModel.rbp(args.gamma, args.depth)


def _map_queries(func: Callable, items: List, workers: int, desc: str) -> List:
    """Apply func to every item; results keep item order."""
    if workers <= 1:
        return [func(item) for item in tqdm(items, desc=desc)]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(tqdm(executor.map(func, items), total=len(items), desc=desc))


def _paired_queries(runs, qrels) -> tuple:
    paired = [(query_id, run, qrels[query_id]) for query_id, run in runs.items() if query_id in qrels]
    missing = [query_id for query_id in runs if query_id not in qrels]
    for query_id in missing:
        logger.warning(f"Query {query_id} has no judgments, skipping")
    return paired, missing


def _group_attributions(args: argparse.Namespace, paired: List) -> Dict[str, GroupAttribution]:
    """Group attribution per evaluated query; every pooled document needs a group."""
    if not args.groups:
        return {}
    groups = parse_groups_file(args.groups)
    attributions = {}
    for query_id, run, judgments in paired:
        pool = judgments.extended(run.documents).pool
        assignments = groups.get(query_id, {})
        missing = [doc_id for doc_id in pool if doc_id not in assignments]
        if missing:
            raise ConfigurationError(
                f"Query {query_id}: {len(missing)} documents have no group, e.g. {missing[:5]}"
            )
        attributions[query_id] = GroupAttribution.from_assignments({d: assignments[d] for d in pool})
    logger.info(f"Group breakdown ({args.group_mode}) for {len(attributions)} queries")
    return attributions


def cmd_eval(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Per-query breakdown of one policy wrapped around a run.

    Args:
        args: Parsed arguments

    Returns:
        Summary dictionary
    """
    logger.info("=" * 60)
    logger.info(f"Evaluating {args.run} with policy {args.policy}")
    logger.info("=" * 60)

    out_dir = initialize_output_directories(args.out)
    model = build_browsing_model(args)
    runs, qrels, _ = load_inputs(args.run, args.qrels)
    paired, missing = _paired_queries(runs, qrels)
    attributions = _group_attributions(args, paired)
    param = args.grid[0] if args.grid else None
    if args.policy in ('pl', 'rt') and param is None:
        param = {'pl': 1.0, 'rt': 0.5}[args.policy]
    empty = []

    def evaluate(item):
        query_id, run, judgments = item
        pool = judgments.extended(run.documents)
        if pool.num_relevant == 0:
            logger.warning(f"Query {query_id} has no relevant documents")
            empty.append(query_id)
        policy = build_policy(args.policy, run, pool, param, args.rerank_depth)
        if args.policy == 'det':
            exposure = ranking_exposure(model, run.ranking(), pool)
        else:
            exposure = expected_exposure_mc(
                policy, model, pool, args.samples, query_seed(args.seed, query_id)
            )
        breakdown = ee_breakdown(exposure, target_exposure(model, pool))
        try:
            d_norm, r_norm = normalize_curve_point(breakdown, pool, model)
        except ExposureError as e:
            logger.debug(f"Query {query_id}: {e}")
            d_norm, r_norm = NAN, NAN
        row = {
            "query": query_id, "policy": args.policy,
            "param": NAN if param is None else param,
            "ee_l": breakdown.ee_l, "ee_d": breakdown.ee_d, "ee_r": breakdown.ee_r,
            "d_norm": d_norm, "r_norm": r_norm,
        }
        if query_id in attributions:
            row.update(group_ee_l=NAN, group_ee_d=NAN, group_ee_r=NAN)
            try:
                group = group_fairness_loss(exposure, attributions[query_id], pool, args.group_mode, model)
                row.update(group_ee_l=group.ee_l, group_ee_d=group.ee_d, group_ee_r=group.ee_r)
            except ExposureError as e:
                logger.warning(f"No group breakdown for query {query_id}: {e}")
        return row

    rows = _map_queries(evaluate, paired, args.workers, "eval")
    paths = write_results(rows, None, get_points_csv_path(out_dir))

    if empty:
        logger.warning(f"{len(empty)} queries have no relevant documents: {sorted(empty)[:10]}")
    summary = get_sweep_summary([], missing, paths)
    summary["n_queries"] = len(rows)
    summary["empty_relevance"] = sorted(empty)
    print_sweep_summary(summary)
    return summary


def _static_rows(args, model, query_id, run, pool, grid) -> List[Dict[str, Any]]:
    rbp = BrowsingModel.rbp(model.gamma, model.depth)
    err = BrowsingModel.err(model.gamma, model.depth, model.stop_table)
    rows = []
    for position, param in enumerate(grid):
        seed = query_seed(args.seed, query_id, position)
        row = {"query": query_id, "policy": args.policy, "param": param,
               "static_rbp": NAN, "static_err": NAN, "generalized_entropy": NAN}
        try:
            policy = build_policy(args.policy, run, pool, param, args.rerank_depth)
            row["static_rbp"] = expected_static_metrics(policy, pool, rbp, args.samples, seed)
            row["static_err"] = expected_static_metrics(policy, pool, err, args.samples, seed)
            exposure = expected_exposure_mc(policy, model, pool, args.samples, seed)
            row["generalized_entropy"] = generalized_entropy(exposure, pool)
        except ExposureError as e:
            logger.debug(f"Static metrics of {query_id} at {param}: {e}")
        rows.append(row)
    return rows


def cmd_sweep(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Sweep a randomization family per query into curves and EE-AUC.

    Args:
        args: Parsed arguments

    Returns:
        Summary dictionary
    """
    logger.info("=" * 60)
    logger.info(f"Sweeping {args.run} with {args.policy}")
    logger.info("=" * 60)

    out_dir = initialize_output_directories(args.out)
    model = build_browsing_model(args)
    grid = args.grid or (DEFAULT_PL_GRID if args.policy == 'pl' else DEFAULT_RT_GRID)
    runs, qrels, _ = load_inputs(args.run, args.qrels)
    paired, missing = _paired_queries(runs, qrels)
    attributions = _group_attributions(args, paired)

    def run_query(item):
        query_id, run, judgments = item
        curve = sweep(run, judgments, model, args.policy, grid, args.samples, args.seed,
                      args.rerank_depth, groups=attributions.get(query_id), group_mode=args.group_mode)
        try:
            auc = ee_auc(curve)
        except ExposureError as e:
            logger.warning(f"No EE-AUC for query {query_id}: {e}")
            auc = None
        static = []
        if args.static:
            static = _static_rows(args, model, query_id, run, judgments.extended(run.documents), grid)
        return curve, auc, static

    results = _map_queries(run_query, paired, args.workers, "sweep")
    curves = [curve for curve, _, _ in results]
    aucs = [(curve.query_id, args.policy, auc) for curve, auc, _ in results if auc is not None]

    paths = write_results(
        curve_rows(curves), aucs, get_points_csv_path(out_dir), get_auc_csv_path(out_dir)
    )
    if args.static:
        static_rows = [row for _, _, rows in results for row in rows]
        paths["static"] = write_static_metrics(static_rows, get_static_csv_path(out_dir))

    skipped_points = sum(curve.skipped for curve in curves)
    if skipped_points:
        logger.warning(f"{skipped_points} grid points were skipped across queries")

    summary = get_sweep_summary(aucs, missing, paths)
    print_sweep_summary(summary)
    return summary


def cmd_synth(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Write a synthetic run, qrels, feature file and group file.

    Args:
        args: Parsed arguments

    Returns:
        dict: Kind -> written path
    """
    out_dir = initialize_output_directories(args.out)
    spec = SynthSpec(
        n_queries=args.n_queries,
        pool_size=args.pool_size,
        grade_distribution=tuple(args.grades),
        noise=args.noise,
        seed=args.seed,
        n_relevant=args.n_relevant,
        n_features=args.n_features,
    )
    qrels, runs = synth_collection(spec)
    dataset = synth_ltr(spec)

    paths = {
        "run": f"{out_dir}/run.txt",
        "qrels": f"{out_dir}/qrels.txt",
        "features": f"{out_dir}/features.txt",
        "groups": f"{out_dir}/groups.txt",
    }
    write_lines(format_run(runs.values(), "synth"), paths["run"])
    write_lines(format_qrels(qrels.values()), paths["qrels"])
    write_lines(format_features(dataset), paths["features"])
    write_lines(format_groups(dataset), paths["groups"])

    for kind, path in paths.items():
        logger.info(f"{kind} saved to: {path}")
    return paths


def _evaluate_model(name, objective, scorer, test, model, args, temperatures, has_groups):
    individual = evaluate_trained(scorer, test, model, temperatures, args.samples, args.seed,
                                  "individual", name)
    group = None
    if has_groups:
        group = evaluate_trained(scorer, test, model, temperatures, args.samples, args.seed,
                                 "demographic_parity", name)
    return {"model": name, "objective": objective, "individual": individual, "group": group}


def cmd_train(args: argparse.Namespace) -> List[Dict[str, Any]]:
    """
    Train the primary model and the pointwise/pairwise baselines, then compare.

    Exposure objectives get one model per lambda; every model is randomized
    over the inverse temperatures. A group primary is also compared with the
    ee objective. Each row of the table carries a paired t-test of the
    primary model against it.

    Args:
        args: Parsed arguments

    Returns:
        Table rows
    """
    logger.info("=" * 60)
    logger.info(f"Training {args.objective} ranker on {args.features}")
    logger.info("=" * 60)

    out_dir = initialize_output_directories(args.out)
    model = build_browsing_model(args)

    logger.info("Step 1: Reading features...")
    dataset = parse_features_file(args.features, min_docs=2)
    if args.groups:
        dataset = attach_groups(dataset, parse_groups_file(args.groups))
    has_groups = bool(dataset.group_labels)
    if args.objective == 'group' and not has_groups:
        raise ConfigurationError("The group objective needs --groups")

    train_split, valid_split, test_split = dataset.split(SPLIT_FRACTIONS, args.seed)
    train_split, valid_split, test_split = normalize_splits(train_split, valid_split, test_split)
    logger.info(f"Split sizes: train={len(train_split)} valid={len(valid_split)} test={len(test_split)}")

    lambdas = args.lambda_ or DEFAULT_LAMBDA_GRID
    temperatures = args.grid or DEFAULT_INVERSE_TEMPERATURE_GRID

    def config_for(lam: float) -> TrainConfig:
        return TrainConfig.for_profile(
            args.profile,
            lam=lam, tau=args.tau, train_samples=args.train_samples, test_samples=args.samples,
            learning_rate=args.lr, dropout=args.dropout, hidden_sizes=args.hidden,
            epochs=args.epochs, patience=args.patience, batch_size=args.batch_size,
            optimizer=args.optimizer, momentum=args.momentum, seed=args.seed,
            browsing_model=model,
        )

    manifest = {
        "command": "train",
        "objective": args.objective,
        "profile": args.profile,
        "config": config_for(lambdas[0]).to_dict(),
        "reference_config": TrainConfig.for_profile("reference", browsing_model=model).to_dict(),
        "lambda_grid": list(lambdas),
        "inverse_temperature_grid": list(temperatures),
        "splits": {"train": len(train_split), "valid": len(valid_split), "test": len(test_split)},
        "checkpoints": [],
    }
    logger.info(f"Config: {manifest['config']}")

    logger.info("Step 2: Training models...")
    objectives = list(BASELINES)
    if args.objective == 'group':
        objectives.append('ee')
    if args.objective not in BASELINES:
        objectives.append(args.objective)

    results = []
    for objective in objectives:
        if objective in BASELINES:
            scorer = train(train_split, objective, config_for(lambdas[0]), valid_split)
            path = get_checkpoint_path(out_dir, objective)
            save_checkpoint(scorer, config_for(lambdas[0]).to_dict(), path)
            manifest["checkpoints"].append(path)
            trained = scorer
        else:
            trained = {}
            for lam in lambdas:
                trained[lam] = train(train_split, objective, config_for(lam), valid_split)
                path = get_checkpoint_path(out_dir, objective, lam)
                save_checkpoint(trained[lam], config_for(lam).to_dict(), path)
                manifest["checkpoints"].append(path)
        results.append(_evaluate_model(
            objective, objective, trained, test_split, model, args, temperatures, has_groups
        ))

    logger.info("Step 3: Comparing models...")
    primary = next(r for r in results if r["objective"] == args.objective)
    fairness = "group" if args.objective == "group" else "individual"
    rows = []
    for result in results:
        row = {
            "model": result["model"],
            "objective": result["objective"],
            "ee_auc": result["individual"].mean_auc,
            "dp_auc": result["group"].mean_auc if result["group"] is not None else NAN,
            "n_queries": len(result["individual"].auc),
            "t_stat": NAN,
            "p_value": NAN,
        }
        if result is not primary and result[fairness] is not None:
            try:
                test = paired_significance(primary[fairness].auc, result[fairness].auc)
                row["t_stat"], row["p_value"] = test["t_stat"], test["p_value"]
            except ConfigurationError as e:
                logger.warning(f"No significance test against {result['model']}: {e}")
        rows.append(row)

    table_path = write_training_table(rows, get_table_csv_path(out_dir))
    manifest["table"] = table_path
    save_json(manifest, get_manifest_path(out_dir))
    print_training_table(rows)
    return rows


COMMANDS = {
    'eval': cmd_eval,
    'sweep': cmd_sweep,
    'synth': cmd_synth,
    'train': cmd_train,
}


def main(argv: Optional[List[str]] = None):
    """Main entry point."""
    args = None
    try:
        args = parse_arguments(argv)
        COMMANDS[args.command](args)
    except KeyboardInterrupt:
        logger.info("\nInterrupted by user")
        sys.exit(1)
    except DivergenceError as e:
        path = get_diagnostics_path(args.out if args is not None else None)
        save_json(e.diagnostics, path)
        logger.error(f"Training diverged: {e} (diagnostics in {path})")
        sys.exit(1)
    except ExposureError as e:
        logger.error(f"Error: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
