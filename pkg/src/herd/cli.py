"""Command-line entry point: build, embed, optimize, compare, export-svg."""
from __future__ import annotations

import argparse
import json
import shlex
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .design import GridShape, ParseError, parse, parse_types
from .embedding import EmbedConfig, EmbeddingTable, check_embedding, embed_tree
from .fitness import EvaluatorError, EvaluatorSpec
from .geometry import BallConfig
from .hierarchy import (
    ClusterConfig,
    DesignTree,
    TreeBuildConfig,
    build_tree,
    default_levels,
    nested_kmeans,
)
from .optimizer import (
    CemConfig,
    EaConfig,
    RunAborted,
    RunLog,
    run_c2f_ea,
    run_flat_cem,
    run_herd,
    run_random_search,
)

EXIT_OK, EXIT_INVALID, EXIT_EMBED, EXIT_EVAL = 0, 1, 2, 3
OPTIMIZERS = ("herd", "flat_cem", "c2f_ea", "random")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    grid: str = "5x5"
    levels: str = ""
    types: str = "ERSHV"
    max_nodes: int = 20000
    max_children: int = 8
    seed: int = 0
    tau: float = 1.0
    dim: int = 2
    curvature: float = 1.0
    pop: int = 10
    elite: int = 0
    iters: int = 60
    sigma_start: float = 0.2
    sigma_end: float = 0.01
    optimizer: str = "herd"
    evaluator: str = "planted_node"
    eval_cmd: str = ""
    eval_timeout: float = 0.0
    target: str = ""
    target_node: int = -1
    target_fraction: float = 0.4
    weights: str = ""
    budget: int = 0
    generations: int = 0
    methods: str = ",".join(OPTIMIZERS)
    seeds: str = "0-19"
    cache: bool = True
    out: str = "out"

    # -- derived values, validated on access --------------------------------
    @property
    def shape(self) -> GridShape:
        try:
            rows, cols = (int(x) for x in self.grid.lower().split("x"))
            return GridShape(rows, cols)
        except ValueError as exc:
            raise ConfigError(f"--grid must look like 5x5, got {self.grid!r}") from exc

    @property
    def level_list(self) -> tuple[int, ...]:
        if not self.levels:
            return default_levels(self.shape)
        try:
            return tuple(int(x) for x in self.levels.split(","))
        except ValueError as exc:
            raise ConfigError(f"--levels must be comma-separated integers, got {self.levels!r}") from exc

    @property
    def type_set(self):
        try:
            return parse_types(self.types)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def weight_list(self) -> tuple[float, ...] | None:
        if not self.weights:
            return None
        return tuple(float(x) for x in self.weights.split(","))

    @property
    def seed_list(self) -> list[int]:
        out: list[int] = []
        for part in self.seeds.split(","):
            if "-" in part:
                lo, hi = part.split("-")
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
        if not out:
            raise ConfigError("--seeds selects no seeds")
        return out

    def cluster(self) -> ClusterConfig:
        levels = self.level_list
        if levels[-1] != self.shape.size:
            raise ConfigError(f"the last level must equal the cell count {self.shape.size}, got {levels[-1]}")
        try:
            return ClusterConfig(levels=levels, seed=self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_cfg(self) -> TreeBuildConfig:
        try:
            return TreeBuildConfig(self.max_nodes, self.max_children, self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def embed_cfg(self) -> EmbedConfig:
        if self.dim != 2:
            raise ConfigError("only --dim 2 is supported by the tree construction")
        try:
            return EmbedConfig(self.tau, BallConfig(self.dim, self.curvature))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def cem(self) -> CemConfig:
        try:
            return CemConfig(pop=self.pop, elite=self.elite or None, iterations=self.iters,
                             sigma_start=self.sigma_start, sigma_end=self.sigma_end, seed=self.seed,
                             cache=self.cache)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> None:
        _ = (self.shape, self.type_set, self.seed_list)
        try:
            _ = self.weight_list
        except ValueError as exc:
            raise ConfigError(f"--weights must be comma-separated numbers, got {self.weights!r}") from exc
        self.cluster()
        self.build_cfg()
        self.embed_cfg()
        self.cem()
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"--optimizer must be one of {', '.join(OPTIMIZERS)}")
        if self.evaluator not in EvaluatorSpec.KINDS:
            raise ConfigError(f"--evaluator must be one of {', '.join(EvaluatorSpec.KINDS)}")
        if self.evaluator == "external" and not self.eval_cmd:
            raise ConfigError("--evaluator external needs --eval-cmd")
        if self.evaluator == "pattern_match" and not self.target:
            raise ConfigError("--evaluator pattern_match needs --target (a grid text file)")
        for m in self.methods.split(","):
            if m not in OPTIMIZERS:
                raise ConfigError(f"unknown method {m!r} in --methods")

    def resolved_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(asdict(self).items()))


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = FIELD_TYPES[key]
    if kind == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config_file(path: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment; dashes in keys are allowed."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return out


def resolve(args: argparse.Namespace) -> RunConfig:
    values = load_config_file(args.config) if args.config else {}
    for key in FIELD_TYPES:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_resolved(cfg: RunConfig, out: Path) -> None:
    (out / "config.resolved").write_text(cfg.resolved_text())


def _build(cfg: RunConfig) -> DesignTree:
    stack = nested_kmeans(cfg.shape, cfg.cluster())
    return build_tree(stack, cfg.build_cfg(), cfg.type_set)


def _load_tree(path: Path) -> DesignTree:
    return DesignTree.from_json(json.loads(path.read_text()))


def cmd_build(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    tree = _build(cfg)
    (out / "tree.json").write_text(tree.dumps() + "\n")
    _write_resolved(cfg, out)
    print(f"nodes: {len(tree)}")
    for k, n in tree.level_histogram().items():
        print(f"  k={k}: {n}")
    return EXIT_OK


def cmd_embed(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    tree_path = Path(args.tree) if args.tree else out / "tree.json"
    tree = _load_tree(tree_path)
    table = embed_tree(tree, cfg.embed_cfg())
    (out / "embedding.json").write_text(table.dumps() + "\n")
    _write_resolved(cfg, out)
    rep = check_embedding(table, tree.children_map())
    print(f"max parent-child error: {rep.max_parent_child_err:.3e}")
    print(f"norm monotone: {rep.norm_monotone} ({rep.monotone_violations} of {rep.edges} edges violate)")
    sep = "n/a" if rep.min_sibling_separation == float("inf") else f"{rep.min_sibling_separation:.3e}"
    print(f"min sibling separation: {sep}")
    if not rep.passed():
        print("embedding check failed; a larger --tau usually restores monotone norms", file=sys.stderr)
        return EXIT_EMBED
    return EXIT_OK


def _make_evaluator(cfg: RunConfig, tree, table):
    from .benchmarks import pick_planted_target

    if cfg.evaluator == "planted_node":
        target = cfg.target_node if cfg.target_node >= 0 else pick_planted_target(tree, cfg.seed)
        return EvaluatorSpec("planted_node", {"target_id": target}).build(tree=tree, table=table)
    if cfg.evaluator == "pattern_match":
        try:
            target = parse(Path(cfg.target).read_text())
        except ParseError as exc:
            raise ConfigError(f"{cfg.target}: {exc}") from exc
        if target.shape != cfg.shape:
            raise ConfigError(f"target grid is {target.shape.rows}x{target.shape.cols}, expected {cfg.grid}")
        weights = cfg.weight_list
        if weights is not None and len(weights) != len(tree.stack):
            raise ConfigError(f"--weights needs {len(tree.stack)} values")
        return EvaluatorSpec("pattern_match", {"target": target, "weights": weights}).build(stack=tree.stack)
    if cfg.evaluator == "actuator_balance":
        return EvaluatorSpec("actuator_balance", {"target_fraction": cfg.target_fraction}).build()
    params = {"command": shlex.split(cfg.eval_cmd), "timeout": cfg.eval_timeout or None}
    return EvaluatorSpec("external", params).build()


def cmd_optimize(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    tree = _load_tree(Path(args.tree)) if args.tree else _build(cfg)
    if args.embedding:
        table = EmbeddingTable.from_json(json.loads(Path(args.embedding).read_text()))
    else:
        table = embed_tree(tree, cfg.embed_cfg())
    _write_resolved(cfg, out)
    evaluator = _make_evaluator(cfg, tree, table)
    log_path = out / "run.jsonl"
    cem = cfg.cem()
    with evaluator, log_path.open("w") as sink:
        try:
            if cfg.optimizer == "herd":
                result = run_herd(tree, table, evaluator, cem, sink=sink)
            elif cfg.optimizer == "flat_cem":
                result = run_flat_cem(evaluator, cem, tree.stack.shape, tree.types, sink=sink)
            elif cfg.optimizer == "c2f_ea":
                ea = EaConfig(generations=cfg.generations or cfg.iters, seed=cfg.seed, cache=cfg.cache)
                result = run_c2f_ea(tree.stack, evaluator, ea, tree.types, sink=sink)
            else:
                budget = cfg.budget or cfg.pop * cfg.iters
                result = run_random_search(evaluator, budget, cfg.seed, tree=tree, cache=cfg.cache, sink=sink)
        except RunAborted as exc:
            print(f"run aborted: {exc}", file=sys.stderr)
            (out / "run.csv").write_text(exc.log.to_csv())
            return EXIT_EVAL
    (out / "run.csv").write_text(result.log.to_csv())
    (out / "best.txt").write_text(str(result.best_design) + "\n")
    f = result.log.final
    print(f"best fitness: {result.best_fitness!r}")
    if result.best_node_id is not None:
        print(f"best node: {result.best_node_id}")
    print(f"evaluations: {f['evaluations']} (evaluator calls {f['evaluator_calls']}, "
          f"cache hits {f['cache_hits']}, penalized {f['penalized']})")
    print(result.best_design)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    from .benchmarks import BruteForceBenchmark, BruteForceConfig, compare, rows_to_csv, summarize, summary_csv

    out = _out_dir(cfg)
    base = BruteForceConfig()
    bench_cfg = BruteForceConfig(budget=cfg.budget or base.budget)
    _write_resolved(cfg, out)
    bench = BruteForceBenchmark(bench_cfg)
    rows = compare(bench, cfg.methods.split(","), cfg.seed_list)
    (out / "comparison.csv").write_text(rows_to_csv(rows))
    text = summary_csv(summarize(rows))
    (out / "summary.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_export_svg(cfg: RunConfig, args) -> int:
    from .svg import render_svg

    out = _out_dir(cfg)
    emb = Path(args.embedding) if args.embedding else out / "embedding.json"
    table = EmbeddingTable.from_json(json.loads(emb.read_text()))
    log = RunLog.from_jsonl(Path(args.run).read_text()) if args.run else None
    target = Path(args.svg) if args.svg else out / "embedding.svg"
    target.write_text(render_svg(table, log))
    print(target)
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "embed": cmd_embed,
    "optimize": cmd_optimize,
    "compare": cmd_compare,
    "export-svg": cmd_export_svg,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    # defaults are None so that config-file values survive unless a flag is given
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--grid", help="grid shape, e.g. 5x5")
    p.add_argument("--levels", help="comma-separated k values, coarse to fine")
    p.add_argument("--types", help="cell type alphabet, e.g. ERSHV")
    p.add_argument("--max-nodes", dest="max_nodes", type=int)
    p.add_argument("--max-children", dest="max_children", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--curvature", type=float)
    p.add_argument("--pop", type=int)
    p.add_argument("--elite", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--sigma-start", dest="sigma_start", type=float)
    p.add_argument("--sigma-end", dest="sigma_end", type=float)
    p.add_argument("--optimizer", choices=OPTIMIZERS)
    p.add_argument("--evaluator", choices=EvaluatorSpec.KINDS)
    p.add_argument("--eval-cmd", dest="eval_cmd")
    p.add_argument("--eval-timeout", dest="eval_timeout", type=float)
    p.add_argument("--target", help="target grid text file for pattern_match")
    p.add_argument("--target-node", dest="target_node", type=int)
    p.add_argument("--target-fraction", dest="target_fraction", type=float)
    p.add_argument("--weights", help="per-level weights for pattern_match")
    p.add_argument("--budget", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--methods")
    p.add_argument("--seeds", help="e.g. 0-19 or 0,3,5")
    p.add_argument("--no-cache", dest="cache", action="store_const", const=False)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="herd", description="Coarse-to-fine design search in a hyperbolic embedding.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _add_common(p)
        if name in ("embed", "optimize"):
            p.add_argument("--tree", help="tree.json to use instead of <out>/tree.json or a fresh build")
        if name in ("optimize", "export-svg"):
            p.add_argument("--embedding", help="embedding.json to use")
        if name == "export-svg":
            p.add_argument("--run", help="run.jsonl whose trajectory to draw")
            p.add_argument("--svg", help="output file (default <out>/embedding.svg)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EvaluatorError as exc:
        print(f"evaluator failure: {exc}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
