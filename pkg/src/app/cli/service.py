"""
서브커맨드 실행 서비스

모든 난수는 [run] seed 에서 (seed, 섹션 이름, 인덱스...) 로 파생된다.
각 핸들러는 쓴 산출물 경로 목록을 돌려준다.
"""

import json
from argparse import Namespace
from pathlib import Path
from typing import Callable, Dict, List

import pandas as pd

from src.app.augment.models import AugmentConfig
from src.app.augment.service import AugmentedStream, augment_dataset
from src.app.cli.models import RunConfig, RunSection
from src.app.cli.repository import ArtifactPaths, run_config_hash, write_manifest
from src.app.dataio import repository as dataio_repository
from src.app.dataio.models import Dataset, SplitSpec
from src.app.dataio.service import generate_dataset, split
from src.app.evalharness import service as evalharness
from src.app.evalharness.repository import save_report
from src.app.influence import service as influence
from src.app.influence.repository import load_scores, save_roc, save_scores
from src.app.neural.repository import load_checkpoint, save_checkpoint
from src.app.neural.service import GaussianTransitionModel, gradient_check, train_model
from src.app.policy import service as policy_service
from src.app.policy.repository import load_policy, save_eval_reports, save_policy
from src.app.world.models import Regime, WorldConfig
from src.common.error import ErrorCode, GradientCheckError, SchemaError
from src.common.utils.json_sanitizer import dumps_canonical
from src.common.utils.logger import set_logger
from src.common.utils.seeding import derive_seed

logger = set_logger("cli")

GRADIENT_TOLERANCE = 1e-4
TRANSITION_KIND = "transition_model"
DEFAULT_POLICY = "bc"
BASELINE_POLICY = "bc_none"


class CliContext:
    def __init__(self, config: RunConfig, args: Namespace):
        updates = {}
        if getattr(args, "seed", None) is not None:
            updates["seed"] = args.seed
        if getattr(args, "out", None) is not None:
            updates["out_dir"] = args.out
        if getattr(args, "jobs", None) is not None:
            updates["jobs"] = args.jobs
        if updates:
            run = RunSection.model_validate({**config.run.model_dump(), **updates})
            config = config.model_copy(update={"run": run})
        self.config = config
        self.args = args
        self.config_hash = run_config_hash(config)
        self.paths = ArtifactPaths(config.run.out_dir, self.config_hash)

    @property
    def world(self) -> WorldConfig:
        return self.config.world

    @property
    def jobs(self) -> int:
        return self.config.run.jobs

    def seed(self, *keys) -> int:
        return derive_seed(self.config.run.seed, *keys)

    def load_dataset(self) -> Dataset:
        return dataio_repository.load(self.paths.require(self.paths.dataset))

    def load_model(self) -> GaussianTransitionModel:
        params, meta = load_checkpoint(self.paths.require(self.paths.model))
        if meta.get("kind") != TRANSITION_KIND:
            raise SchemaError.of(ErrorCode.Dataset.SCHEMA_ERROR, path=str(self.paths.model), kind=meta.get("kind"))
        return GaussianTransitionModel(params, WorldConfig.model_validate(meta["world"]))

    def load_scores(self):
        return load_scores(self.paths.require(self.paths.scores))

    def resolve_theta(self) -> float:
        """--theta > [influence] theta > roc 에서 선택한 theta > 기본값"""
        theta = getattr(self.args, "theta", None)
        if theta is not None:
            return float(theta)
        if self.config.influence.theta is not None:
            return self.config.influence.theta
        summary = self.paths.roc_summary("cai")
        if summary.exists():
            selected = json.loads(summary.read_text(encoding="utf-8")).get("selected_theta")
            if selected is not None:
                return float(selected)
        default = AugmentConfig.model_fields["theta"].default
        logger.warning(f"theta 가 지정되지 않아 기본값 {default} 을 사용합니다")
        return default

    def augment_config(self, cf_ratio: float | None = None) -> AugmentConfig:
        config = self.config.augment.to_config(self.resolve_theta(), self.seed("augment"))
        ratio = cf_ratio if cf_ratio is not None else getattr(self.args, "ratio", None)
        if ratio is not None:
            config = AugmentConfig.model_validate({**config.model_dump(), "cf_ratio": float(ratio)})
        return config

    def stream(self, cf_ratio: float | None = None) -> AugmentedStream:
        return augment_dataset(self.load_dataset(), self.load_scores(), self.augment_config(cf_ratio))


# ===== 핸들러 =====

def gen_data(ctx: CliContext) -> List[Path]:
    c = ctx.config
    dataset = generate_dataset(
        ctx.world, c.tasks, c.dataset.n_trajectories, c.dataset.expert_fraction, c.dataset.horizon, ctx.seed("dataset"), ctx.jobs
    )
    # CAI ROC 평가용 별도 데이터 (학습에 쓰지 않음)
    heldout = generate_dataset(
        ctx.world, c.tasks, c.influence.heldout_trajectories, c.dataset.expert_fraction, c.dataset.horizon, ctx.seed("heldout"), ctx.jobs
    )
    return [dataio_repository.save(dataset, ctx.paths.dataset), dataio_repository.save(heldout, ctx.paths.heldout)]


def train_transition_model(ctx: CliContext) -> List[Path]:
    dataset = ctx.load_dataset()
    train, val = split(dataset, SplitSpec(train_fraction=ctx.config.model.train_fraction, split_seed=ctx.seed("split")))
    result = train_model(train, val, ctx.config.model, ctx.seed("model"))
    meta = {
        "kind": TRANSITION_KIND,
        "world": dataset.config.model_dump(mode="json"),
        "config_hash": ctx.config_hash,
        "best_step": result.best_step,
        "best_val_loss": result.best_val_loss,
    }
    save_checkpoint(result.params, ctx.paths.model, meta)
    ctx.paths.loss_curve.parent.mkdir(parents=True, exist_ok=True)
    result.curves.to_csv(ctx.paths.loss_curve, index=False, float_format="%.17g")
    return [ctx.paths.model, ctx.paths.loss_curve]


def check_grad(ctx: CliContext) -> List[Path]:
    errors = gradient_check(ctx.seed("gradcheck"))
    worst = max(errors.values())
    print(dumps_canonical({"max_relative_error": worst, "per_tensor": errors}))
    if worst >= GRADIENT_TOLERANCE:
        raise GradientCheckError.of(ErrorCode.Model.GRADIENT_CHECK_FAILED, max_relative_error=worst, tolerance=GRADIENT_TOLERANCE)
    return []


def score(ctx: CliContext) -> List[Path]:
    dataset = ctx.load_dataset()
    model = ctx.load_model()
    cfg = ctx.config.influence
    scores = influence.score_dataset(dataset, model, cfg.k, ctx.seed("influence"), ctx.jobs, cfg.chunk_size)
    # --theta 가 없으면 uncontrollable set 없이 점수만 기록
    return [save_scores(scores, ctx.paths.scores, getattr(ctx.args, "theta", None))]


def roc(ctx: CliContext) -> List[Path]:
    heldout = dataio_repository.load(ctx.paths.require(ctx.paths.heldout))
    labels = influence.ground_truth_labels(heldout, heldout.config)
    cfg = ctx.config.influence
    written = []
    models = {"cai": ctx.load_model(), "oracle": influence.OracleDynamicsModel(heldout.config)}
    for name, model in models.items():
        scores = influence.score_dataset(heldout, model, cfg.k, ctx.seed("influence", "heldout"), ctx.jobs, cfg.chunk_size)
        report = influence.roc_analysis(scores, labels)
        theta = influence.select_threshold(report)
        sweep = influence.theta_sweep(scores, labels, cfg.sweep)
        paths = save_roc(report, ctx.paths.reports, f"roc_{name}_{ctx.config_hash}", theta, sweep)
        logger.info(f"[{name}] ROC AUC={report.auc:.4f}, 선택된 theta={theta:.5g}")
        written += list(paths.values())
    return written


def augment(ctx: CliContext) -> List[Path]:
    stream = ctx.stream()
    return [dataio_repository.save(stream.materialize(), ctx.paths.augmented)]


def eval_feasibility(ctx: CliContext) -> List[Path]:
    stream = ctx.stream()
    method = getattr(ctx.args, "method", None) or "caiac"
    cfg = ctx.config.eval
    records = evalharness.generate_records(stream, method, cfg.n_counterfactuals)
    report = evalharness.feasibility_replay(
        records, stream.dataset.config, cfg.k_sims, ctx.seed("eval"), cfg.tolerance, method, ctx.jobs
    )
    paths = save_report(report.summary(), report.detail(), ctx.paths.reports, "feasibility", method, ctx.config_hash)
    return list(paths.values())


def eval_support(ctx: CliContext) -> List[Path]:
    dataset = ctx.load_dataset()
    augmented = dataio_repository.load(ctx.paths.require(ctx.paths.augmented))
    written = []
    for method, data in (("none", dataset), ("caiac", augmented)):
        report = evalharness.support_estimate(data, dataset.config, method)
        logger.info(f"[{method}] support ratio={report.ratio:.4f} ({report.occupied}/{report.maximum})")
        written += list(save_report(report.summary(), None, ctx.paths.reports, "support", method, ctx.config_hash).values())
    return written


def _train_policy(ctx: CliContext, name: str, cf_ratio: float | None) -> List[Path]:
    stream = ctx.stream(cf_ratio)
    policy = policy_service.train_bc(stream, ctx.config.tasks, ctx.config.policy, ctx.seed("policy"))
    path = save_policy(policy, ctx.paths.policy(name), ctx.config_hash)
    curve = path.with_name(f"{name}_curve_{ctx.config_hash}.csv")
    policy.curves.to_csv(curve, index=False, float_format="%.17g")
    return [path, curve]


def train_policy(ctx: CliContext) -> List[Path]:
    return _train_policy(ctx, getattr(ctx.args, "name", None) or DEFAULT_POLICY, None)


def _eval_policy(ctx: CliContext, name: str, regimes: List[Regime]) -> List[Path]:
    policy = load_policy(ctx.paths.require(ctx.paths.policy(name)))
    cfg = ctx.config.policy
    reports = []
    for task in ctx.config.tasks:
        for regime in regimes:
            report = policy_service.evaluate(policy, task, regime, cfg.episodes, cfg.horizon, ctx.seed("eval_policy"), cfg.n_boot)
            logger.info(f"[{name}] task={task.task_id} {regime.value}: success={report.success_rate:.3f} ± {report.ci_half_width:.3f}")
            reports.append(report)
    return list(save_eval_reports(reports, ctx.paths.reports, f"eval_{name}", ctx.config_hash).values())


def eval_policy(ctx: CliContext) -> List[Path]:
    regime = getattr(ctx.args, "regime", None)
    regimes = [Regime(regime)] if regime else [Regime.ID, Regime.OOD]
    return _eval_policy(ctx, getattr(ctx.args, "name", None) or DEFAULT_POLICY, regimes)


def ablate_ratio(ctx: CliContext) -> List[Path]:
    cfg = ctx.config.policy
    ratios = [float(ctx.args.ratio)] if getattr(ctx.args, "ratio", None) is not None else cfg.ratios
    seeds = [ctx.seed("policy", i) for i in range(cfg.n_seeds)]
    table = policy_service.ratio_ablation(
        ctx.load_dataset(), ctx.load_scores(), ctx.config.tasks, ctx.augment_config(), cfg, ratios, seeds, ctx.jobs
    )
    grouped = table.groupby("ratio")
    summary = pd.DataFrame({
        "ood_mean": grouped["ood_success"].mean(),
        "ood_std": grouped["ood_success"].std(ddof=1),
        "id_mean": grouped["id_success"].mean(),
    }).reset_index()
    paths = save_report(
        {"ratios": summary.to_dict(orient="records")}, table, ctx.paths.reports, "ablation", "ratio", ctx.config_hash
    )
    return list(paths.values())


def compare(ctx: CliContext) -> List[Path]:
    report = evalharness.compare_methods(
        ctx.load_dataset(), ctx.load_scores(), ctx.augment_config(), ctx.config.eval, ctx.seed("eval"), ctx.jobs
    )
    written = []
    for method, feasibility in report.feasibility.items():
        written += list(save_report(
            feasibility.summary(), feasibility.detail(), ctx.paths.reports, "compare_feasibility", method, ctx.config_hash
        ).values())
    written += list(save_report(report.summary(), report.rows, ctx.paths.reports, "compare", "all", ctx.config_hash).values())
    return written


def support_sweep(ctx: CliContext) -> List[Path]:
    cfg = ctx.config.eval
    table = evalharness.support_sweep(
        ctx.load_dataset(), ctx.load_scores(), cfg.support_fractions, ctx.augment_config(), cfg.n_counterfactuals, ctx.seed("support_sweep")
    )
    paths = save_report(
        {"rows": table.to_dict(orient="records")}, table, ctx.paths.reports, "support_sweep", "caiac", ctx.config_hash
    )
    return list(paths.values())


def pipeline(ctx: CliContext) -> List[Path]:
    """gen-data -> train-model -> score -> roc -> augment -> 평가 -> 정책 학습/평가 -> 매니페스트"""
    artifacts: List[Path] = []
    for step in (gen_data, train_transition_model, score, roc, augment, eval_feasibility, eval_support, compare):
        logger.info(f"pipeline: {step.__name__}")
        artifacts += step(ctx)
    artifacts += _train_policy(ctx, DEFAULT_POLICY, None)
    artifacts += _train_policy(ctx, BASELINE_POLICY, 0.0)
    for name in (DEFAULT_POLICY, BASELINE_POLICY):
        artifacts += _eval_policy(ctx, name, [Regime.ID, Regime.OOD])
    return artifacts + [write_manifest(ctx.paths, artifacts)]


COMMANDS: Dict[str, Callable[[CliContext], List[Path]]] = {
    "gen-data": gen_data,
    "train-model": train_transition_model,
    "check-grad": check_grad,
    "score": score,
    "roc": roc,
    "augment": augment,
    "eval-feasibility": eval_feasibility,
    "eval-support": eval_support,
    "train-policy": train_policy,
    "eval-policy": eval_policy,
    "ablate-ratio": ablate_ratio,
    "compare": compare,
    "support-sweep": support_sweep,
    "pipeline": pipeline,
}
