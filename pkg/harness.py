"""
실시간 대 의사 표본외 예측 실험 하네스
====================================
1. 예측 시점 τ(홀드아웃 월) × 모형 사양 × 정보집합마다 셀 하나
   - realtime: 공표월 τ의 빈티지
   - pseudo:   최종 빈티지를 τ 기준 공표 시차로 자른 정보집합
2. 셀: 패널 구성 → 표준화 → (선택) 주성분 추가 → 깁스 체인 → 예측 추출
3. 평가: 최종 빈티지의 변환값으로 FE, 주변·결합 LPL
4. 보고: 순위·τ·상대 누적 계열과 요약표 CSV

셀 시드는 (마스터 시드, 모형, τ)의 안정 해시이며 두 정보집합이 같은 시드를
공유한다. 같은 패널이면 같은 예측이 나온다.

사용 예시:
    from harness import load_experiment_config, run_experiment, evaluate_experiment, report
    cfg = load_experiment_config('configs/synthetic_small.json')
    store = run_experiment(cfg)
    evaluate_experiment(cfg, store)
    report(store)
"""

import dataclasses
import glob
import hashlib
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from factor_features import augment_panel, extract_pcs
from forecast_engine import DEFAULT_HORIZONS, PredictiveDraws, draw_forecasts
from result_store import CellRecord, ResultStore, SCORE_COLUMNS
from sampler_core import SamplerConfig, run_chain
from score_lab import (
    DENSITY, JOINT, POINT, abs_fe, joint_lpl, marginal_lpl, rank_series,
    relative_cumulative, summary_table, info_set_summary, tau_series,
)
from vintage_store import (
    Panel, PanelError, SeriesManifest, Vintage,
    apply_transform, build_panel, load_series_manifest, parse_vintage, standardize,
    to_month, transform_vintage, truncate_final_vintage,
)

logger = logging.getLogger(__name__)

PACKAGE_DIR = os.path.dirname(os.path.abspath(__file__))
BUNDLED_MANIFESTS = {
    'us': os.path.join(PACKAGE_DIR, 'manifests', 'fred_md_series.csv'),
    'ea': os.path.join(PACKAGE_DIR, 'manifests', 'ea_rtd_series.csv'),
}
DATASETS = ('us', 'ea', 'synthetic')
MODEL_SIZES = ('small', 'medium', 'large')


class ExperimentConfigError(ValueError):
    """실험 설정 파일의 키나 값이 올바르지 않을 때 발생한다."""


class MissingVintageError(FileNotFoundError):
    """필요한 빈티지 파일이 없을 때 발생한다."""


# ============================================================
# 설정
# ============================================================
@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = 'synthetic'
    data_dir: str = 'data'
    out_dir: str = 'results'
    manifest_path: Optional[str] = None
    sizes: Tuple[str, ...] = MODEL_SIZES
    tvp: Tuple[bool, ...] = (False, True)
    pca: Tuple[bool, ...] = (False, True)
    pca_k: int = 5
    lags: int = 2
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    horizons: Tuple[int, ...] = DEFAULT_HORIZONS
    holdout_start: Optional[str] = None
    holdout_end: Optional[str] = None
    sample_start: Optional[str] = None
    lag_profile: Union[None, int, Dict[str, int]] = None
    info_sets: Tuple[str, ...] = ('realtime', 'pseudo')
    seed: int = 0
    jobs: int = 1
    synthetic: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ExperimentConfigError(f"dataset: {self.dataset!r}는 {DATASETS} 중 하나여야 합니다")
        for name in ('sizes', 'tvp', 'pca', 'horizons', 'info_sets'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        unknown = [size for size in self.sizes if size not in MODEL_SIZES]
        if unknown or not self.sizes:
            raise ExperimentConfigError(f"sizes: 알 수 없는 모형 크기 {unknown}")
        if self.pca_k < 0:
            raise ExperimentConfigError(f"pca_k: 0 이상이어야 합니다 ({self.pca_k})")
        if self.lags < 1:
            raise ExperimentConfigError(f"lags: 1 이상이어야 합니다 ({self.lags})")
        if not self.horizons or min(self.horizons) < 1:
            raise ExperimentConfigError(f"horizons: 1 이상의 정수여야 합니다 ({self.horizons})")
        if set(self.info_sets) - {'realtime', 'pseudo'} or not self.info_sets:
            raise ExperimentConfigError(f"info_sets: realtime/pseudo만 허용됩니다 ({self.info_sets})")
        if self.jobs < 1:
            raise ExperimentConfigError(f"jobs: 1 이상이어야 합니다 ({self.jobs})")
        if self.holdout_start and self.holdout_end \
                and to_month(self.holdout_start) > to_month(self.holdout_end):
            raise ExperimentConfigError("holdout_start가 holdout_end보다 늦습니다")

    @property
    def vintage_dir(self) -> str:
        return os.path.join(self.data_dir, 'vintages')

    def resolved_manifest_path(self) -> str:
        if self.manifest_path:
            return self.manifest_path
        if self.dataset == 'synthetic':
            return os.path.join(self.data_dir, 'series_manifest.csv')
        return BUNDLED_MANIFESTS[self.dataset]

    def to_dict(self) -> dict:
        data = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        data['sampler'] = self.sampler.to_dict()
        for name in ('sizes', 'tvp', 'pca', 'horizons', 'info_sets'):
            data[name] = list(data[name])
        return data


def load_experiment_config(path: Union[str, os.PathLike], **overrides) -> ExperimentConfig:
    """JSON 설정을 읽는다. 값이 None이 아닌 overrides가 파일 값을 덮어쓴다."""
    try:
        with open(path, encoding='utf-8') as f:
            raw = json.load(f)
    except FileNotFoundError as exc:
        raise ExperimentConfigError(f"설정 파일이 없습니다: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ExperimentConfigError(f"설정 파일 JSON 오류: {exc}") from exc
    if not isinstance(raw, dict):
        raise ExperimentConfigError("설정 파일 최상위는 객체여야 합니다")
    raw.update({key: value for key, value in overrides.items() if value is not None})
    return experiment_config_from_dict(raw)


def experiment_config_from_dict(raw: dict) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ExperimentConfigError(f"알 수 없는 설정 키: {', '.join(unknown)}")
    raw = dict(raw)
    try:
        sampler = raw.pop('sampler', None) or {}
        unknown_sampler = sorted(set(sampler) - {f.name for f in dataclasses.fields(SamplerConfig)})
        if unknown_sampler:
            raise ExperimentConfigError(f"알 수 없는 설정 키: sampler.{', sampler.'.join(unknown_sampler)}")
        return ExperimentConfig(sampler=SamplerConfig.from_dict(sampler), **raw)
    except ExperimentConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ExperimentConfigError(f"설정 값 오류: {exc}") from exc


def config_hash(cfg: ExperimentConfig) -> str:
    """해석된 설정의 정규 JSON SHA-256 (출력 경로·작업 수 제외)"""
    data = cfg.to_dict()
    data.pop('out_dir', None)
    data.pop('jobs', None)
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


# ============================================================
# 모형 사양
# ============================================================
@dataclass(frozen=True)
class ModelSpec:
    size: str
    tvp: bool
    pca: bool

    @property
    def model_id(self) -> str:
        return f"{self.size}-{'tvp' if self.tvp else 'cp'}{'-pc' if self.pca else ''}"


def model_specs(sizes: Sequence[str] = MODEL_SIZES, tvp: Sequence[bool] = (False, True),
                pca: Sequence[bool] = (False, True)) -> List[ModelSpec]:
    """상수모수 → TVP, PCA 없음 → 있음, 작은 모형 → 큰 모형 순"""
    return [
        ModelSpec(size, bool(time_varying), bool(factors))
        for time_varying in tvp
        for factors in pca
        for size in sizes
    ]


def cell_seed(master_seed: int, model_id: str, origin: str) -> int:
    digest = hashlib.sha256(f"{master_seed}|{model_id}|{origin}".encode('utf-8')).digest()
    return int.from_bytes(digest[:4], 'big')


# ============================================================
# 빈티지 탐색
# ============================================================
def vintage_path(cfg: ExperimentConfig, release: Union[str, pd.Period]) -> str:
    return os.path.join(cfg.vintage_dir, f"{to_month(release)}.csv")


def list_vintages(cfg: ExperimentConfig) -> List[str]:
    paths = sorted(glob.glob(os.path.join(cfg.vintage_dir, '????-??.csv')))
    if not paths:
        raise MissingVintageError(f"빈티지 파일이 없습니다: {cfg.vintage_dir}")
    return paths


def load_manifest(cfg: ExperimentConfig) -> SeriesManifest:
    path = cfg.resolved_manifest_path()
    if not os.path.exists(path):
        raise MissingVintageError(f"시계열 매니페스트가 없습니다: {path}")
    return load_series_manifest(path)


def final_vintage_path(cfg: ExperimentConfig) -> str:
    """가장 늦은 공표월 파일이 최종 빈티지"""
    return list_vintages(cfg)[-1]


def holdout_months(cfg: ExperimentConfig) -> List[str]:
    """
    홀드아웃 구간 안에 실제로 있는 빈티지 공표월. 빈티지가 없는 달(공표를
    건너뛴 달)은 예측 시점에서 빠진다.
    """
    releases = [to_month(os.path.basename(path)[:-4]) for path in list_vintages(cfg)]
    start = to_month(cfg.holdout_start) if cfg.holdout_start else releases[0]
    end = to_month(cfg.holdout_end) if cfg.holdout_end else releases[-1]
    if start < releases[0] or end > releases[-1]:
        raise MissingVintageError(
            f"홀드아웃 {start} ~ {end}이(가) 빈티지 범위 {releases[0]} ~ {releases[-1]}를 벗어납니다"
        )
    origins = [str(release) for release in releases if start <= release <= end]
    skipped = len(pd.period_range(start, end, freq='M')) - len(origins)
    if skipped:
        logger.info("빈티지가 없는 홀드아웃 월 %d개는 건너뜁니다", skipped)
    return origins


# ============================================================
# 셀 실행
# ============================================================
def first_common_month(vintage: Vintage, codes: Sequence[str]) -> pd.Period:
    """모든 시계열에 변환 후 관측이 있는 첫 달"""
    starts = []
    for code in codes:
        observed = apply_transform(vintage.data[code], vintage.tcodes[code]).dropna()
        if observed.empty:
            raise PanelError(f"{code}: 변환 후 관측값이 없습니다")
        starts.append(observed.index[0])
    return max(starts)


def build_factor_panel(vintage: Vintage, base: Panel, manifest: SeriesManifest,
                       model_codes: Sequence[str], k: int) -> Panel:
    """모형 밖 시계열로 넓은 패널을 만들어 상위 k개 주성분을 덧붙인다."""
    start, end = base.period_index[0], base.period_index[-1]
    usable = []
    for code in manifest.codes:
        if code in model_codes or code not in vintage.data.columns:
            continue
        try:
            single = build_panel(vintage, [code], start, end)
        except PanelError:
            logger.warning("PCA 열 제외: %s (표본 구간에 자료 부족)", code)
            continue
        observed = single.values[single.mask[:, 0], 0]
        if observed.size < 2 or not np.std(observed, ddof=1) > 0:
            logger.warning("PCA 열 제외: %s (분산 0 또는 관측 부족)", code)
            continue
        usable.append(code)
    k = min(k, len(usable), base.T)
    if k == 0:
        logger.warning("주성분을 만들 시계열이 없어 PCA 없이 진행합니다")
        return base
    wide = standardize(build_panel(vintage, usable, start, end))
    return augment_panel(base, extract_pcs(wide, k))


def build_cell_panel(cfg: ExperimentConfig, spec: ModelSpec, vintage: Vintage,
                     manifest: SeriesManifest) -> Panel:
    codes = manifest.codes_for_size(spec.size)
    start = to_month(cfg.sample_start) if cfg.sample_start else first_common_month(vintage, codes)
    panel = standardize(build_panel(vintage, codes, start))
    if spec.pca and cfg.pca_k > 0:
        panel = build_factor_panel(vintage, panel, manifest, codes, cfg.pca_k)
    return panel


@dataclass(frozen=True)
class CellTask:
    cfg: ExperimentConfig
    spec: ModelSpec
    info_set: str
    origin: str
    seed: int
    cell_dir: str
    config_hash: str


def load_information_set(cfg: ExperimentConfig, manifest: SeriesManifest, info_set: str,
                         origin: str) -> Vintage:
    if info_set == 'realtime':
        path = vintage_path(cfg, origin)
        if not os.path.exists(path):
            raise MissingVintageError(f"공표월 {origin}의 빈티지 파일이 없습니다: {path}")
        return parse_vintage(path, manifest)
    final = parse_vintage(final_vintage_path(cfg), manifest)
    lag_profile = cfg.lag_profile if cfg.lag_profile is not None else manifest.lag_profile()
    return truncate_final_vintage(final, origin, lag_profile)


def run_cell(task: CellTask) -> CellRecord:
    """셀 하나를 실행한다. 실패는 예외 대신 status='failed' 기록으로 돌려준다."""
    cfg, spec = task.cfg, task.spec
    try:
        manifest = load_manifest(cfg)
        vintage = load_information_set(cfg, manifest, task.info_set, task.origin)
        panel = build_cell_panel(cfg, spec, vintage, manifest)
        sampler_cfg = dataclasses.replace(cfg.sampler, lags=cfg.lags, time_varying=spec.tvp)
        store = run_chain(panel, sampler_cfg, task.seed, task.config_hash)
        draws_path = os.path.join(task.cell_dir, 'draws')
        store.save(draws_path)

        rng = np.random.default_rng([task.seed, 1])
        forecasts = draw_forecasts(store, panel.std_info, cfg.horizons, rng, spec.model_id)
        forecasts_path = os.path.join(task.cell_dir, 'forecasts')
        forecasts.save(forecasts_path)
        return CellRecord(spec.model_id, task.info_set, task.origin, 'ok', task.seed, '',
                          draws_path, forecasts_path, task.config_hash)
    except Exception as exc:
        logger.error("셀 실패: %s/%s/%s - %s", spec.model_id, task.info_set, task.origin, exc)
        logger.debug(traceback.format_exc())
        return CellRecord(spec.model_id, task.info_set, task.origin, 'failed', task.seed,
                          f"{type(exc).__name__}: {exc}", '', '', task.config_hash)


def plan_cells(cfg: ExperimentConfig, store: ResultStore) -> List[CellTask]:
    digest = config_hash(cfg)
    origins = holdout_months(cfg)
    tasks = []
    for origin in origins:
        for spec in model_specs(cfg.sizes, cfg.tvp, cfg.pca):
            seed = cell_seed(cfg.seed, spec.model_id, origin)
            for info_set in cfg.info_sets:
                tasks.append(CellTask(
                    cfg, spec, info_set, origin, seed,
                    store.cell_dir(spec.model_id, info_set, origin), digest,
                ))
    return tasks


def run_experiment(cfg: ExperimentConfig) -> ResultStore:
    """모든 셀을 실행하고 결과 저장소를 돌려준다. 실패한 셀은 기록만 하고 계속한다."""
    store = ResultStore(cfg.out_dir)
    tasks = plan_cells(cfg, store)
    logger.info("실험 시작: 셀 %d개 (작업 %d개 병렬)", len(tasks), cfg.jobs)

    records = []
    if cfg.jobs == 1:
        for done, task in enumerate(tasks, start=1):
            records.append(run_cell(task))
            logger.info("셀 완료 %d/%d: %s/%s/%s", done, len(tasks),
                        task.spec.model_id, task.info_set, task.origin)
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as executor:
            futures = {executor.submit(run_cell, task): task for task in tasks}
            for done, future in enumerate(as_completed(futures), start=1):
                task = futures[future]
                try:
                    records.append(future.result())
                except Exception as exc:
                    logger.error("셀 작업자 실패: %s/%s/%s - %s",
                                 task.spec.model_id, task.info_set, task.origin, exc)
                    records.append(CellRecord(
                        task.spec.model_id, task.info_set, task.origin, 'failed', task.seed,
                        f"{type(exc).__name__}: {exc}", '', '', task.config_hash,
                    ))
                logger.info("셀 완료 %d/%d: %s/%s/%s", done, len(tasks),
                            task.spec.model_id, task.info_set, task.origin)

    records.sort(key=lambda record: record.key)
    store.record_cells(records)
    seeds = {f"{r.model_id}/{r.info_set}/{r.origin}": r.seed for r in records}
    store.write_manifest(cfg.to_dict(), config_hash(cfg), {'master': cfg.seed, 'cells': seeds})
    failed = sum(record.status == 'failed' for record in records)
    logger.info("실험 종료: 성공 %d, 실패 %d", len(records) - failed, failed)
    return store


# ============================================================
# 평가와 보고
# ============================================================
def score_cell(forecasts: PredictiveDraws, realized: pd.DataFrame, focus: Sequence[str],
               model_id: str, info_set: str, origin: str) -> List[tuple]:
    """셀 하나의 (예측기간, 초점 변수)별 FE·LPL 행과 결합 LPL 행"""
    rows = []
    codes = list(forecasts.series_codes)
    point = forecasts.point_forecast()
    m_y, s_y = forecasts.std_info.m_y, forecasts.std_info.s_y
    for k, h in enumerate(forecasts.horizons):
        target = forecasts.target(h)
        if target not in realized.index:
            logger.warning("평가 건너뜀: %s/%s/%s h=%d 목표월 %s가 최종 빈티지 밖입니다",
                           model_id, info_set, origin, h, target)
            continue
        values = {}
        for code in focus:
            actual = realized.at[target, code]
            if not np.isfinite(actual):
                continue
            j = codes.index(code)
            values[code] = actual
            rows.append((
                model_id, info_set, origin, str(target), int(h), code,
                abs_fe(actual, point[k, j]),
                marginal_lpl(actual, forecasts.mean[:, k, j], forecasts.cov[:, k, j, j],
                             m_y[j], s_y[j]),
            ))
        if len(values) == len(focus):
            idx = [codes.index(code) for code in focus]
            rows.append((
                model_id, info_set, origin, str(target), int(h), JOINT, np.nan,
                joint_lpl(
                    [values[code] for code in focus],
                    forecasts.mean[:, k][:, idx],
                    forecasts.cov[:, k][:, idx][:, :, idx],
                    m_y[idx], s_y[idx],
                ),
            ))
        else:
            logger.warning("결합 LPL 건너뜀: %s/%s/%s h=%d 초점 변수 실현값 결측",
                           model_id, info_set, origin, h)
    return rows


def evaluate(store: ResultStore, final: Vintage, focus: Sequence[str]) -> Dict[str, str]:
    """성공한 셀을 최종 빈티지로 채점하고 점수 CSV들을 쓴다."""
    focus = list(focus)
    realized = transform_vintage(final, focus)
    rows = []
    for cell in store.get_cells(status='ok').itertuples(index=False):
        forecasts = PredictiveDraws.load(cell.forecasts_path)
        rows.extend(score_cell(forecasts, realized, focus, cell.model_id, cell.info_set, cell.origin))
    scores = pd.DataFrame(rows, columns=SCORE_COLUMNS)
    store.replace_scores(scores)

    ranks = pd.concat([rank_series(scores, DENSITY), rank_series(scores, POINT)], ignore_index=True)
    relative = pd.concat(
        [relative_cumulative(scores, DENSITY), relative_cumulative(scores, POINT)], ignore_index=True
    )
    outputs = {
        'scores': scores,
        'ranks': ranks,
        'tau': tau_series(ranks),
        'relative': relative,
        'summary_realtime': info_set_summary(scores, 'realtime'),
        'summary_pseudo': info_set_summary(scores, 'pseudo'),
    }
    paths = {}
    for name, frame in outputs.items():
        paths[name] = os.path.join(store.root, f"{name}.csv")
        frame.to_csv(paths[name], index=False, lineterminator='\n')
    logger.info("평가 완료: 점수 %d행, 셀 %d개", len(scores), len(store.get_cells(status='ok')))
    return paths


def evaluate_experiment(cfg: ExperimentConfig, store: Optional[ResultStore] = None) -> Dict[str, str]:
    store = store or ResultStore(cfg.out_dir)
    manifest = load_manifest(cfg)
    final = parse_vintage(final_vintage_path(cfg), manifest)
    return evaluate(store, final, manifest.focus_codes())


def report(store: ResultStore) -> Dict[str, str]:
    """저장된 점수로 그림용 계열과 요약표 CSV를 쓴다."""
    scores = store.get_scores()
    ranks = pd.concat([rank_series(scores, DENSITY), rank_series(scores, POINT)], ignore_index=True)
    outputs = {
        'tau_series': tau_series(ranks),
        'rank_series': ranks,
        'relative_cumlps': relative_cumulative(scores, DENSITY),
        'summary_table': summary_table(scores),
    }
    paths = {}
    for name, frame in outputs.items():
        paths[name] = os.path.join(store.root, f"{name}.csv")
        frame.to_csv(paths[name], index=False, lineterminator='\n')
    logger.info("보고서 생성: %s", ', '.join(sorted(paths)))
    return paths
