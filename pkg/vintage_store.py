#!/usr/bin/env python3
"""
빈티지(vintage) 데이터 저장소
============================
- 빈티지 CSV 읽기: 공표 시점별 월간 시계열 스냅샷 (빈칸 = 결측)
- 정상성 변환 코드 (Tc): 1 원계열, 2 Δx, 4 log x, 5 Δlog x, 6 Δ²log x
- 공통 월간 격자에 정렬한 패널 + 관측 마스크 (ragged edge 포함)
- 관측값만으로 계산한 평균/표준편차로 표준화, 역표준화
- 최종 빈티지를 잘라 의사 표본외(pseudo out-of-sample) 정보집합 생성

사용 예시:
    from vintage_store import load_series_manifest, parse_vintage, build_panel, standardize
    manifest = load_series_manifest('manifests/fred_md_series.csv')
    vintage = parse_vintage('data/vintages/2000-01.csv', manifest)
    panel = standardize(build_panel(vintage, manifest.codes_for_size('small'), '1980-03'))
"""

import csv
import logging
import math
import os
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

# 변환 코드 → 차분 차수
TRANSFORM_ORDERS = {1: 0, 2: 1, 4: 0, 5: 1, 6: 2}
LOG_TRANSFORMS = frozenset({4, 5, 6})
SERIES_GROUPS = ('small', 'medium', 'large', 'extra')
SIZE_GROUPS = {
    'small': ('small',),
    'medium': ('small', 'medium'),
    'large': ('small', 'medium', 'large'),
}
DEFAULT_LAG_MONTHS = 1
MISSING_TOKENS = frozenset({'', 'na', 'nan', '.'})

_ISO_MONTH_RE = re.compile(r'^(\d{4})-(\d{2})$')
_US_DATE_RE = re.compile(r'^(\d{1,2})/(\d{1,2})/(\d{4})$')
_FILENAME_MONTH_RE = re.compile(r'(\d{4})-(\d{2})')

MonthLike = Union[str, pd.Period]


class VintageError(ValueError):
    """빈티지 데이터를 안전하게 사용할 수 없을 때 발생한다."""


class VintageParseError(VintageError):
    """빈티지 CSV의 형식이 올바르지 않을 때 발생한다."""


class TransformError(VintageError):
    """정상성 변환의 전제조건이 깨졌을 때 발생한다."""


class PanelError(VintageError):
    """패널 정렬이 불가능할 때 발생한다."""


class StandardizationError(VintageError):
    """표준화할 수 없는 열이 있을 때 발생한다."""


def to_month(value: MonthLike) -> pd.Period:
    """'YYYY-MM' 문자열이나 Period를 월간 Period로 정규화한다."""
    if isinstance(value, pd.Period):
        return value.asfreq('M')
    text = str(value).strip()
    match = _ISO_MONTH_RE.match(text)
    if not match or not 1 <= int(match.group(2)) <= 12:
        raise VintageError(f"월 표기가 올바르지 않습니다 (YYYY-MM): {value!r}")
    return pd.Period(year=int(match.group(1)), month=int(match.group(2)), freq='M')


# ============================================================
# 시계열 매니페스트
# ============================================================
@dataclass(frozen=True)
class SeriesInfo:
    """시계열 메타데이터 (변환 코드, 공표 시차, 모형 크기 그룹)"""
    code: str
    tcode: int
    lag_months: int = DEFAULT_LAG_MONTHS
    group: str = 'extra'


class SeriesManifest:
    """code,tcode,lag_months,group 매니페스트"""

    def __init__(self, entries: Iterable[SeriesInfo]):
        self._entries: Dict[str, SeriesInfo] = {}
        for entry in entries:
            if entry.code in self._entries:
                raise VintageError(f"매니페스트에 중복 시계열이 있습니다: {entry.code}")
            if entry.tcode not in TRANSFORM_ORDERS:
                raise VintageError(
                    f"{entry.code}: 지원하지 않는 변환 코드 {entry.tcode}"
                )
            if entry.group not in SERIES_GROUPS:
                raise VintageError(f"{entry.code}: 알 수 없는 그룹 {entry.group!r}")
            if entry.lag_months < 0:
                raise VintageError(f"{entry.code}: 공표 시차는 0 이상이어야 합니다")
            self._entries[entry.code] = entry

    def __contains__(self, code: str) -> bool:
        return code in self._entries

    def __getitem__(self, code: str) -> SeriesInfo:
        return self._entries[code]

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def codes(self) -> List[str]:
        return list(self._entries)

    def tcode(self, code: str) -> int:
        return self._entries[code].tcode

    def codes_for_size(self, size: str) -> List[str]:
        """small ⊂ medium ⊂ large 누적 그룹의 코드를 매니페스트 순서로 반환"""
        if size not in SIZE_GROUPS:
            raise VintageError(f"알 수 없는 모형 크기: {size!r}")
        groups = SIZE_GROUPS[size]
        return [code for code, entry in self._entries.items() if entry.group in groups]

    def focus_codes(self) -> List[str]:
        return self.codes_for_size('small')

    def lag_profile(self) -> Dict[str, int]:
        return {code: entry.lag_months for code, entry in self._entries.items()}


def load_series_manifest(path: Union[str, os.PathLike]) -> SeriesManifest:
    """매니페스트 CSV를 읽는다. lag_months와 group은 생략 가능하다."""
    entries = []
    with open(path, encoding='utf-8', newline='') as file:
        reader = csv.DictReader(file)
        if not reader.fieldnames or 'code' not in reader.fieldnames \
                or 'tcode' not in reader.fieldnames:
            raise VintageParseError(f"매니페스트 헤더에 code,tcode가 필요합니다: {path}")
        for line_no, row in enumerate(reader, start=2):
            code = (row.get('code') or '').strip()
            if not code:
                continue
            try:
                tcode = int(row['tcode'])
                lag = int(row.get('lag_months') or DEFAULT_LAG_MONTHS)
            except (TypeError, ValueError) as exc:
                raise VintageParseError(
                    f"매니페스트 {line_no}행 숫자 형식 오류 ({code}): {exc}"
                ) from exc
            group = (row.get('group') or 'extra').strip() or 'extra'
            entries.append(SeriesInfo(code, tcode, lag, group))
    return SeriesManifest(entries)


# ============================================================
# 빈티지
# ============================================================
@dataclass(frozen=True)
class Vintage:
    """한 번의 공표 스냅샷. data는 연속 월간 PeriodIndex × 시계열 (NaN = 결측)"""
    release_id: pd.Period
    data: pd.DataFrame
    tcodes: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        data = self.data.sort_index()
        if len(data.index):
            if not isinstance(data.index, pd.PeriodIndex):
                raise VintageError("빈티지 인덱스는 월간 PeriodIndex여야 합니다")
            if data.index.has_duplicates:
                raise VintageError("빈티지에 중복된 월이 있습니다")
            grid = pd.period_range(data.index[0], data.index[-1], freq='M')
            data = data.reindex(grid)
        for code in data.columns:
            if self.tcodes.get(code) not in TRANSFORM_ORDERS:
                raise VintageError(f"{code}: 변환 코드가 없거나 허용되지 않습니다")
        object.__setattr__(self, 'release_id', to_month(self.release_id))
        object.__setattr__(self, 'data', data.astype(float))

    @property
    def series_codes(self) -> List[str]:
        return list(self.data.columns)

    def series(self, code: str) -> pd.Series:
        """첫 관측부터 마지막 관측까지의 연속 구간 (내부 결측은 NaN)"""
        column = self.data[code]
        observed = column.dropna()
        if observed.empty:
            return column.iloc[0:0]
        return column.loc[observed.index[0]:observed.index[-1]]

    def last_observed(self, code: str) -> Optional[pd.Period]:
        observed = self.data[code].dropna()
        return observed.index[-1] if not observed.empty else None

    def missing_count(self) -> int:
        return int(self.data.isna().to_numpy().sum())


def _parse_stamp(stamp: str, line_no: int) -> pd.Period:
    text = stamp.strip()
    match = _ISO_MONTH_RE.match(text)
    if match and 1 <= int(match.group(2)) <= 12:
        return pd.Period(year=int(match.group(1)), month=int(match.group(2)), freq='M')
    match = _US_DATE_RE.match(text)
    if match and 1 <= int(match.group(1)) <= 12:
        return pd.Period(year=int(match.group(3)), month=int(match.group(1)), freq='M')
    raise VintageParseError(f"{line_no}행: 월 표기가 올바르지 않습니다 ({stamp!r})")


def _parse_cell(text: str, line_no: int, code: str) -> float:
    token = text.strip()
    if token.lower() in MISSING_TOKENS:
        return math.nan
    try:
        value = float(token)
    except ValueError as exc:
        raise VintageParseError(
            f"{line_no}행 {code}열: 숫자가 아닌 값 {text!r}"
        ) from exc
    if not math.isfinite(value):
        raise VintageParseError(f"{line_no}행 {code}열: 유한하지 않은 값 {text!r}")
    return value


def _release_from_filename(path: Union[str, os.PathLike]) -> Optional[pd.Period]:
    matches = _FILENAME_MONTH_RE.findall(os.path.basename(os.fspath(path)))
    if not matches:
        return None
    year, month = matches[-1]
    if not 1 <= int(month) <= 12:
        return None
    return pd.Period(year=int(year), month=int(month), freq='M')


def parse_vintage(path: Union[str, os.PathLike], manifest: SeriesManifest,
                  release_id: Optional[MonthLike] = None) -> Vintage:
    """
    빈티지 CSV 파싱

    - 헤더 "date,<code1>,..." 또는 FRED-MD 원본 헤더 "sasdate,..."
    - FRED-MD의 "Transform:" 행은 무시하고 매니페스트의 변환 코드를 쓴다
    - 월 순서가 뒤섞여 있으면 오름차순으로 정렬한다
    - release_id 생략 시 파일명의 YYYY-MM을 사용한다
    """
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skip_blank_lines=True
        )
    except pd.errors.EmptyDataError as exc:
        raise VintageParseError(f"데이터 행이 없습니다 (no data rows): {path}") from exc

    if frame.columns.empty:
        raise VintageParseError(f"데이터 행이 없습니다 (no data rows): {path}")
    date_column = frame.columns[0]
    native = date_column.strip().lower() == 'sasdate'
    if native:
        frame = frame[~frame[date_column].str.strip().str.lower().str.startswith('transform')]
    if frame.empty:
        raise VintageParseError(f"데이터 행이 없습니다 (no data rows): {path}")

    codes = [str(column).strip() for column in frame.columns[1:]]
    unknown = [code for code in codes if code not in manifest]
    if unknown and native:
        # FRED-MD 원본은 매니페스트보다 열이 많다
        logger.warning("매니페스트에 없는 시계열 %d개 제외: %s (%s)", len(unknown), ', '.join(unknown), path)
        keep = [0] + [pos + 1 for pos, code in enumerate(codes) if code in manifest]
        frame = frame.iloc[:, keep]
        codes = [code for code in codes if code in manifest]
    elif unknown:
        raise VintageParseError(
            f"매니페스트에 없는 시계열 코드: {', '.join(unknown)} ({path})"
        )

    months = []
    rows = []
    for index, raw in zip(frame.index, frame.itertuples(index=False, name=None)):
        line_no = int(index) + 2
        months.append(_parse_stamp(str(raw[0]), line_no))
        rows.append([
            _parse_cell(str(cell), line_no, code)
            for cell, code in zip(raw[1:], codes)
        ])

    index = pd.PeriodIndex(months, freq='M')
    if index.has_duplicates:
        duplicated = sorted({str(month) for month in index[index.duplicated()]})
        raise VintageParseError(f"중복된 월이 있습니다: {', '.join(duplicated)} ({path})")

    data = pd.DataFrame(rows, index=index, columns=codes, dtype=float).sort_index()

    if release_id is None:
        release = _release_from_filename(path)
        if release is None:
            raise VintageParseError(f"파일명에서 공표월(YYYY-MM)을 찾을 수 없습니다: {path}")
    else:
        release = to_month(release_id)

    vintage = Vintage(
        release_id=release,
        data=data,
        tcodes={code: manifest.tcode(code) for code in codes},
    )
    logger.debug(
        "빈티지 로드: %s (%d개월 × %d계열, 결측 %d칸)",
        release, len(vintage.data), len(codes), vintage.missing_count(),
    )
    return vintage


def write_vintage_csv(vintage: Vintage, path: Union[str, os.PathLike]) -> None:
    """빈티지를 "date,<codes>" CSV로 저장한다 (빈칸 = 결측)."""
    frame = vintage.data.copy()
    frame.index = [str(month) for month in frame.index]
    frame.index.name = 'date'
    frame.to_csv(path, na_rep='', float_format='%.17g', lineterminator='\n')


# ============================================================
# 정상성 변환
# ============================================================
def apply_transform(series, code: int) -> pd.Series:
    """
    변환 코드 적용. 결측은 엄격하게 전파된다 (차분에 쓰인 값 중 하나라도
    결측이면 결과도 결측). 차분 차수만큼 앞쪽 구간이 줄어든다.
    """
    if code not in TRANSFORM_ORDERS:
        raise TransformError(f"지원하지 않는 변환 코드: {code}")
    if not isinstance(series, pd.Series):
        series = pd.Series(np.asarray(series, dtype=float))
    series = series.astype(float)
    order = TRANSFORM_ORDERS[code]
    if len(series) < order + 1:
        raise TransformError(
            f"변환 코드 {code}에는 최소 {order + 1}개 값이 필요합니다 (현재 {len(series)}개)"
        )

    if code in LOG_TRANSFORMS:
        nonpositive = series[series <= 0]
        if not nonpositive.empty:
            raise TransformError(
                f"로그 변환 대상에 0 이하 값이 있습니다: "
                f"{nonpositive.index[0]} = {nonpositive.iloc[0]}"
            )
        result = np.log(series)
    else:
        result = series.copy()

    for _ in range(order):
        result = result.diff()
    return result.iloc[order:]


def transform_vintage(vintage: Vintage, codes: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """빈티지 전체 인덱스 위에서 변환한 시계열 (평가용 실현값)"""
    codes = list(codes) if codes is not None else vintage.series_codes
    columns = {}
    for code in codes:
        transformed = apply_transform(vintage.data[code], vintage.tcodes[code])
        columns[code] = transformed.reindex(vintage.data.index)
    return pd.DataFrame(columns, index=vintage.data.index)


# ============================================================
# 패널
# ============================================================
@dataclass(frozen=True)
class StandardizationInfo:
    """표준화 전 평균 m_y와 표준편차 s_y"""
    m_y: np.ndarray
    s_y: np.ndarray

    def __post_init__(self):
        m_y = np.array(self.m_y, dtype=float).reshape(-1)
        s_y = np.array(self.s_y, dtype=float).reshape(-1)
        if m_y.shape != s_y.shape:
            raise StandardizationError("m_y와 s_y의 길이가 다릅니다")
        if np.any(~(s_y > 0)):
            raise StandardizationError("s_y는 모두 양수여야 합니다")
        m_y.setflags(write=False)
        s_y.setflags(write=False)
        object.__setattr__(self, 'm_y', m_y)
        object.__setattr__(self, 's_y', s_y)

    def __len__(self) -> int:
        return self.m_y.shape[0]

    def extended(self, count: int) -> 'StandardizationInfo':
        """요인 열 count개를 m=0, s=1로 덧붙인다."""
        return StandardizationInfo(
            np.concatenate([self.m_y, np.zeros(count)]),
            np.concatenate([self.s_y, np.ones(count)]),
        )

    def subset(self, indices: Sequence[int]) -> 'StandardizationInfo':
        indices = list(indices)
        return StandardizationInfo(self.m_y[indices], self.s_y[indices])


@dataclass(frozen=True)
class Panel:
    """T×M 패널. values의 결측 칸은 NaN이고 mask(True=관측)와 일치한다."""
    values: np.ndarray
    mask: np.ndarray
    period_index: pd.PeriodIndex
    series_codes: Tuple[str, ...]
    std_info: Optional[StandardizationInfo] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise PanelError("values와 mask는 같은 T×M 모양이어야 합니다")
        if len(self.period_index) != values.shape[0]:
            raise PanelError("period_index 길이가 행 수와 다릅니다")
        if len(self.series_codes) != values.shape[1]:
            raise PanelError("series_codes 길이가 열 수와 다릅니다")
        if self.std_info is not None and len(self.std_info) != values.shape[1]:
            raise PanelError("std_info 길이가 열 수와 다릅니다")
        values = np.where(mask, values, np.nan)
        if np.any(~np.isfinite(values[mask])):
            raise PanelError("관측 칸에 유한하지 않은 값이 있습니다")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'mask', mask)
        object.__setattr__(self, 'period_index', pd.PeriodIndex(self.period_index, freq='M'))
        object.__setattr__(self, 'series_codes', tuple(self.series_codes))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    @property
    def standardized(self) -> bool:
        return self.std_info is not None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.period_index, columns=list(self.series_codes))


def build_panel(vintage: Vintage, series_set: Sequence[str], sample_start: MonthLike,
                sample_end: Optional[MonthLike] = None) -> Panel:
    """
    선택한 시계열을 변환해 sample_start부터 (선택 집합의) 마지막 관측월까지
    공통 월간 격자에 정렬한다. sample_end를 주면 격자 끝을 고정한다.
    """
    codes = list(series_set)
    if not codes:
        raise PanelError("series_set이 비어 있습니다")
    missing_codes = [code for code in codes if code not in vintage.data.columns]
    if missing_codes:
        raise PanelError(
            f"빈티지 {vintage.release_id}에 없는 시계열: {', '.join(missing_codes)}"
        )
    start = to_month(sample_start)

    transformed = {}
    last_months = []
    for code in codes:
        series = apply_transform(vintage.data[code], vintage.tcodes[code])
        if start < series.index[0]:
            raise PanelError(
                f"{code}: sample_start {start}이(가) 변환 후 첫 가용월 "
                f"{series.index[0]}보다 이릅니다"
            )
        window = series.loc[start:].dropna()
        if window.empty:
            raise PanelError(f"{code}: {start} 이후 관측값이 없습니다 (공통 구간 없음)")
        transformed[code] = series
        last_months.append(window.index[-1])

    end = to_month(sample_end) if sample_end is not None else max(last_months)
    if end < start:
        raise PanelError(f"표본 구간이 비어 있습니다: {start} ~ {end}")
    grid = pd.period_range(start, end, freq='M')
    frame = pd.DataFrame({code: transformed[code].reindex(grid) for code in codes}, index=grid)
    values = frame.to_numpy(dtype=float)
    return Panel(values, ~np.isnan(values), grid, tuple(codes))


def standardize(panel: Panel) -> Panel:
    """관측 칸만으로 열별 평균·표본표준편차(n−1)를 구해 (x−m)/s로 바꾼다."""
    if panel.standardized:
        raise StandardizationError("이미 표준화된 패널입니다")
    means = np.empty(panel.M)
    sds = np.empty(panel.M)
    for j, code in enumerate(panel.series_codes):
        observed = panel.values[panel.mask[:, j], j]
        if observed.size < 2:
            raise StandardizationError(f"{code}: 관측값이 2개 미만입니다")
        mean = float(np.mean(observed))
        sd = float(np.std(observed, ddof=1))
        if not sd > 1e-12 * max(1.0, abs(mean)):
            raise StandardizationError(f"{code}: 분산이 0입니다 (zero variance)")
        means[j] = mean
        sds[j] = sd
    values = (panel.values - means) / sds
    return Panel(values, panel.mask, panel.period_index, panel.series_codes,
                 StandardizationInfo(means, sds))


def destandardize(x, info: StandardizationInfo) -> np.ndarray:
    """x ⊙ s_y + m_y (마지막 축이 시계열 축)"""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(info):
        raise ValueError(f"차원이 다릅니다: {x.shape[-1]} != {len(info)}")
    return x * info.s_y + info.m_y


# ============================================================
# 의사 표본외 정보집합
# ============================================================
def resolve_lag_profile(codes: Iterable[str],
                        lag_profile: Union[None, int, Mapping[str, int]] = None,
                        default: int = DEFAULT_LAG_MONTHS) -> Dict[str, int]:
    """정수 하나 또는 시계열별 매핑을 시계열별 공표 시차로 펼친다."""
    if lag_profile is None:
        return {code: default for code in codes}
    if isinstance(lag_profile, int):
        return {code: lag_profile for code in codes}
    return {code: int(lag_profile.get(code, default)) for code in codes}


def truncate_final_vintage(final: Vintage, asof: MonthLike,
                           lag_profile: Union[None, int, Mapping[str, int]] = None) -> Vintage:
    """
    최종 빈티지에서 시계열별로 (asof − 공표시차) 이후 관측을 지운다.
    결과의 release_id는 asof이며 같은 달의 실제 빈티지와 기간이 맞는다.
    """
    asof = to_month(asof)
    if final.data.empty or asof < final.data.index[0]:
        raise VintageError(f"asof {asof}이(가) 표본 시작보다 이릅니다")
    if asof > final.release_id:
        raise VintageError(f"asof {asof}이(가) 최종 빈티지 {final.release_id} 이후입니다")

    lags = resolve_lag_profile(final.series_codes, lag_profile)
    data = final.data.loc[:asof].copy()
    for code, lag in lags.items():
        if lag < 0:
            raise VintageError(f"{code}: 공표 시차는 0 이상이어야 합니다")
        data.loc[data.index > asof - lag, code] = np.nan

    observed_rows = data.notna().any(axis=1)
    if observed_rows.any():
        data = data.loc[:observed_rows[observed_rows].index[-1]]
    return Vintage(release_id=asof, data=data, tcodes=dict(final.tcodes))
