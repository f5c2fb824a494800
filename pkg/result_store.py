"""
DuckDB 기반 실험 결과 저장소
============================
- 실험 디렉터리: results.duckdb + cells/<model_id>/<info_set>/<origin>/ (추출·예측 파일)
- cells 테이블: 셀(모형 × 정보집합 × 예측 시점)별 상태, 시드, 결과 경로
- scores 테이블: 예측 오차(fe)와 로그 예측 점수(lpl) 행
- manifest.json: 설정 해시, 패키지 버전, 시드, 모든 결과 파일 목록 (원자적 쓰기)

사용 예시:
    from result_store import ResultStore
    store = ResultStore('out/exp1')
    store.record_cell(CellRecord('small-cp', 'realtime', '2000-01', 'ok', 123))
    cells = store.get_cells()
"""

import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass
from typing import Iterable, List, Optional, Union

import duckdb
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

INFO_SETS = ('realtime', 'pseudo')
SCORE_COLUMNS = ['model_id', 'info_set', 'origin', 'target', 'horizon', 'variable', 'fe', 'lpl']
CELL_COLUMNS = ['model_id', 'info_set', 'origin', 'status', 'seed', 'message',
                'draws_path', 'forecasts_path', 'config_hash']


class ResultStoreError(RuntimeError):
    """결과 저장소 내용이 올바르지 않을 때 발생한다."""


def write_json_atomic(path: Union[str, os.PathLike], data: dict) -> None:
    """같은 디렉터리의 임시 파일을 거쳐 JSON을 원자적으로 교체한다."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    descriptor, temporary = tempfile.mkstemp(prefix=".manifest-", suffix=".json", dir=directory)
    try:
        with os.fdopen(descriptor, "w", encoding="utf-8") as file:
            json.dump(data, file, ensure_ascii=False, indent=2, sort_keys=True)
            file.flush()
            os.fsync(file.fileno())
        os.replace(temporary, path)
    except Exception:
        try:
            os.unlink(temporary)
        except FileNotFoundError:
            pass
        raise


def package_versions() -> dict:
    import scipy
    return {
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'duckdb': duckdb.__version__,
    }


@dataclass(frozen=True)
class CellRecord:
    model_id: str
    info_set: str
    origin: str
    status: str
    seed: int
    message: str = ''
    draws_path: str = ''
    forecasts_path: str = ''
    config_hash: str = ''

    def __post_init__(self):
        if self.info_set not in INFO_SETS:
            raise ResultStoreError(f"알 수 없는 정보집합: {self.info_set!r}")
        if self.status not in ('ok', 'failed'):
            raise ResultStoreError(f"알 수 없는 셀 상태: {self.status!r}")

    @property
    def key(self) -> tuple:
        return self.model_id, self.info_set, self.origin

    def as_row(self) -> tuple:
        row = [getattr(self, column) for column in CELL_COLUMNS]
        row[CELL_COLUMNS.index("seed")] = int(self.seed)
        return tuple(row)


class ResultStore:
    """실험 디렉터리 하나의 DuckDB 결과 저장소"""

    _mutation_locks = {}
    _mutation_locks_guard = threading.Lock()

    def __init__(self, root: Union[str, os.PathLike]):
        self.root = os.path.normcase(os.path.realpath(os.path.abspath(os.fspath(root))))
        os.makedirs(self.root, exist_ok=True)
        self.db_path = os.path.join(self.root, 'results.duckdb')
        with self._mutation_locks_guard:
            self._mutation_lock = self._mutation_locks.setdefault(self.db_path, threading.RLock())
        with self._mutation_lock:
            self._init_tables()

    def _connect(self):
        """DuckDB 연결 (매 호출마다 새 연결)"""
        return duckdb.connect(self.db_path)

    def _init_tables(self):
        con = self._connect()
        try:
            con.execute("""
                CREATE TABLE IF NOT EXISTS cells (
                    model_id VARCHAR NOT NULL,
                    info_set VARCHAR NOT NULL,
                    origin VARCHAR NOT NULL,
                    status VARCHAR NOT NULL,
                    seed BIGINT NOT NULL,
                    message VARCHAR,
                    draws_path VARCHAR,
                    forecasts_path VARCHAR,
                    config_hash VARCHAR
                )
            """)
            con.execute("""
                CREATE TABLE IF NOT EXISTS scores (
                    model_id VARCHAR NOT NULL,
                    info_set VARCHAR NOT NULL,
                    origin VARCHAR NOT NULL,
                    target VARCHAR NOT NULL,
                    horizon INTEGER NOT NULL,
                    variable VARCHAR NOT NULL,
                    fe DOUBLE,
                    lpl DOUBLE
                )
            """)
        finally:
            con.close()
        logger.debug("결과 저장소 초기화: %s", self.db_path)

    def _transaction(self, statements):
        """(sql, rows) 목록을 한 트랜잭션으로 실행한다."""
        with self._mutation_lock:
            con = self._connect()
            transaction_started = False
            try:
                con.execute("BEGIN TRANSACTION")
                transaction_started = True
                for sql, rows in statements:
                    if rows is None:
                        con.execute(sql)
                    elif rows:
                        con.executemany(sql, rows)
                con.execute("COMMIT")
                transaction_started = False
            except Exception:
                if transaction_started:
                    con.execute("ROLLBACK")
                raise
            finally:
                con.close()

    # ----------------------------------------------------------
    # 셀
    # ----------------------------------------------------------
    def cell_dir(self, model_id: str, info_set: str, origin: str) -> str:
        return os.path.join(self.root, 'cells', model_id, info_set, origin)

    def record_cells(self, records: Iterable[CellRecord]) -> int:
        records = list(records)
        keys = [record.key for record in records]
        if len(set(keys)) != len(keys):
            raise ResultStoreError("같은 셀이 두 번 기록되었습니다")
        placeholders = ', '.join('?' for _ in CELL_COLUMNS)
        self._transaction([
            ("DELETE FROM cells WHERE model_id = ? AND info_set = ? AND origin = ?", keys),
            (f"INSERT INTO cells ({', '.join(CELL_COLUMNS)}) VALUES ({placeholders})",
             [record.as_row() for record in records]),
        ])
        return len(records)

    def record_cell(self, record: CellRecord) -> None:
        self.record_cells([record])

    def get_cells(self, status: Optional[str] = None) -> pd.DataFrame:
        con = self._connect()
        try:
            sql = f"SELECT {', '.join(CELL_COLUMNS)} FROM cells"
            params = []
            if status is not None:
                sql += " WHERE status = ?"
                params.append(status)
            sql += " ORDER BY model_id, info_set, origin"
            return con.execute(sql, params).df()
        finally:
            con.close()

    def failed_count(self) -> int:
        con = self._connect()
        try:
            return int(con.execute("SELECT COUNT(*) FROM cells WHERE status = 'failed'").fetchone()[0])
        finally:
            con.close()

    # ----------------------------------------------------------
    # 점수
    # ----------------------------------------------------------
    def replace_scores(self, scores: pd.DataFrame) -> int:
        """점수 테이블 전체를 원자적으로 교체한다."""
        missing = [column for column in SCORE_COLUMNS if column not in scores.columns]
        if missing:
            raise ResultStoreError(f"점수 표에 없는 열: {', '.join(missing)}")
        frame = scores[SCORE_COLUMNS]
        if frame.duplicated(['model_id', 'info_set', 'origin', 'horizon', 'variable']).any():
            raise ResultStoreError("같은 (모형, 정보집합, 시점, 예측기간, 변수) 점수가 중복되었습니다")
        rows = [
            (str(r.model_id), str(r.info_set), str(r.origin), str(r.target), int(r.horizon),
             str(r.variable), _nullable(r.fe), _nullable(r.lpl))
            for r in frame.itertuples(index=False)
        ]
        placeholders = ', '.join('?' for _ in SCORE_COLUMNS)
        self._transaction([
            ("DELETE FROM scores", None),
            (f"INSERT INTO scores ({', '.join(SCORE_COLUMNS)}) VALUES ({placeholders})", rows),
        ])
        logger.info("점수 %d행 저장", len(rows))
        return len(rows)

    def get_scores(self) -> pd.DataFrame:
        con = self._connect()
        try:
            frame = con.execute(
                f"SELECT {', '.join(SCORE_COLUMNS)} FROM scores "
                "ORDER BY model_id, info_set, origin, horizon, variable"
            ).df()
        finally:
            con.close()
        frame['horizon'] = frame['horizon'].astype(int)
        return frame

    # ----------------------------------------------------------
    # 매니페스트
    # ----------------------------------------------------------
    def result_files(self) -> List[str]:
        """실험 디렉터리 아래 결과 파일의 상대 경로 (매니페스트·DB 제외)"""
        files = []
        for directory, _, names in os.walk(self.root):
            for name in names:
                if name.startswith('.') or (name == 'manifest.json' and directory == self.root):
                    continue
                if name.startswith('results.duckdb'):
                    continue
                files.append(os.path.relpath(os.path.join(directory, name), self.root))
        return sorted(path.replace(os.sep, '/') for path in files)

    def write_manifest(self, config: dict, config_hash: str, seeds: dict) -> str:
        path = os.path.join(self.root, 'manifest.json')
        write_json_atomic(path, {
            'config': config,
            'config_hash': config_hash,
            'versions': package_versions(),
            'seeds': seeds,
            'files': self.result_files(),
        })
        return path

    def read_manifest(self) -> dict:
        path = os.path.join(self.root, 'manifest.json')
        if not os.path.exists(path):
            raise ResultStoreError(f"매니페스트가 없습니다: {path}")
        with open(path, encoding='utf-8') as f:
            return json.load(f)


def _nullable(value) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None
