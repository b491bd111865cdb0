# app/common/logger.py

import logging
import logging.handlers
import os
import re
import time
from typing import Literal

from app.common.settings import settings

# when 값별 (파일명 접미사, 접미사 검증 정규식, 기본 간격 초)
_ROLLOVER_FORMATS = {
    "H": ("%Y-%m-%d_%H", r"^\d{4}-\d{2}-\d{2}_\d{2}$", 60 * 60),
    "D": ("%Y-%m-%d", r"^\d{4}-\d{2}-\d{2}$", 60 * 60 * 24),
    "MIDNIGHT": ("%Y-%m-%d", r"^\d{4}-\d{2}-\d{2}$", 60 * 60 * 24),
}


class ParallelTimedRotatingFileHandler(logging.handlers.TimedRotatingFileHandler):
    """
    현재 날짜가 파일명에 들어가는 회전 핸들러.
    여러 프로세스(시뮬레이션 워커, API)가 같은 디렉토리에 써도 rename 충돌이 없다.
    """

    def __init__(
        self,
        filename,
        when="midnight",
        interval=1,
        backupCount=0,
        encoding=None,
        delay=False,
        utc=False,
        postfix=".log",
    ):
        self.origFileName = filename
        self.when = when.upper()
        if self.when not in _ROLLOVER_FORMATS:
            raise ValueError("Invalid rollover interval specified: %s" % self.when)
        self.backupCount = backupCount
        self.utc = utc
        self.postfix = postfix
        self.encoding = encoding
        self.atTime = None

        self.suffix, ext_pattern, base_interval = _ROLLOVER_FORMATS[self.when]
        self.extMatch = re.compile(ext_pattern)
        self.interval = base_interval * interval

        currenttime = int(time.time())
        logging.handlers.BaseRotatingHandler.__init__(
            self, self.calculateFileName(currenttime), "a", encoding, delay
        )
        self.rolloverAt = self.computeRollover(currenttime)

    def calculateFileName(self, currenttime):
        timeTuple = time.gmtime(currenttime) if self.utc else time.localtime(currenttime)
        return f"{self.origFileName}-{time.strftime(self.suffix, timeTuple)}{self.postfix}"

    def getFilesToDelete(self, newFileName):
        dirName, fName = os.path.split(self.origFileName)
        newBase = os.path.basename(newFileName)
        prefix = fName + "-"

        result = []
        for fileName in os.listdir(dirName):
            if not (fileName.startswith(prefix) and fileName.endswith(self.postfix)):
                continue
            if fileName == newBase:
                continue
            if self.extMatch.match(fileName[len(prefix) : -len(self.postfix)]):
                result.append(os.path.join(dirName, fileName))

        result.sort()
        if len(result) < self.backupCount:
            return []
        return result[: len(result) - self.backupCount]

    def doRollover(self):
        if self.stream:
            self.stream.close()
            self.stream = None

        currentTime = self.rolloverAt
        newFileName = self.calculateFileName(currentTime)
        os.makedirs(os.path.dirname(newFileName) or ".", exist_ok=True)
        self.baseFilename = os.path.abspath(newFileName)
        self.stream = self._open()

        if self.backupCount > 0:
            for stale in self.getFilesToDelete(newFileName):
                try:
                    os.remove(stale)
                except OSError:
                    pass

        newRolloverAt = self.computeRollover(currentTime)
        while newRolloverAt <= currentTime:
            newRolloverAt += self.interval
        self.rolloverAt = newRolloverAt


ServiceName = Literal["cvpm", "sim"]


def _attach_handler(logger: logging.Logger, log_dir: str, name: str, fmt: logging.Formatter):
    os.makedirs(log_dir, exist_ok=True)
    handler = ParallelTimedRotatingFileHandler(
        filename=f"{log_dir}/{name}",
        when="midnight",
        interval=1,
        backupCount=30,
        encoding="utf-8",
    )
    handler.setFormatter(fmt)
    logger.addHandler(handler)
    logger.propagate = False


def setup_loggers(log_root: str | None = None):
    root = log_root or settings.log_dir

    # --- 1. system 로거 (API 요청, CLI 진입점) ---
    main_logger = logging.getLogger("system")
    main_logger.setLevel(logging.INFO)
    if not main_logger.handlers:
        formatter = logging.Formatter(
            "[%(levelname)s] %(asctime)s - [%(route)s] - %(message)s",
            defaults={"route": "system"},
        )
        _attach_handler(main_logger, f"{root}/system", "system", formatter)

    # --- 2. 서비스별 로거 (제어기 / 시뮬레이터) ---
    services: list[ServiceName] = ["cvpm", "sim"]
    for service_name in services:
        logger = logging.getLogger(service_name)
        logger.setLevel(logging.INFO)
        if not logger.handlers:
            formatter = logging.Formatter("%(asctime)s - %(levelname)s - %(message)s")
            _attach_handler(logger, f"{root}/{service_name}", service_name, formatter)


setup_loggers()

main_logger = logging.getLogger("system")
cvpm_logger = logging.getLogger("cvpm")
sim_logger = logging.getLogger("sim")
