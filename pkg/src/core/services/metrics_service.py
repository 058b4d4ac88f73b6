"""
Metrics Service Module (Prometheus)

학습/평가 과정의 카운터와 히스토그램을 prometheus-client 로 수집합니다.
모델/리포트 산출물에는 포함되지 않으며, --metrics-file 지정 시 textfile 로 기록됩니다.
"""

from typing import Optional
import logging

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

# Configure logging
logger = logging.getLogger(__name__)


class MetricsService:
    """Prometheus 메트릭 서비스 (프로세스 전용 registry)"""

    def __init__(self, registry: Optional[CollectorRegistry] = None):
        """Initialize Metrics Service"""
        self.registry = registry or CollectorRegistry()

        self.em_iterations = Counter(
            "magma_em_iterations",
            "EM iterations executed",
            ["hp_mode"],
            registry=self.registry
        )
        self.restarts = Counter(
            "magma_training_restarts",
            "Training restarts by outcome",
            ["hp_mode", "outcome"],
            registry=self.registry
        )
        self.restart_duration = Histogram(
            "magma_restart_duration_seconds",
            "Wall-clock time of one training restart",
            ["hp_mode"],
            buckets=(0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0, 120.0),
            registry=self.registry
        )
        self.best_log_likelihood = Gauge(
            "magma_best_log_likelihood",
            "Log-likelihood of the selected restart",
            ["hp_mode"],
            registry=self.registry
        )
        self.evaluated_cases = Counter(
            "magma_evaluated_cases",
            "Test individuals evaluated",
            ["outcome"],
            registry=self.registry
        )

        logger.debug("MetricsService initialized")

    def record_restart(self, hp_mode: str, outcome: str, duration_seconds: float, em_iterations: int = 0) -> None:
        self.restarts.labels(hp_mode=hp_mode, outcome=outcome).inc()
        self.restart_duration.labels(hp_mode=hp_mode).observe(duration_seconds)
        if em_iterations:
            self.em_iterations.labels(hp_mode=hp_mode).inc(em_iterations)

    def record_selection(self, hp_mode: str, log_likelihood: float) -> None:
        self.best_log_likelihood.labels(hp_mode=hp_mode).set(log_likelihood)

    def record_case(self, outcome: str) -> None:
        self.evaluated_cases.labels(outcome=outcome).inc()

    def sample_value(self, name: str, labels: Optional[dict] = None) -> Optional[float]:
        """Current value of one sample (used by tests and the CLI summary)"""
        return self.registry.get_sample_value(name, labels or {})

    def write_textfile(self, path: str) -> None:
        """
        Registry 를 Prometheus textfile 형식으로 기록

        Args:
            path: 출력 파일 경로
        """
        write_to_textfile(path, self.registry)
        logger.info(f"Metrics written to {path}")


# Singleton instance
_metrics_service_instance = None


def get_metrics_service() -> MetricsService:
    """
    Metrics Service 싱글톤 인스턴스 반환

    Returns:
        MetricsService: Metrics Service 인스턴스
    """
    global _metrics_service_instance
    if _metrics_service_instance is None:
        _metrics_service_instance = MetricsService()
    return _metrics_service_instance


def reset_metrics_service() -> None:
    """Drop the singleton (fresh registry per CLI invocation / test)"""
    global _metrics_service_instance
    _metrics_service_instance = None
