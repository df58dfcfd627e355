import logging
from dataclasses import dataclass

import pandas as pd

from src.errors import ConfigurationError, EvaluationError
from src.model.lockstep_core import required_coverage

logger = logging.getLogger(__name__)

DEFAULT_COVERAGE = 0.8


@dataclass
class RecallResult:
    caught: int
    total: int
    recall: float
    per_attack: pd.DataFrame

    def as_dict(self):
        return {
            "caught": self.caught,
            "total": self.total,
            "recall": self.recall,
            "per_attack": self.per_attack.to_dict(orient="records"),
        }

    def table(self):
        return self.per_attack.to_string(index=False)


def evaluate_recall(reports, truth, coverage=DEFAULT_COVERAGE):
    """Fraction of ground-truth attacks caught by some reported lockstep.

    An attack is caught when one lockstep of the same mode holds at least
    ceil(coverage * |users|) of its users and ceil(coverage * min(|products|, m))
    of its products, m being the product count the detecting run asked for.
    `reports` is one DetectionReport or a list of them.
    """
    if not 0 < coverage <= 1:
        raise ConfigurationError(f"coverage must be in (0, 1], got {coverage}")
    if not len(truth):
        raise EvaluationError("ground truth holds no attacks")
    if not isinstance(reports, (list, tuple)):
        reports = [reports]

    candidates = []
    for report_index, report in enumerate(reports):
        m = report.params.get("m")
        for lockstep_index, lockstep in enumerate(report.locksteps):
            candidates.append(
                (report_index, lockstep_index, lockstep.mode, set(lockstep.users), set(lockstep.products), m)
            )

    rows = []
    for attack_index, attack in enumerate(truth.attacks):
        users = set(attack.users)
        products = set(attack.products)
        best = None
        for report_index, lockstep_index, mode, found_users, found_products, m in candidates:
            if mode != attack.mode:
                continue
            user_hits = len(users & found_users)
            product_hits = len(products & found_products)
            product_target = min(len(products), m) if m else len(products)
            caught = user_hits >= required_coverage(coverage, len(users)) and (
                product_hits >= required_coverage(coverage, product_target)
            )
            key = (caught, user_hits + product_hits)
            if best is None or key > best[0]:
                best = (key, report_index, lockstep_index, user_hits, product_hits)

        if best is None:
            caught, report_index, lockstep_index, user_hits, product_hits = False, -1, -1, 0, 0
        else:
            (caught, _), report_index, lockstep_index, user_hits, product_hits = best
        rows.append(
            {
                "attack": attack_index,
                "mode": attack.mode,
                "users": len(users),
                "products": len(products),
                "user_coverage": user_hits / len(users),
                "product_coverage": product_hits / len(products),
                "caught": caught,
                "report": report_index,
                "lockstep": lockstep_index,
            }
        )

    per_attack = pd.DataFrame(rows)
    caught = int(per_attack["caught"].sum())
    total = len(truth.attacks)
    logger.info("caught %d of %d attacks", caught, total)
    return RecallResult(caught=caught, total=total, recall=caught / total, per_attack=per_attack)
