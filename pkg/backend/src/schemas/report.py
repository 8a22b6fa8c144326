"""
Pydantic schemas for evaluation results
"""

from pydantic import BaseModel, ConfigDict, Field

EVAL_CSV_COLUMNS = ("sequence", "mota", "idf1", "idsw", "num_gt", "fn", "fp", "matches")


class SequenceMetrics(BaseModel):
    """CLEAR and identity counts of one sequence"""

    sequence: str
    mota: float = Field(le=1)
    idf1: float = Field(ge=0, le=1)
    idsw: int = Field(ge=0)
    num_gt: int = Field(ge=0)
    fn: int = Field(ge=0)
    fp: int = Field(ge=0)
    matches: int = Field(ge=0)
    idtp: int = Field(default=0, ge=0)
    idfp: int = Field(default=0, ge=0)
    idfn: int = Field(default=0, ge=0)

    model_config = ConfigDict(frozen=True)

    def csv_row(self) -> dict:
        return {name: getattr(self, name) for name in EVAL_CSV_COLUMNS}


class EvalReport(BaseModel):
    """Totals over all sequences plus the per-sequence breakdown"""

    mota: float = Field(le=1)
    idf1: float = Field(ge=0, le=1)
    idsw: int = Field(ge=0)
    total: SequenceMetrics
    sequences: list[SequenceMetrics]

    model_config = ConfigDict(frozen=True)
