from django.db import models
from shared.basemodel import BaseModel


class EvaluationRecord(BaseModel):
    model_id = models.CharField(max_length=255)
    dataset_id = models.CharField(max_length=255)
    sequences = models.PositiveIntegerField(default=0)
    mse = models.FloatField()
    mae = models.FloatField()
    ae99 = models.FloatField()
    burn_in = models.PositiveIntegerField(default=0)
    per_state = models.JSONField(default=dict, blank=True)
    checkpoint = models.CharField(max_length=1024, blank=True, default="")

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.model_id} on {self.dataset_id}: mse {self.mse:.4g}"

    @classmethod
    def from_report(cls, report, burn_in=0, checkpoint=""):
        return cls.objects.create(
            model_id=report.model,
            dataset_id=report.dataset,
            sequences=report.sequences,
            mse=report.mse,
            mae=report.mae,
            ae99=report.ae99,
            burn_in=burn_in,
            per_state=report.per_state,
            checkpoint=str(checkpoint),
        )
