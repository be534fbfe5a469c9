from django.db import models


class LogEntry(models.Model):
    """Model for logging command runs and numerical milestones."""

    LOG_LEVEL_CHOICES = (
        ('INFO', 'Information'),
        ('WARNING', 'Warning'),
        ('ERROR', 'Error'),
        ('DEBUG', 'Debug'),
    )

    timestamp = models.DateTimeField(auto_now_add=True)
    level = models.CharField(max_length=10, choices=LOG_LEVEL_CHOICES, default='INFO')
    message = models.TextField()
    source = models.CharField(max_length=100, default='system')
    metadata = models.JSONField(default=dict, blank=True)

    def __str__(self):
        return f"{self.timestamp} - {self.level}: {self.message[:50]}..."

    class Meta:
        ordering = ['-timestamp']
        indexes = [
            models.Index(fields=['level'], name='core_logentry_level_idx'),
            models.Index(fields=['timestamp'], name='core_logentry_time_idx'),
            models.Index(fields=['source'], name='core_logentry_source_idx'),
        ]


class SigmaConstant(models.Model):
    """Oracle value of a shape-function constant on a normal form."""

    m = models.PositiveSmallIntegerField()
    p = models.FloatField()
    sign = models.SmallIntegerField(choices=((1, '+'), (-1, '-')))
    cap = models.FloatField()
    value = models.FloatField()
    provenance = models.CharField(max_length=255, blank=True)
    updated_at = models.DateTimeField(auto_now=True)

    def __str__(self):
        return f"sigma m={self.m} p={self.p:g} sign={self.sign:+d} cap={self.cap:g}: {self.value:.10g}"

    class Meta:
        ordering = ['m', 'p', '-sign']
        constraints = [
            models.UniqueConstraint(fields=['m', 'p', 'sign', 'cap'], name='unique_sigma_constant'),
        ]


class StudyRun(models.Model):
    """A convergence study launched from the command line."""

    STATUS_CHOICES = (
        ('running', 'Running'),
        ('done', 'Done'),
        ('failed', 'Failed'),
    )

    STRATEGY_CHOICES = (
        ('adapted', 'Adapted'),
        ('uniform', 'Uniform'),
    )

    function = models.CharField(max_length=50)
    m = models.PositiveSmallIntegerField()
    p = models.FloatField()
    strategy = models.CharField(max_length=10, choices=STRATEGY_CHOICES)
    seed = models.BigIntegerField()
    threads = models.PositiveIntegerField(default=1)
    predicted = models.FloatField(null=True, blank=True)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='running')
    output_path = models.CharField(max_length=500, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    def __str__(self):
        return f"{self.function} m={self.m} p={self.p:g} {self.strategy} ({self.status})"

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['function'], name='core_studyrun_function_idx'),
            models.Index(fields=['status'], name='core_studyrun_status_idx'),
        ]


class StudyRecord(models.Model):
    """One N-point of a convergence study."""

    run = models.ForeignKey(StudyRun, on_delete=models.CASCADE, related_name='records')
    target = models.PositiveIntegerField()
    triangles = models.PositiveIntegerField()
    error = models.FloatField(null=True, blank=True)
    scaled = models.FloatField(null=True, blank=True)
    predicted = models.FloatField(null=True, blank=True)
    ratio = models.FloatField(null=True, blank=True)
    failure = models.TextField(blank=True)

    def __str__(self):
        if self.failure:
            return f"N={self.target}: failed"
        return f"N={self.triangles}: ratio {self.ratio:.4g}"

    class Meta:
        ordering = ['run', 'target']
