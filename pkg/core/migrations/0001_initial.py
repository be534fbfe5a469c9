import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='LogEntry',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('timestamp', models.DateTimeField(auto_now_add=True)),
                ('level', models.CharField(choices=[('INFO', 'Information'), ('WARNING', 'Warning'), ('ERROR', 'Error'), ('DEBUG', 'Debug')], default='INFO', max_length=10)),
                ('message', models.TextField()),
                ('source', models.CharField(default='system', max_length=100)),
                ('metadata', models.JSONField(blank=True, default=dict)),
            ],
            options={
                'ordering': ['-timestamp'],
                'indexes': [models.Index(fields=['level'], name='core_logentry_level_idx'), models.Index(fields=['timestamp'], name='core_logentry_time_idx'), models.Index(fields=['source'], name='core_logentry_source_idx')],
            },
        ),
        migrations.CreateModel(
            name='SigmaConstant',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('m', models.PositiveSmallIntegerField()),
                ('p', models.FloatField()),
                ('sign', models.SmallIntegerField(choices=[(1, '+'), (-1, '-')])),
                ('cap', models.FloatField()),
                ('value', models.FloatField()),
                ('provenance', models.CharField(blank=True, max_length=255)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['m', 'p', '-sign'],
                'constraints': [models.UniqueConstraint(fields=('m', 'p', 'sign', 'cap'), name='unique_sigma_constant')],
            },
        ),
        migrations.CreateModel(
            name='StudyRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('function', models.CharField(max_length=50)),
                ('m', models.PositiveSmallIntegerField()),
                ('p', models.FloatField()),
                ('strategy', models.CharField(choices=[('adapted', 'Adapted'), ('uniform', 'Uniform')], max_length=10)),
                ('seed', models.BigIntegerField()),
                ('threads', models.PositiveIntegerField(default=1)),
                ('predicted', models.FloatField(blank=True, null=True)),
                ('status', models.CharField(choices=[('running', 'Running'), ('done', 'Done'), ('failed', 'Failed')], default='running', max_length=10)),
                ('output_path', models.CharField(blank=True, max_length=500)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['function'], name='core_studyrun_function_idx'), models.Index(fields=['status'], name='core_studyrun_status_idx')],
            },
        ),
        migrations.CreateModel(
            name='StudyRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('target', models.PositiveIntegerField()),
                ('triangles', models.PositiveIntegerField()),
                ('error', models.FloatField(blank=True, null=True)),
                ('scaled', models.FloatField(blank=True, null=True)),
                ('predicted', models.FloatField(blank=True, null=True)),
                ('ratio', models.FloatField(blank=True, null=True)),
                ('failure', models.TextField(blank=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='records', to='core.studyrun')),
            ],
            options={
                'ordering': ['run', 'target'],
            },
        ),
    ]
