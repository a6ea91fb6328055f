import uuid

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='EvaluationRecord',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('model_id', models.CharField(max_length=255)),
                ('dataset_id', models.CharField(max_length=255)),
                ('sequences', models.PositiveIntegerField(default=0)),
                ('mse', models.FloatField()),
                ('mae', models.FloatField()),
                ('ae99', models.FloatField()),
                ('burn_in', models.PositiveIntegerField(default=0)),
                ('per_state', models.JSONField(blank=True, default=dict)),
                ('checkpoint', models.CharField(blank=True, default='', max_length=1024)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
