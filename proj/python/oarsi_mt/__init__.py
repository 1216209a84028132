# Copyright 2026 The oarsi-mt Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Multi-task knee radiograph grading: metrics, schedules and pipeline stages."""

from ._core import (
    TASKS,
    TASK_CLASSES,
    BootstrapError,
    ConfigError,
    DataError,
    OarsiError,
    UndefinedStatistic,
    UsageError,
    balanced_accuracy,
    bootstrap_balanced_accuracy,
    cohen_kappa,
    config_hash,
    evaluate,
    f1_macro,
    lr_trace,
    mse_grades,
    percentile,
    pr_curve,
    predict,
    preprocess,
    pretrain,
    resolved_config,
    roc_curve,
    synth,
    train,
    training_crop_side,
)

__version__ = "0.1.0"
