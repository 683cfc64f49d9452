"""onsdkit: keyframe scoring, ONSD measurement and ICP grading.

Pipeline stages, each usable standalone:

  imaging   mm-unit raster/mask primitives (morphology, Dice, line fits)
  ingest    case-bundle and clinical-table formats
  keyframe  four-rule frame scoring, LDA weight fitting, ranking
  onsd      centerline -> globe exit -> 3 mm chord; Tukey-fence aggregate
  grading   50-feature fusion, Lasso screening, classifiers, 5-fold CV
  phantom   synthetic ground-truth generator used as the test oracle
  cli       the ``onsdkit`` command
"""

__version__ = "0.1.0"

from .errors import EmptyResultError, PipelineError, UnscorableFrame, ValidationError
from .imaging import (
    BACKGROUND,
    EYEBALL,
    SHEATH,
    Line2D,
    Raster,
    band_masks,
    dice,
    fit_line_tls,
    largest_component,
    masked_mean,
    masked_sum,
    morphology,
)
from .ingest import (
    AnnotationSet,
    CaseBundle,
    ClinicalRecord,
    apply_exclusions,
    impute_missing,
    load_case,
    load_clinical_table,
    write_case,
)
from .keyframe import (
    PAPER_WEIGHTS,
    FrameScore,
    RankedFrames,
    RuleScores,
    ScoringModel,
    compute_rule_scores,
    fit_lda,
    rank_frames,
    score_frame,
    topk_accuracy,
)
from .onsd import (
    Centerline,
    OnsdMeasurement,
    VideoOnsd,
    aggregate_video_onsd,
    bilateral_mean,
    extract_centerline,
    globe_intersection,
    measure_frame_onsd,
    measure_keyframes,
    pearson,
)
from .grading import (
    TIERS,
    CvReport,
    FeatureMatrix,
    GradingModel,
    IcpGrade,
    build_feature_matrix,
    classification_metrics,
    cross_validate,
    fit_model,
    icp_grade,
    lasso_fit,
    lasso_select,
    predict,
    train,
    train_threshold_baseline,
)
from .phantom import PhantomSpec, PhantomTruth, QualitySchedule, generate_frame, generate_video
