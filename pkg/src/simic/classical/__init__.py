from simic.classical.measure import (
    MeasurementError,
    TipMeasurement,
    baseline_report,
    fit_circle,
    fit_tangent_circle,
    measure_image,
    measure_tip,
    segment,
    trace_contour,
)
