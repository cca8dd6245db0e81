"""Reliability studies and end-to-end case-study drivers.

Every study is a pure function of (config, master seed): generated data,
splits, model seeds and report contents all derive from the master seed,
so re-running writes byte-identical JSON/CSV artifacts.

Report files are plain data (JSON summaries, CSV tables, gnuplot-style
grid files for surfaces and heatmaps); nothing here depends on a plotting
library.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .core import Mode, Sample
from .divergence import (
    adulteration_curve,
    band_feature_extractor,
    fit_linear,
    lda_feature_extractor,
    median_curve,
)
from .errors import ValidationError
from .features import (
    DataMatrix,
    apply_normalizer,
    band_normalize,
    build_matrix,
    lda_fit,
    merge,
    pca_fit,
    project,
    spectral_signature,
)
from .models import (
    DecisionTree,
    Granularity,
    KNearestNeighbors,
    LinearSVM,
    LogisticRegressionGD,
    RandomForest,
    evaluate,
    split_matrix,
    stratified_split,
)
from .preprocess import Corrections, PipelineOptions, fit_corrections, preprocess_pipeline
from .studies import (
    CaseStudyConfig,
    StudyKind,
    generate_case_study,
    render_white_reference,
)
from .synth import stream


# --------------------------------------------------------------------------
# Spatial consistency (intensity surface + spectral-distance heatmap)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialVariant:
    """One correction variant of the white-reference study."""

    surfaces: Mapping[int, np.ndarray]
    heatmap: np.ndarray
    center: tuple[int, int]
    mean_distance: float
    smoothed_intensity: np.ndarray


@dataclass(frozen=True)
class SpatialConsistencyReport:
    before: SpatialVariant
    after: SpatialVariant
    recommended_region: np.ndarray

    @property
    def region_size(self) -> int:
        return int(self.recommended_region.sum())


def _spatial_variant(sample: Sample) -> SpatialVariant:
    cube = sample.cube
    stack = cube.stack()  # (B, h, w)
    total = stack.sum(axis=0)
    smoothed = uniform_filter(total, size=11, mode="nearest")
    flat_index = int(np.argmax(smoothed))
    cy, cx = np.unravel_index(flat_index, smoothed.shape)
    center_vec = stack[:, cy, cx]
    heatmap = np.sqrt(((stack - center_vec[:, None, None]) ** 2).sum(axis=0))
    return SpatialVariant(
        surfaces={wl: cube.frame(wl).values for wl in cube.band_set},
        heatmap=heatmap,
        center=(int(cx), int(cy)),
        mean_distance=float(heatmap.mean()),
        smoothed_intensity=smoothed,
    )


def spatial_consistency_report(
    white_sample: Sample, corrections: Corrections | None = None
) -> SpatialConsistencyReport:
    """Before/after-correction intensity surfaces and spectral-distance heatmap.

    The heatmap is the Euclidean distance of each pixel's spectral vector
    from the vector at the peak of the smoothed total intensity.  The
    recommended acquisition region is the intersection of top-quartile
    intensity and bottom-quartile distance of the corrected variant.
    """
    corrections = corrections or fit_corrections(white_sample)
    plain = PipelineOptions(spatial=False, spectral=False, bilateral=None)
    full = PipelineOptions(spectral=True, bilateral=None)
    before = _spatial_variant(preprocess_pipeline(white_sample, None, plain))
    after = _spatial_variant(preprocess_pipeline(white_sample, corrections, full))

    intensity_cut = np.quantile(after.smoothed_intensity, 0.75)
    distance_cut = np.quantile(after.heatmap, 0.25)
    region = (after.smoothed_intensity >= intensity_cut) & (after.heatmap <= distance_cut)
    return SpatialConsistencyReport(before=before, after=after, recommended_region=region)


# --------------------------------------------------------------------------
# Repeatability (temporal drift)
# --------------------------------------------------------------------------


def repeatability_report(series: Sequence[Sample]) -> dict:
    """Per-band maximum percent deviation of mean intensity from the series mean."""
    series = list(series)
    if len(series) < 2:
        raise ValidationError("repeatability needs at least 2 captures")
    band_set = series[0].cube.band_set
    deviations = {}
    for wl in band_set:
        means = np.array([float(s.cube.frame(wl).values.mean()) for s in series])
        center = means.mean()
        if center == 0 or np.all(means == means[0]):
            # identical captures deviate by exactly zero; averaging identical
            # floats can otherwise leave a one-ulp residue
            deviations[wl] = 0.0
        else:
            deviations[wl] = float(np.abs(means - center).max() / center * 100.0)
    return {
        "per_band_deviation_pct": deviations,
        "max_deviation_pct": max(deviations.values()),
        "n_captures": len(series),
    }


# --------------------------------------------------------------------------
# Case-study drivers
# --------------------------------------------------------------------------

TRAIN_FRACTION = 0.75


def _seed(*parts) -> int:
    return int(stream(*parts).integers(0, 2**63 - 1))


def study_classifiers(master_seed: int, kinds: Sequence[str] | None = None) -> dict:
    """Fresh classifier instances with study-scale training budgets.

    Epoch counts and forest size are smaller than the library defaults;
    on normalized low-dimensional LDA/PCA features they converge well
    before these caps and keep a full study inside its time budget.
    """
    all_models = {
        "decision_tree": lambda: DecisionTree(),
        "knn": lambda: KNearestNeighbors(k=5),
        "logistic": lambda: LogisticRegressionGD(lr=5.0, lr_decay=1e-3, epochs=800),
        "random_forest": lambda: RandomForest(n_trees=30, seed=_seed(master_seed, "forest")),
        "svm": lambda: LinearSVM(c=10.0, lr=50.0, lr_decay=5e-2, epochs=1200),
    }
    if kinds is None:
        return all_models
    return {k: all_models[k] for k in kinds}


def _standardize(train: DataMatrix, others: list[DataMatrix], eigenvalues: np.ndarray):
    """Normalize projected components, weighted by their discriminability.

    Each component is standardized on train statistics and then scaled by
    sqrt(eigenvalue / leading eigenvalue).  Plain per-component
    standardization would inflate near-zero-eigenvalue directions (which
    mostly encode per-replicate capture drift) to unit variance, letting
    distance- and margin-based classifiers memorize replicates.
    """
    mean = train.values.mean(axis=0)
    sd = train.values.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    top = max(float(eigenvalues[0]), 1e-12)
    weight = np.sqrt(np.maximum(eigenvalues, 0.0) / top)
    out = [train.with_values((train.values - mean) / sd * weight)]
    out.extend(m.with_values((m.values - mean) / sd * weight) for m in others)
    return out


def run_pipeline_on_matrix(
    matrix: DataMatrix,
    classifiers: Mapping[str, callable],
    split_seed: int,
    projection: str = "LDA",
    variance_target: float = 0.99,
) -> dict:
    """Split, normalize, project, train and evaluate one matrix.

    Returns accuracies plus the fitted projection and the projected test
    matrix (for loadings and scatter reports).
    """
    split = stratified_split(matrix, TRAIN_FRACTION, seed=split_seed, granularity=Granularity.SAMPLE)
    train, test = split_matrix(matrix, split)
    normalizer, train_n = band_normalize(train)
    test_n = apply_normalizer(normalizer, test)

    if projection == "LDA":
        proj = lda_fit(train_n)
    elif projection == "PCA":
        proj = pca_fit(train_n, variance_target=variance_target)
    else:
        raise ValidationError(f"unknown projection {projection!r}")
    train_p = project(proj, train_n)
    test_p = project(proj, test_n)
    train_p, test_p = _standardize(train_p, [test_p], proj.eigenvalues)

    results = {}
    for name, make in classifiers.items():
        model = make().fit(train_p.values, train_p.label_keys())
        cm = evaluate(model, test_p)
        results[name] = {
            "accuracy": cm.accuracy,
            "per_class_recall": {str(k): v for k, v in cm.per_class_recall().items()},
        }
    return {
        "split": split,
        "projection": proj,
        "test_projected": test_p,
        "results": results,
    }


def _accuracy_table(results: dict) -> dict:
    return {name: round(info["accuracy"], 6) for name, info in results.items()}


def _preprocess_all(
    samples: Sequence[Sample], corrections: Corrections | None, options: PipelineOptions
) -> list[Sample]:
    return [preprocess_pipeline(s, corrections, options) for s in samples]


def _study_options(corrected: bool) -> PipelineOptions:
    if corrected:
        return PipelineOptions()  # dark + spatial + mode-default spectral + bilateral
    return PipelineOptions(spatial=False, spectral=False)


def run_turmeric_study(
    config: CaseStudyConfig | None = None,
    master_seed: int = 0,
    include_uncorrected: bool = True,
    classifier_kinds: Sequence[str] | None = None,
) -> dict:
    """Powder adulteration study: per-mode and merged accuracies (both
    correction variants), merged-LDA loadings and scatter data."""
    config = config or CaseStudyConfig.turmeric()
    data = generate_case_study(StudyKind.TURMERIC, config, master_seed)
    classifiers = study_classifiers(master_seed, classifier_kinds)
    corrections = {
        mode: fit_corrections(render_white_reference(config, mode, master_seed))
        for mode in (Mode.REFLECTANCE, Mode.TRANSMITTANCE)
    }
    split_seed = _seed(master_seed, "turmeric-split")

    bundle: dict = {
        "kind": "turmeric",
        "master_seed": master_seed,
        "counts": {
            "reflectance": len(data.reflectance),
            "transmittance": len(data.transmittance),
        },
        "accuracy": {},
    }
    variants = ("corrected", "uncorrected") if include_uncorrected else ("corrected",)
    for variant in variants:
        options = _study_options(variant == "corrected")
        refl = _preprocess_all(
            data.reflectance, corrections[Mode.REFLECTANCE] if variant == "corrected" else None, options
        )
        trans = _preprocess_all(
            data.transmittance, corrections[Mode.TRANSMITTANCE] if variant == "corrected" else None, options
        )
        r_matrix = build_matrix(refl, Mode.REFLECTANCE)
        t_matrix = build_matrix(trans, Mode.TRANSMITTANCE)
        m_matrix = merge(r_matrix, t_matrix)

        per_mode = {}
        for name, matrix in (("reflectance", r_matrix), ("transmittance", t_matrix), ("merged", m_matrix)):
            run = run_pipeline_on_matrix(matrix, classifiers, split_seed)
            per_mode[name] = _accuracy_table(run["results"])
            if variant == "corrected" and name == "merged":
                proj = run["projection"]
                bundle["merged_lda_loadings"] = {
                    col: round(float(w), 6)
                    for col, w in zip(proj.col_labels, proj.loadings())
                }
                test_p = run["test_projected"]
                bundle["merged_lda_scatter"] = [
                    [round(float(row[0]), 6), round(float(row[1]), 6), meta[1].key]
                    for row, meta in zip(test_p.values, test_p.row_meta)
                ]
        bundle["accuracy"][variant] = per_mode
        if variant == "corrected":
            bundle["signatures"] = _signature_summary(t_matrix)

    bundle["best"] = {
        variant: {mode: max(table.values()) for mode, table in per_mode_tables.items()}
        for variant, per_mode_tables in bundle["accuracy"].items()
    }
    return bundle


def run_coconut_oil_study(
    config: CaseStudyConfig | None = None,
    master_seed: int = 0,
    classifier_kinds: Sequence[str] = ("logistic", "knn", "svm", "decision_tree"),
    kl_band: int | None = 621,
) -> dict:
    """Liquid adulteration study: classifier table plus the KL functional map.

    The divergence curve is built on a single mid-contrast band (default
    621 nm) rather than the leading LDA component: on this fixture the
    discriminant axis separates levels so completely that their
    distributions share no support with the reference, and the divergence
    of disjoint smoothed histograms collapses to one constant.  A band
    with moderate absorbance contrast keeps distributions overlapping, so
    the divergence grows smoothly with adulteration.
    """
    config = config or CaseStudyConfig.coconut_oil()
    data = generate_case_study(StudyKind.COCONUT_OIL, config, master_seed)
    corrections = fit_corrections(render_white_reference(config, Mode.TRANSMITTANCE, master_seed))
    # transparent liquid: spectral step stays off (mode default)
    samples = _preprocess_all(data.transmittance, corrections, _study_options(True))

    matrix = build_matrix(samples, Mode.TRANSMITTANCE)
    classifiers = study_classifiers(master_seed, classifier_kinds)
    run = run_pipeline_on_matrix(matrix, classifiers, _seed(master_seed, "oil-split"))

    if kl_band is not None:
        extractor = band_feature_extractor(kl_band)
    else:
        extractor = lda_feature_extractor(samples)
    points = adulteration_curve(samples, extractor)
    medians = median_curve(points)
    return {
        "kind": "coconut_oil",
        "master_seed": master_seed,
        "counts": {"transmittance": len(samples)},
        "accuracy": _accuracy_table(run["results"]),
        "kl_points": [[lv, round(kl, 6)] for lv, kl in points],
        "kl_medians": [[lv, round(kl, 6)] for lv, kl in medians],
        "functional_map": fit_linear(points).to_json(),
        "functional_map_medians": fit_linear(medians).to_json(),
        "signatures": _signature_summary(matrix),
    }


def run_color_chart_study(
    config: CaseStudyConfig | None = None,
    master_seed: int = 0,
    classifier_kinds: Sequence[str] | None = None,
) -> dict:
    """24-color palette study: the PCA-vs-LDA accuracy table."""
    config = config or CaseStudyConfig.color_chart()
    data = generate_case_study(StudyKind.COLOR_CHART, config, master_seed)
    corrections = fit_corrections(render_white_reference(config, Mode.REFLECTANCE, master_seed))
    samples = _preprocess_all(data.reflectance, corrections, _study_options(True))
    matrix = build_matrix(samples, Mode.REFLECTANCE)
    classifiers = study_classifiers(master_seed, classifier_kinds)
    split_seed = _seed(master_seed, "chart-split")

    accuracy = {}
    scatter = None
    for projection in ("PCA", "LDA"):
        run = run_pipeline_on_matrix(matrix, classifiers, split_seed, projection=projection)
        accuracy[projection] = _accuracy_table(run["results"])
        if projection == "LDA":
            test_p = run["test_projected"]
            scatter = [
                [round(float(row[0]), 6), round(float(row[1]), 6), meta[1].key]
                for row, meta in zip(test_p.values, test_p.row_meta)
            ]
    return {
        "kind": "color_chart",
        "master_seed": master_seed,
        "counts": {"reflectance": len(samples)},
        "accuracy": accuracy,
        "lda_scatter": scatter,
    }


def _signature_summary(matrix: DataMatrix) -> dict:
    table = spectral_signature(matrix)
    return {
        "bands": list(table.bands),
        "levels": list(table.labels),
        "means": [[round(float(v), 6) for v in row] for row in table.means],
        "sds": [[round(float(v), 6) for v in row] for row in table.sds],
    }


def run_case_study(
    kind: StudyKind, config: CaseStudyConfig | None = None, master_seed: int = 0, **kwargs
) -> dict:
    if kind is StudyKind.TURMERIC:
        return run_turmeric_study(config, master_seed, **kwargs)
    if kind is StudyKind.COCONUT_OIL:
        return run_coconut_oil_study(config, master_seed, **kwargs)
    return run_color_chart_study(config, master_seed, **kwargs)


# --------------------------------------------------------------------------
# Report writers (deterministic bytes)
# --------------------------------------------------------------------------


def write_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_grid(values: np.ndarray, path) -> None:
    """Gnuplot-style grid data: ``x y value`` rows with blank lines per row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for y, row in enumerate(np.asarray(values)):
        for x, v in enumerate(row):
            lines.append(f"{x} {y} {float(v):.9g}")
        lines.append("")
    path.write_text("\n".join(lines) + "\n")


def write_kl_curve_csv(points: Sequence[Sequence[float]], path) -> None:
    """Curve export: ``level_pct,replicate,kl`` with replicate per level."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    counters: dict[float, int] = {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level_pct", "replicate", "kl"])
        for level, kl in points:
            rep = counters.get(level, 0)
            counters[level] = rep + 1
            writer.writerow([level, rep, repr(float(kl))])


def write_accuracy_csv(tables: Mapping[str, Mapping[str, float]], path) -> None:
    """Accuracy CSV: one row per classifier, one column per table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(tables)
    names = sorted({name for table in tables.values() for name in table})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["classifier", *columns])
        for name in names:
            writer.writerow([name, *(tables[c].get(name, "") for c in columns)])


def write_study_bundle(bundle: dict, out_dir) -> None:
    """Write the JSON summary plus the flat CSV/plot artifacts of a study."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(bundle, out / "report.json")
    kind = bundle.get("kind")
    if kind == "turmeric":
        for variant, tables in bundle["accuracy"].items():
            write_accuracy_csv(tables, out / f"accuracy_{variant}.csv")
        if "merged_lda_scatter" in bundle:
            rows = ["ld1 ld2 label"] + [
                f"{a} {b} {label}" for a, b, label in bundle["merged_lda_scatter"]
            ]
            (out / "merged_lda_scatter.dat").write_text("\n".join(rows) + "\n")
    elif kind == "coconut_oil":
        write_accuracy_csv({"transmittance": bundle["accuracy"]}, out / "accuracy.csv")
        write_kl_curve_csv(bundle["kl_points"], out / "kl_curve.csv")
        write_json(bundle["functional_map"], out / "functional_map.json")
    elif kind == "color_chart":
        write_accuracy_csv(bundle["accuracy"], out / "accuracy.csv")


def write_consistency_report(report: SpatialConsistencyReport, out_dir, band: int | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "center_before": list(report.before.center),
        "center_after": list(report.after.center),
        "mean_distance_before": report.before.mean_distance,
        "mean_distance_after": report.after.mean_distance,
        "recommended_region_pixels": report.region_size,
    }
    write_json(summary, out / "consistency.json")
    bands = list(report.after.surfaces)
    shown = band if band is not None else bands[len(bands) // 2]
    write_grid(report.before.surfaces[shown], out / f"surface_{shown}_before.dat")
    write_grid(report.after.surfaces[shown], out / f"surface_{shown}_after.dat")
    write_grid(report.before.heatmap, out / "heatmap_before.dat")
    write_grid(report.after.heatmap, out / "heatmap_after.dat")
    write_grid(report.recommended_region.astype(float), out / "recommended_region.dat")
