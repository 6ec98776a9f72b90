//! Dataset ingestion, model/report persistence, and deterministic output
//! formatting.
//!
//! Numeric CSV cells are written with 17 significant digits so every double
//! survives a write/read round trip bit for bit. All writes go through a
//! single buffered writer per file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::brainage::{CohortTable, DeltaAgeReport, RegionalResidualReport, Sex, Subject};
use crate::covariance::{CovarianceModel, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{self, ModelMeta, VnnArchitecture, VnnParameters};
use crate::training::TrainedEnsemble;
use crate::transfer::SweepReport;

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "COVNN_OUT_DIR";

/// Resolve the output directory: explicit flag, then the environment
/// override, then `./out`.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(OUT_DIR_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("out")
}

/// 17-significant-digit scientific form; round-trip exact for f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_cell<T: std::str::FromStr>(
    value: &str,
    line: u64,
    column: &str,
) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| Error::Csv {
        line,
        message: format!("cannot parse `{value}` in column `{column}`"),
    })
}

// ---------------------------------------------------------------------------
// features.csv
// ---------------------------------------------------------------------------

/// Write `subject_id,<region_1>,…,<region_m>` rows.
pub fn write_features_csv(path: &Path, ids: &[String], features: &FeatureMatrix) -> Result<()> {
    if ids.len() != features.n_subjects() {
        return Err(Error::Shape {
            expected: format!("{} subject ids", features.n_subjects()),
            found: format!("{}", ids.len()),
        });
    }
    let mut out = String::new();
    out.push_str("subject_id");
    for name in features.feature_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for j in 0..features.n_features() {
            out.push(',');
            out.push_str(&fmt_f64(features.values()[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a features file; returns subject ids and the feature matrix.
pub fn ingest_features(path: &Path) -> Result<(Vec<String>, FeatureMatrix)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv { line: 0, message: format!("{path:?}: {e}") })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv { line: 1, message: e.to_string() })?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("subject_id") {
        return Err(Error::MissingColumn("subject_id".into(), format!("{path:?}")));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Csv { line: 1, message: "no feature columns".into() });
    }
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != names.len() + 1 {
            return Err(Error::Csv {
                line,
                message: format!("expected {} cells, found {}", names.len() + 1, record.len()),
            });
        }
        let id = record.get(0).unwrap().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateSubject(id));
        }
        let mut row = Vec::with_capacity(names.len());
        for (j, cell) in record.iter().skip(1).enumerate() {
            row.push(parse_cell::<f64>(cell, line, &names[j])?);
        }
        ids.push(id);
        rows.push(row);
    }
    if ids.is_empty() {
        return Err(Error::EmptyInput(format!("{path:?}")));
    }
    let mat = DMatrix::from_fn(ids.len(), names.len(), |i, j| rows[i][j]);
    Ok((ids, FeatureMatrix::new(mat, names)?))
}

// ---------------------------------------------------------------------------
// phenotype.csv
// ---------------------------------------------------------------------------

/// One phenotype row (pre-join).
#[derive(Debug, Clone)]
pub struct PhenotypeRow {
    pub subject_id: String,
    pub age: f64,
    pub sex: Sex,
    pub diagnosis: crate::brainage::Diagnosis,
    pub severity: Option<f64>,
}

/// Write `subject_id,age,sex,diagnosis,severity` rows (severity may be
/// empty).
pub fn write_phenotype_csv(path: &Path, cohort: &CohortTable) -> Result<()> {
    let mut out = String::from("subject_id,age,sex,diagnosis,severity\n");
    for s in cohort.subjects() {
        out.push_str(&s.subject_id);
        out.push(',');
        out.push_str(&fmt_f64(s.age));
        out.push(',');
        out.push_str(&s.sex.to_string());
        out.push(',');
        out.push_str(&s.diagnosis.to_string());
        out.push(',');
        if let Some(sev) = s.severity {
            out.push_str(&fmt_f64(sev));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a phenotype file.
pub fn ingest_phenotype(path: &Path) -> Result<Vec<PhenotypeRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv { line: 0, message: format!("{path:?}: {e}") })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv { line: 1, message: e.to_string() })?
        .clone();
    for required in ["subject_id", "age", "sex", "diagnosis", "severity"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::MissingColumn(required.into(), format!("{path:?}")));
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (c_id, c_age, c_sex, c_dx, c_sev) =
        (col("subject_id"), col("age"), col("sex"), col("diagnosis"), col("severity"));
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record.get(c_id).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Csv { line, message: "empty subject_id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateSubject(id));
        }
        let severity_cell = record.get(c_sev).unwrap_or("");
        let severity = if severity_cell.trim().is_empty() {
            None
        } else {
            Some(parse_cell::<f64>(severity_cell, line, "severity")?)
        };
        rows.push(PhenotypeRow {
            subject_id: id,
            age: parse_cell(record.get(c_age).unwrap_or(""), line, "age")?,
            sex: parse_cell(record.get(c_sex).unwrap_or(""), line, "sex")?,
            diagnosis: parse_cell(record.get(c_dx).unwrap_or(""), line, "diagnosis")?,
            severity,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{path:?}")));
    }
    Ok(rows)
}

/// Join features and phenotype on `subject_id`; unmatched ids on either
/// side are an error naming the offenders.
pub fn load_cohort(features_path: &Path, phenotype_path: &Path) -> Result<CohortTable> {
    let (ids, features) = ingest_features(features_path)?;
    let phenotype = ingest_phenotype(phenotype_path)?;
    let by_id: std::collections::HashMap<&str, &PhenotypeRow> =
        phenotype.iter().map(|r| (r.subject_id.as_str(), r)).collect();
    let mut missing: Vec<String> = Vec::new();
    let mut subjects = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        match by_id.get(id.as_str()) {
            Some(row) => subjects.push(Subject {
                subject_id: id.clone(),
                features: (0..features.n_features())
                    .map(|j| features.values()[(i, j)])
                    .collect(),
                age: row.age,
                sex: row.sex,
                diagnosis: row.diagnosis,
                severity: row.severity,
            }),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidData(format!(
            "{} subject(s) missing from phenotype: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let feature_ids: std::collections::HashSet<&str> =
        ids.iter().map(String::as_str).collect();
    let orphans: Vec<&str> = phenotype
        .iter()
        .map(|r| r.subject_id.as_str())
        .filter(|id| !feature_ids.contains(id))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::InvalidData(format!(
            "{} phenotype row(s) without features: {}",
            orphans.len(),
            orphans.join(", ")
        )));
    }
    CohortTable::new(subjects, features.feature_names().to_vec())
}

/// Write both cohort files into a directory.
pub fn write_cohort(dir: &Path, cohort: &CohortTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    let ids: Vec<String> = cohort.subjects().iter().map(|s| s.subject_id.clone()).collect();
    write_features_csv(&dir.join("features.csv"), &ids, &cohort.features_matrix())?;
    write_phenotype_csv(&dir.join("phenotype.csv"), cohort)
}

// ---------------------------------------------------------------------------
// Model and covariance persistence
// ---------------------------------------------------------------------------

pub fn save_model(
    path: &Path,
    arch: &VnnArchitecture,
    params: &VnnParameters,
    meta: &ModelMeta,
) -> Result<()> {
    fs::write(path, model::serialize_model(arch, params, meta)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(VnnArchitecture, VnnParameters, ModelMeta)> {
    let text = fs::read_to_string(path)?;
    model::deserialize_model(&text)
}

#[derive(Serialize, serde::Deserialize)]
struct CovarianceDocument {
    format_version: u32,
    digest: String,
    matrix: Vec<Vec<f64>>,
}

/// Persist a covariance so later runs can reuse exactly the matrix a model
/// was trained on.
pub fn save_covariance(path: &Path, cov: &CovarianceModel) -> Result<()> {
    let m = cov.dim();
    let matrix: Vec<Vec<f64>> =
        (0..m).map(|i| (0..m).map(|j| cov.matrix()[(i, j)]).collect()).collect();
    let doc = CovarianceDocument { format_version: 1, digest: cov.digest(), matrix };
    fs::write(path, serde_json::to_string(&doc).expect("covariance serializes"))?;
    Ok(())
}

pub fn load_covariance(path: &Path) -> Result<CovarianceModel> {
    let text = fs::read_to_string(path)?;
    let doc: CovarianceDocument =
        serde_json::from_str(&text).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    if doc.format_version > 1 {
        return Err(Error::VersionMismatch { found: doc.format_version, supported: 1 });
    }
    let m = doc.matrix.len();
    if doc.matrix.iter().any(|row| row.len() != m) {
        return Err(Error::MalformedDocument("covariance matrix is not square".into()));
    }
    let mat = DMatrix::from_fn(m, m, |i, j| doc.matrix[i][j]);
    // The writer stores spectrum-normalized matrices; re-flag without
    // rescaling so the bytes (and digest) survive the round trip.
    let cov = CovarianceModel::from_matrix(mat)?.into_normalized()?;
    if cov.digest() != doc.digest {
        return Err(Error::ChecksumMismatch);
    }
    Ok(cov)
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

/// Per-member training metrics table.
pub fn write_member_metrics_csv(
    path: &Path,
    ensemble: &TrainedEnsemble,
    full_mae: &[f64],
) -> Result<()> {
    let mut out = String::from(
        "member_id,seed,epochs_run,best_epoch,train_mae,val_mse,test_mae,test_pearson,full_mae\n",
    );
    for (i, member) in ensemble.members.iter().enumerate() {
        let m = &member.metrics;
        out.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{}\n",
            member.permutation_seed,
            m.epochs_run,
            m.best_epoch,
            fmt_f64(m.train_mae),
            fmt_f64(m.val_mse),
            fmt_f64(m.test_mae),
            fmt_f64(m.test_pearson),
            fmt_f64(full_mae.get(i).copied().unwrap_or(f64::NAN)),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Sweep statistics table: axis, median, q25, q75.
pub fn write_sweep_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut out = format!("{},median,q25,q75\n", report.axis_label);
    for p in &report.points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(p.axis),
            fmt_f64(p.median),
            fmt_f64(p.q25),
            fmt_f64(p.q75)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-region scan table.
pub fn write_regions_csv(path: &Path, report: &RegionalResidualReport) -> Result<()> {
    let mut out = String::from(
        "region,f_statistic,anova_p,corrected_p,ancova_p,elevated_in_d,significant,hc_mean,hc_sd,d_mean,d_sd\n",
    );
    for r in &report.regions {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.region,
            fmt_f64(r.f_statistic),
            fmt_f64(r.anova_p),
            fmt_f64(r.corrected_p),
            fmt_f64(r.ancova_p),
            r.elevated_in_d,
            r.significant,
            fmt_f64(r.hc_mean),
            fmt_f64(r.hc_sd),
            fmt_f64(r.d_mean),
            fmt_f64(r.d_sd),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Robustness counts per region.
pub fn write_robustness_csv(path: &Path, regions: &[String], counts: &[usize]) -> Result<()> {
    let mut out = String::from("region,significant_count\n");
    for (name, count) in regions.iter().zip(counts) {
        out.push_str(&format!("{name},{count}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-subject delta-age table.
pub fn write_delta_age_csv(path: &Path, report: &DeltaAgeReport) -> Result<()> {
    let mut out = String::from(
        "subject_id,diagnosis,age,prediction,corrected_prediction,delta_age,severity\n",
    );
    for s in &report.subjects {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.subject_id,
            s.diagnosis,
            fmt_f64(s.age),
            fmt_f64(s.prediction),
            fmt_f64(s.corrected_prediction),
            fmt_f64(s.delta_age),
            s.severity.map(fmt_f64).unwrap_or_default(),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Predictions table.
pub fn write_predictions_csv(path: &Path, ids: &[String], predictions: &[f64]) -> Result<()> {
    let mut out = String::from("subject_id,prediction\n");
    for (id, p) in ids.iter().zip(predictions) {
        out.push_str(&format!("{id},{}\n", fmt_f64(*p)));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Any serializable summary as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brainage::synthetic::{planted_cohort, PlantedCohortConfig};
    use proptest::prelude::*;

    fn small_cohort() -> CohortTable {
        planted_cohort(&PlantedCohortConfig {
            n_hc: 6,
            n_d: 3,
            n_features: 4,
            planted_regions: 2,
            ..PlantedCohortConfig::default()
        })
        .unwrap()
        .cohort
    }

    #[test]
    fn cohort_round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = small_cohort();
        write_cohort(dir.path(), &cohort).unwrap();
        let back = load_cohort(&dir.path().join("features.csv"), &dir.path().join("phenotype.csv"))
            .unwrap();
        assert_eq!(back.n_subjects(), cohort.n_subjects());
        for (a, b) in cohort.subjects().iter().zip(back.subjects()) {
            assert_eq!(a.subject_id, b.subject_id);
            assert_eq!(a.features, b.features);
            assert_eq!(a.age, b.age);
            assert_eq!(a.sex, b.sex);
            assert_eq!(a.diagnosis, b.diagnosis);
            assert_eq!(a.severity, b.severity);
        }
        // Byte-identical rewrite.
        let first = std::fs::read(dir.path().join("features.csv")).unwrap();
        write_cohort(dir.path(), &back).unwrap();
        let second = std::fs::read(dir.path().join("features.csv")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn duplicate_subject_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        std::fs::write(&path, "subject_id,r1\nsub1,1.0\nsub1,2.0\n").unwrap();
        match ingest_features(&path) {
            Err(Error::DuplicateSubject(id)) => assert_eq!(id, "sub1"),
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        std::fs::write(&path, "subject_id,r1\nsub1,1.0\nsub2,oops\n").unwrap();
        match ingest_features(&path) {
            Err(Error::Csv { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("r1"), "{message}");
            }
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn missing_phenotype_column_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phenotype.csv");
        std::fs::write(&path, "subject_id,age,diagnosis,severity\nsub1,70,HC,\n").unwrap();
        match ingest_phenotype(&path) {
            Err(Error::MissingColumn(col, _)) => assert_eq!(col, "sex"),
            other => panic!("expected missing-column error, got {other:?}"),
        }
    }

    #[test]
    fn unmatched_ids_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("features.csv");
        let p = dir.path().join("phenotype.csv");
        std::fs::write(&f, "subject_id,r1\nsub1,1.0\nsub2,2.0\n").unwrap();
        std::fs::write(&p, "subject_id,age,sex,diagnosis,severity\nsub1,70,F,HC,\n").unwrap();
        match load_cohort(&f, &p) {
            Err(Error::InvalidData(msg)) => assert!(msg.contains("sub2"), "{msg}"),
            other => panic!("expected join error, got {other:?}"),
        }
    }

    #[test]
    fn covariance_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = small_cohort();
        let cov = cohort.pooled_covariance(&[0, 1, 2, 3, 4, 5]).unwrap();
        let path = dir.path().join("covariance.json");
        save_covariance(&path, &cov).unwrap();
        let back = load_covariance(&path).unwrap();
        assert_eq!(back.digest(), cov.digest());
        assert!(back.is_normalized());
    }

    proptest! {
        #[test]
        fn formatted_doubles_round_trip(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
