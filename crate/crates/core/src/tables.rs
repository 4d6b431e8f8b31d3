//! CSV schemas for the derived artifacts.
//!
//! Every writer accepts an optional provenance stamp that lands as a `#`
//! comment on the first line; the readers here (and in `skeleton`) are
//! configured to skip such lines, so stamped files round-trip. Missing
//! values (invalid angles, undefined rates) serialize as empty fields.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use crate::aggregation::{BinaryAggregate, OrdinalAggregate, RaterReportRow};
use crate::calibration::RocPoint;
use crate::error::{Error, Result};
use crate::geometry::{AngleHistogram, AngleProfile, SymmetryLabel};
use crate::skeleton::{csv_reader, header_columns, ItemKey, LimbPair};
use crate::synth::TruthCell;

/// Provenance line prepended to artifacts: config hash plus master seed.
#[derive(Clone, Debug)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn comment_line(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

fn stamped_writer(path: &Path, stamp: Option<&Stamp>) -> Result<csv::Writer<std::fs::File>> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(stamp) = stamp {
        writeln!(file, "{}", stamp.comment_line()).map_err(|e| Error::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(file))
}

fn finish(path: &Path, wtr: csv::Writer<std::fs::File>) -> Result<()> {
    wtr.into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

fn write_failed(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips; keeps reruns byte-identical.
    format!("{v}")
}

/// angles.csv: image_id,limb,angle_deg,valid. Invalid cells keep an empty
/// angle and valid=0.
pub fn write_angles(
    path: impl AsRef<Path>,
    profiles: &[AngleProfile],
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record(["image_id", "limb", "angle_deg", "valid"])
        .map_err(|e| write_failed(path, e))?;
    for profile in profiles {
        for limb in LimbPair::ALL {
            let angle = profile.angle(limb);
            wtr.write_record([
                profile.image_id.as_str(),
                limb.as_str(),
                &angle.map(fmt_f64).unwrap_or_default(),
                if angle.is_some() { "1" } else { "0" },
            ])
            .map_err(|e| write_failed(path, e))?;
        }
    }
    finish(path, wtr)
}

pub fn read_angles(path: impl AsRef<Path>) -> Result<Vec<AngleProfile>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, "header", e.to_string()))?.clone();
    let cols = header_columns(path, &headers, &["image_id", "limb", "angle_deg", "valid"])?;
    let mut by_image: BTreeMap<String, [Option<f64>; 4]> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::parse(path, format!("line {line}"), e.to_string()))?;
        let image_id = record[cols[0]].to_string();
        let limb: LimbPair = record[cols[1]]
            .parse()
            .map_err(|e: String| Error::parse(path, format!("line {line}"), e))?;
        let valid = &record[cols[3]] == "1";
        let angle = if valid {
            let raw = &record[cols[2]];
            let v: f64 = raw.parse().map_err(|_| {
                Error::parse(path, format!("line {line}"), format!("bad angle `{raw}`"))
            })?;
            Some(v)
        } else {
            None
        };
        let slot = &mut by_image.entry(image_id).or_insert([None; 4])[limb.index()];
        if slot.is_some() && angle.is_some() {
            return Err(Error::parse(path, format!("line {line}"), "duplicate cell".to_string()));
        }
        if angle.is_some() {
            *slot = angle;
        }
    }
    Ok(by_image.into_iter().map(|(id, angles)| AngleProfile::new(id, angles)).collect())
}

/// angles.csv plus a trailing symmetry column thresholded at
/// `threshold_deg`: image_id,limb,angle_deg,valid,symmetry.
pub fn write_angles_thresholded(
    path: impl AsRef<Path>,
    profiles: &[AngleProfile],
    threshold_deg: f64,
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record(["image_id", "limb", "angle_deg", "valid", "symmetry"])
        .map_err(|e| write_failed(path, e))?;
    for profile in profiles {
        for limb in LimbPair::ALL {
            let angle = profile.angle(limb);
            let label = angle.map(|a| SymmetryLabel::from_angle(a, threshold_deg));
            wtr.write_record([
                profile.image_id.as_str(),
                limb.as_str(),
                &angle.map(fmt_f64).unwrap_or_default(),
                if angle.is_some() { "1" } else { "0" },
                &label.map(|l| l.as_u8().to_string()).unwrap_or_default(),
            ])
            .map_err(|e| write_failed(path, e))?;
        }
    }
    finish(path, wtr)
}

/// assessments.csv: image_id,limb,angle_deg,symmetry. The raw angle rides
/// along as the continuous measure; symmetry is empty when undefined.
pub fn write_assessments(
    path: impl AsRef<Path>,
    profiles: &[AngleProfile],
    threshold_deg: f64,
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record(["image_id", "limb", "angle_deg", "symmetry"])
        .map_err(|e| write_failed(path, e))?;
    for profile in profiles {
        for limb in LimbPair::ALL {
            let angle = profile.angle(limb);
            let label = angle.map(|a| SymmetryLabel::from_angle(a, threshold_deg));
            wtr.write_record([
                profile.image_id.as_str(),
                limb.as_str(),
                &angle.map(fmt_f64).unwrap_or_default(),
                &label.map(|l| l.as_u8().to_string()).unwrap_or_default(),
            ])
            .map_err(|e| write_failed(path, e))?;
        }
    }
    finish(path, wtr)
}

/// One assessments.csv row: angle and symmetry are both absent for cells
/// whose angle was undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct AssessmentRow {
    pub key: ItemKey,
    pub angle_deg: Option<f64>,
    pub symmetry: Option<u8>,
}

pub fn read_assessments(path: impl AsRef<Path>) -> Result<Vec<AssessmentRow>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, "header", e.to_string()))?.clone();
    let cols = header_columns(path, &headers, &["image_id", "limb", "angle_deg", "symmetry"])?;
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::parse(path, format!("line {line}"), e.to_string()))?;
        let limb: LimbPair = record[cols[1]]
            .parse()
            .map_err(|e: String| Error::parse(path, format!("line {line}"), e))?;
        let angle_deg = match &record[cols[2]] {
            "" => None,
            raw => Some(raw.parse::<f64>().map_err(|_| {
                Error::parse(path, format!("line {line}"), format!("bad angle `{raw}`"))
            })?),
        };
        let symmetry = match &record[cols[3]] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            raw => {
                return Err(Error::parse(
                    path,
                    format!("line {line}"),
                    format!("bad symmetry `{raw}`"),
                ))
            }
        };
        rows.push(AssessmentRow {
            key: ItemKey::new(record[cols[0]].to_string(), limb),
            angle_deg,
            symmetry,
        });
    }
    Ok(rows)
}

/// histogram.csv: limb,bin_lo_deg,bin_hi_deg,count.
pub fn write_histogram(
    path: impl AsRef<Path>,
    histogram: &AngleHistogram,
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record(["limb", "bin_lo_deg", "bin_hi_deg", "count"])
        .map_err(|e| write_failed(path, e))?;
    for limb in LimbPair::ALL {
        for b in 0..histogram.n_bins() {
            let (lo, hi) = histogram.bin_edges(b);
            wtr.write_record([
                limb.as_str(),
                &fmt_f64(lo),
                &fmt_f64(hi),
                &histogram.counts[limb.index()][b].to_string(),
            ])
            .map_err(|e| write_failed(path, e))?;
        }
    }
    finish(path, wtr)
}

/// consensus.csv: image_id,limb,posterior,hard_label.
pub fn write_binary_consensus(
    path: impl AsRef<Path>,
    aggregate: &BinaryAggregate,
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record(["image_id", "limb", "posterior", "hard_label"])
        .map_err(|e| write_failed(path, e))?;
    for (i, key) in aggregate.items.iter().enumerate() {
        wtr.write_record([
            key.image_id.as_str(),
            key.limb.as_str(),
            &fmt_f64(aggregate.posteriors[i]),
            &aggregate.hard_labels[i].to_string(),
        ])
        .map_err(|e| write_failed(path, e))?;
    }
    finish(path, wtr)
}

/// Read consensus.csv back as key -> (posterior, hard_label).
pub fn read_binary_consensus(path: impl AsRef<Path>) -> Result<BTreeMap<ItemKey, (f64, u8)>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, "header", e.to_string()))?.clone();
    let cols = header_columns(path, &headers, &["image_id", "limb", "posterior", "hard_label"])?;
    let mut map = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::parse(path, format!("line {line}"), e.to_string()))?;
        let limb: LimbPair = record[cols[1]]
            .parse()
            .map_err(|e: String| Error::parse(path, format!("line {line}"), e))?;
        let key = ItemKey::new(record[cols[0]].to_string(), limb);
        let posterior: f64 = record[cols[2]].parse().map_err(|_| {
            Error::parse(path, format!("line {line}"), "bad posterior".to_string())
        })?;
        let hard: u8 = record[cols[3]].parse().map_err(|_| {
            Error::parse(path, format!("line {line}"), "bad hard_label".to_string())
        })?;
        if map.insert(key, (posterior, hard)).is_some() {
            return Err(Error::parse(path, format!("line {line}"), "duplicate cell".to_string()));
        }
    }
    Ok(map)
}

/// ordinal_consensus.csv: image_id,limb,p0,p1,p2,hard_class.
pub fn write_ordinal_consensus(
    path: impl AsRef<Path>,
    aggregate: &OrdinalAggregate,
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record(["image_id", "limb", "p0", "p1", "p2", "hard_class"])
        .map_err(|e| write_failed(path, e))?;
    for (i, key) in aggregate.items.iter().enumerate() {
        let p = aggregate.class_probs[i];
        wtr.write_record([
            key.image_id.as_str(),
            key.limb.as_str(),
            &fmt_f64(p[0]),
            &fmt_f64(p[1]),
            &fmt_f64(p[2]),
            &aggregate.hard_classes[i].to_string(),
        ])
        .map_err(|e| write_failed(path, e))?;
    }
    finish(path, wtr)
}

/// rater_report.csv: per-rater EM estimates and empirical agreement with
/// the consensus.
pub fn write_rater_report(
    path: impl AsRef<Path>,
    rows: &[RaterReportRow],
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record([
        "rater_id",
        "n_labeled",
        "em_sensitivity",
        "em_specificity",
        "sensitivity",
        "specificity",
        "accuracy",
        "kappa",
    ])
    .map_err(|e| write_failed(path, e))?;
    for row in rows {
        wtr.write_record([
            row.rater_id.as_str(),
            &row.n_labeled.to_string(),
            &fmt_f64(row.em_sensitivity),
            &fmt_f64(row.em_specificity),
            &row.sensitivity.map(fmt_f64).unwrap_or_default(),
            &row.specificity.map(fmt_f64).unwrap_or_default(),
            &fmt_f64(row.accuracy),
            &row.kappa.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(|e| write_failed(path, e))?;
    }
    finish(path, wtr)
}

/// roc.csv: fpr,tpr,threshold (empty threshold on the origin anchor).
pub fn write_roc(
    path: impl AsRef<Path>,
    points: &[RocPoint],
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record(["fpr", "tpr", "threshold"]).map_err(|e| write_failed(path, e))?;
    for point in points {
        wtr.write_record([
            &fmt_f64(point.fpr),
            &fmt_f64(point.tpr),
            &point.threshold.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(|e| write_failed(path, e))?;
    }
    finish(path, wtr)
}

/// kappa_curve.csv: theta_deg,kappa.
pub fn write_kappa_curve(
    path: impl AsRef<Path>,
    curve: &[(f64, f64)],
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record(["theta_deg", "kappa"]).map_err(|e| write_failed(path, e))?;
    for &(theta, kappa) in curve {
        wtr.write_record([&fmt_f64(theta), &fmt_f64(kappa)])
            .map_err(|e| write_failed(path, e))?;
    }
    finish(path, wtr)
}

/// truth.csv: image_id,limb,angle_deg,symmetry,angle_class.
pub fn write_truth(
    path: impl AsRef<Path>,
    truth: &[TruthCell],
    stamp: Option<&Stamp>,
) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = stamped_writer(path, stamp)?;
    wtr.write_record(["image_id", "limb", "angle_deg", "symmetry", "angle_class"])
        .map_err(|e| write_failed(path, e))?;
    for cell in truth {
        wtr.write_record([
            cell.key.image_id.as_str(),
            cell.key.limb.as_str(),
            &fmt_f64(cell.angle_deg),
            &cell.symmetry.to_string(),
            &cell.angle_class.to_string(),
        ])
        .map_err(|e| write_failed(path, e))?;
    }
    finish(path, wtr)
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<TruthCell>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, "header", e.to_string()))?.clone();
    let cols = header_columns(
        path,
        &headers,
        &["image_id", "limb", "angle_deg", "symmetry", "angle_class"],
    )?;
    let mut cells = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::parse(path, format!("line {line}"), e.to_string()))?;
        let limb: LimbPair = record[cols[1]]
            .parse()
            .map_err(|e: String| Error::parse(path, format!("line {line}"), e))?;
        let bad = |what: &str| Error::parse(path, format!("line {line}"), format!("bad {what}"));
        cells.push(TruthCell {
            key: ItemKey::new(record[cols[0]].to_string(), limb),
            angle_deg: record[cols[2]].parse().map_err(|_| bad("angle_deg"))?,
            symmetry: record[cols[3]].parse().map_err(|_| bad("symmetry"))?,
            angle_class: record[cols[4]].parse().map_err(|_| bad("angle_class"))?,
        });
    }
    Ok(cells)
}
