//! Per-base-station hourly traffic: loading, cleaning, writing and synthesis.
//!
//! A corpus is a rectangular matrix with one row per base station and one
//! column per hour. Raw corpora read from disk may contain missing,
//! negative or non-finite entries; [`clean`] drops every base station that
//! has any such fault and yields a [`TrafficMatrix`], which is the only
//! matrix type the rest of the crate accepts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cleaned N×L traffic matrix. Every entry is finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficMatrix {
    bs_ids: Vec<String>,
    values: Vec<f64>,
    n_hours: usize,
    start_hour: u64,
}

impl TrafficMatrix {
    /// Builds a matrix from per-station rows, validating shape, ids and values.
    pub fn new(bs_ids: Vec<String>, rows: Vec<Vec<f64>>, start_hour: u64) -> Result<Self> {
        if bs_ids.len() != rows.len() {
            return Err(Error::InvalidMatrix(format!(
                "{} ids for {} rows",
                bs_ids.len(),
                rows.len()
            )));
        }
        if rows.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n_hours = rows[0].len();
        if n_hours == 0 {
            return Err(Error::InvalidMatrix("rows must have at least one hour".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * n_hours);
        for (id, row) in bs_ids.iter().zip(&rows) {
            if row.len() != n_hours {
                return Err(Error::InvalidMatrix(format!(
                    "row {id} has {} hours, expected {n_hours}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidMatrix(format!("row {id} contains invalid value {v}")));
            }
            values.extend_from_slice(row);
        }
        check_unique(&bs_ids)?;
        Ok(Self {
            bs_ids,
            values,
            n_hours,
            start_hour,
        })
    }

    pub fn n_bs(&self) -> usize {
        self.bs_ids.len()
    }

    pub fn n_hours(&self) -> usize {
        self.n_hours
    }

    /// Absolute hour index of column 0.
    pub fn start_hour(&self) -> u64 {
        self.start_hour
    }

    pub fn bs_ids(&self) -> &[String] {
        &self.bs_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_hours..(i + 1) * self.n_hours]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_hours)
    }

    pub fn index_of(&self, bs_id: &str) -> Option<usize> {
        self.bs_ids.iter().position(|id| id == bs_id)
    }

    pub fn row_by_id(&self, bs_id: &str) -> Result<&[f64]> {
        self.index_of(bs_id)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::UnknownBs(bs_id.to_string()))
    }

    /// Column index of an absolute hour, if it lies inside the matrix.
    pub fn column_of(&self, hour: u64) -> Option<usize> {
        let col = hour.checked_sub(self.start_hour)? as usize;
        (col < self.n_hours).then_some(col)
    }

    /// Sub-matrix over the columns `cols` (all stations kept).
    pub fn slice_hours(&self, cols: std::ops::Range<usize>) -> Result<TrafficMatrix> {
        if cols.start >= cols.end || cols.end > self.n_hours {
            return Err(Error::InvalidMatrix(format!(
                "column range {cols:?} outside 0..{}",
                self.n_hours
            )));
        }
        let width = cols.len();
        let mut values = Vec::with_capacity(self.n_bs() * width);
        for row in self.rows() {
            values.extend_from_slice(&row[cols.clone()]);
        }
        Ok(TrafficMatrix {
            bs_ids: self.bs_ids.clone(),
            values,
            n_hours: width,
            start_hour: self.start_hour + cols.start as u64,
        })
    }

    /// Keeps only the stations at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<TrafficMatrix> {
        let rows = indices
            .iter()
            .map(|&i| {
                if i < self.n_bs() {
                    Ok(self.row(i).to_vec())
                } else {
                    Err(Error::InvalidMatrix(format!("row index {i} out of range")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let ids = indices.iter().map(|&i| self.bs_ids[i].clone()).collect();
        TrafficMatrix::new(ids, rows, self.start_hour)
    }
}

/// Traffic matrix as loaded from disk, before cleaning. `None` marks a
/// missing (station, hour) record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrafficMatrix {
    pub bs_ids: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub start_hour: u64,
}

impl RawTrafficMatrix {
    pub fn n_hours(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

impl From<&TrafficMatrix> for RawTrafficMatrix {
    fn from(t: &TrafficMatrix) -> Self {
        RawTrafficMatrix {
            bs_ids: t.bs_ids.clone(),
            values: t.rows().map(|r| r.iter().copied().map(Some).collect()).collect(),
            start_hour: t.start_hour,
        }
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidMatrix(format!("duplicate base station id {id}")));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Record {
    bs_id: String,
    hour: u64,
    volume: String,
}

const HEADER: [&str; 3] = ["bs_id", "hour", "volume"];

/// Reads a `bs_id,hour,volume` CSV corpus from `path`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<RawTrafficMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file)
}

/// Reads a `bs_id,hour,volume` CSV corpus. Rows come back sorted by
/// station id; columns span the smallest through largest hour present and
/// any absent (station, hour) record is marked missing.
pub fn read_corpus<R: Read>(reader: R) -> Result<RawTrafficMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(&e, 1))?;
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `bs_id,hour,volume`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let header = header.clone();
    let mut by_bs: BTreeMap<String, BTreeMap<u64, Option<f64>>> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => return Err(csv_error(&e, 0)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let rec: Record = record.deserialize(Some(&header)).map_err(|e| csv_error(&e, line))?;
        let volume = parse_volume(&rec.volume).map_err(|_| Error::Parse {
            line,
            message: format!("invalid volume `{}`", rec.volume),
        })?;
        let hours = by_bs.entry(rec.bs_id.clone()).or_default();
        if hours.insert(rec.hour, volume).is_some() {
            return Err(Error::InconsistentHours {
                bs_id: rec.bs_id,
                hour: rec.hour,
            });
        }
    }

    let (min_hour, max_hour) = by_bs
        .values()
        .flat_map(|h| h.keys().copied())
        .fold(None, |acc: Option<(u64, u64)>, h| match acc {
            None => Some((h, h)),
            Some((lo, hi)) => Some((lo.min(h), hi.max(h))),
        })
        .ok_or(Error::EmptyCorpus)?;
    let width = (max_hour - min_hour + 1) as usize;

    let mut bs_ids = Vec::with_capacity(by_bs.len());
    let mut values = Vec::with_capacity(by_bs.len());
    for (id, hours) in by_bs {
        let mut row = vec![None; width];
        for (h, v) in hours {
            row[(h - min_hour) as usize] = v;
        }
        bs_ids.push(id);
        values.push(row);
    }
    Ok(RawTrafficMatrix {
        bs_ids,
        values,
        start_hour: min_hour,
    })
}

fn parse_volume(s: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s == "NA" {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| e.to_string())
}

fn csv_error(e: &csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes a cleaned corpus, rows sorted by (bs_id, hour).
pub fn write_corpus<W: Write>(t: &TrafficMatrix, writer: W) -> Result<()> {
    write_raw_corpus(&RawTrafficMatrix::from(t), writer)
}

/// Writes a raw corpus; missing entries become `NA`.
pub fn write_raw_corpus<W: Write>(raw: &RawTrafficMatrix, writer: W) -> Result<()> {
    let mut order: Vec<usize> = (0..raw.bs_ids.len()).collect();
    order.sort_by(|&a, &b| raw.bs_ids[a].cmp(&raw.bs_ids[b]));
    let mut wtr = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| Error::io("<corpus writer>", e.into());
    wtr.write_record(HEADER).map_err(to_io)?;
    for i in order {
        for (j, v) in raw.values[i].iter().enumerate() {
            let hour = (raw.start_hour + j as u64).to_string();
            let volume = v.map_or_else(|| "NA".to_string(), |v| v.to_string());
            wtr.write_record([raw.bs_ids[i].as_str(), &hour, &volume])
                .map_err(to_io)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<corpus writer>", e))?;
    Ok(())
}

/// Drops every station that has a missing, negative or non-finite entry.
/// Surviving rows keep their order and their exact values.
pub fn clean(raw: &RawTrafficMatrix) -> Result<TrafficMatrix> {
    if raw.bs_ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (id, row) in raw.bs_ids.iter().zip(&raw.values) {
        let kept: Option<Vec<f64>> = row.iter().map(|v| v.filter(|v| v.is_finite() && *v >= 0.0)).collect();
        if let Some(kept) = kept {
            ids.push(id.clone());
            rows.push(kept);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    TrafficMatrix::new(ids, rows, raw.start_hour)
}

/// Parameters of the synthetic traffic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_bs: usize,
    pub n_hours: usize,
    pub seed: u64,
    /// Peak-to-trough ratio of the daily profile is `1 + daily_profile_amplitude`.
    pub daily_profile_amplitude: f64,
    /// Std of the daily log-intensity random walk.
    pub day_intensity_std: f64,
    /// Std of the hourly log-normal noise.
    pub noise_std: f64,
    /// Per-station probability of a burst in the final four days.
    pub burst_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_bs: 200,
            n_hours: 336,
            seed: 1,
            daily_profile_amplitude: 4.0,
            day_intensity_std: 0.15,
            noise_std: 0.15,
            burst_probability: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_bs == 0 {
            return bad("n_bs must be at least 1");
        }
        if self.n_hours < 24 {
            return bad("n_hours must be at least 24");
        }
        for (name, v) in [
            ("daily_profile_amplitude", self.daily_profile_amplitude),
            ("day_intensity_std", self.day_intensity_std),
            ("noise_std", self.noise_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(0.0..=1.0).contains(&self.burst_probability) {
            return bad("burst_probability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Hours in the tail of the series where bursts may start.
const BURST_WINDOW: usize = 96;

fn circular_gap(h: f64, center: f64) -> f64 {
    let d = (h - center).abs() % 24.0;
    d.min(24.0 - d)
}

/// Smooth bimodal day curve in [0, 1]: a midday and an evening peak, trough
/// in the early morning. `evening_weight` sets the height of the second peak.
fn day_shape(hour_of_day: usize, evening_weight: f64) -> f64 {
    let h = hour_of_day as f64;
    let bump = |c: f64, width: f64| (-(circular_gap(h, c) / width).powi(2) / 2.0).exp();
    let raw = bump(12.0, 3.0) + evening_weight * bump(20.5, 2.0);
    raw / (1.0 + evening_weight)
}

/// Generates a synthetic corpus: per-station scale × daily profile ×
/// per-day intensity (a log random walk) × hourly log-normal noise, with
/// optional multiplicative bursts near the end of the series.
pub fn synthesize(cfg: &SynthConfig) -> Result<TrafficMatrix> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n_days = cfg.n_hours.div_ceil(24);
    let width = cfg.n_bs.to_string().len().max(4);

    let mut ids = Vec::with_capacity(cfg.n_bs);
    let mut rows = Vec::with_capacity(cfg.n_bs);
    for i in 0..cfg.n_bs {
        let scale = (10f64.ln() + 0.8 * std_normal.sample(&mut rng)).exp();
        let evening_weight = rng.random_range(0.3..1.2);
        let profile: Vec<f64> = (0..24)
            .map(|h| 1.0 + cfg.daily_profile_amplitude * day_shape(h, evening_weight))
            .collect();

        let mut log_intensity = 0.0f64;
        let mut day_factor = Vec::with_capacity(n_days);
        for _ in 0..n_days {
            day_factor.push(log_intensity.exp());
            log_intensity += cfg.day_intensity_std * std_normal.sample(&mut rng);
        }

        let half_var = cfg.noise_std * cfg.noise_std / 2.0;
        let mut row: Vec<f64> = (0..cfg.n_hours)
            .map(|j| {
                let noise = (cfg.noise_std * std_normal.sample(&mut rng) - half_var).exp();
                scale * profile[j % 24] * day_factor[j / 24] * noise
            })
            .collect();

        if rng.random_bool(cfg.burst_probability) {
            let window = BURST_WINDOW.min(cfg.n_hours);
            let first = cfg.n_hours - window;
            let start = first + rng.random_range(0..window);
            let len = rng.random_range(12..=36);
            let factor = rng.random_range(2.5..5.0);
            for v in row.iter_mut().skip(start).take(len) {
                *v *= factor;
            }
        }

        ids.push(format!("bs_{i:0width$}"));
        rows.push(row);
    }
    TrafficMatrix::new(ids, rows, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(rows: Vec<Vec<Option<f64>>>) -> RawTrafficMatrix {
        RawTrafficMatrix {
            bs_ids: (0..rows.len()).map(|i| format!("bs_{i}")).collect(),
            values: rows,
            start_hour: 0,
        }
    }

    #[test]
    fn loads_complete_corpus_in_id_order() {
        let csv = "bs_id,hour,volume\nb,0,1\nb,1,2\na,0,3\na,1,4\nb,2,5\nb,3,6\na,2,7\na,3,8\n";
        let m = read_corpus(csv.as_bytes()).unwrap();
        assert_eq!(m.bs_ids, vec!["a", "b"]);
        assert_eq!(m.values[0], vec![Some(3.0), Some(4.0), Some(7.0), Some(8.0)]);
        assert_eq!(m.values[1], vec![Some(1.0), Some(2.0), Some(5.0), Some(6.0)]);
        assert_eq!(m.start_hour, 0);
    }

    #[test]
    fn duplicate_record_is_inconsistent() {
        let csv = "bs_id,hour,volume\nbs_7,3,1.0\nbs_7,3,2.0\n";
        match read_corpus(csv.as_bytes()) {
            Err(Error::InconsistentHours { bs_id, hour }) => {
                assert_eq!(bs_id, "bs_7");
                assert_eq!(hour, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn absent_record_is_marked_missing() {
        let mut csv = String::from("bs_id,hour,volume\n");
        for h in 0..8 {
            csv.push_str(&format!("bs_1,{h},1.5\n"));
            if h != 5 {
                csv.push_str(&format!("bs_2,{h},2.5\n"));
            }
        }
        let m = read_corpus(csv.as_bytes()).unwrap();
        assert_eq!(m.values[1][5], None);
        assert_eq!(m.values[1][4], Some(2.5));
    }

    #[test]
    fn na_literal_is_missing_and_bad_volume_reports_line() {
        let m = read_corpus("bs_id,hour,volume\na,0,NA\na,1,2\n".as_bytes()).unwrap();
        assert_eq!(m.values[0], vec![None, Some(2.0)]);

        match read_corpus("bs_id,hour,volume\na,0,1\na,1,abc\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_corpus("id,hour,volume\na,0,1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_corpus("bs_id,hour,volume\na,x,1\n".as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn clean_drops_faulty_rows() {
        let r = raw(vec![
            vec![Some(1.0), Some(2.0)],
            vec![Some(3.0), Some(-1.0)],
            vec![Some(5.0), Some(6.0)],
        ]);
        let t = clean(&r).unwrap();
        assert_eq!(t.bs_ids(), &["bs_0", "bs_2"]);
        assert_eq!(t.row(0), &[1.0, 2.0]);
        assert_eq!(t.row(1), &[5.0, 6.0]);
    }

    #[test]
    fn clean_treats_missing_and_nonfinite_as_faults() {
        let r = raw(vec![
            vec![None, Some(2.0)],
            vec![Some(f64::NAN), Some(1.0)],
            vec![Some(f64::INFINITY), Some(1.0)],
            vec![Some(0.0), Some(1.0)],
        ]);
        let t = clean(&r).unwrap();
        assert_eq!(t.bs_ids(), &["bs_3"]);
    }

    #[test]
    fn clean_valid_is_identity() {
        let t = TrafficMatrix::new(
            vec!["x".into(), "y".into()],
            vec![vec![1.0, 2.0, 3.0], vec![0.0, 0.5, 9.0]],
            7,
        )
        .unwrap();
        assert_eq!(clean(&RawTrafficMatrix::from(&t)).unwrap(), t);
    }

    #[test]
    fn clean_all_faulty_is_empty() {
        let r = raw(vec![vec![None], vec![Some(-2.0)]]);
        assert!(matches!(clean(&r), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn matrix_rejects_bad_input() {
        assert!(TrafficMatrix::new(vec!["a".into()], vec![vec![-1.0]], 0).is_err());
        assert!(TrafficMatrix::new(vec!["a".into(), "a".into()], vec![vec![1.0], vec![1.0]], 0).is_err());
        assert!(TrafficMatrix::new(vec!["a".into(), "b".into()], vec![vec![1.0], vec![1.0, 2.0]], 0).is_err());
        assert!(TrafficMatrix::new(vec!["a".into()], vec![vec![]], 0).is_err());
    }

    #[test]
    fn slicing_keeps_absolute_hours() {
        let t = TrafficMatrix::new(vec!["a".into()], vec![vec![1.0, 2.0, 3.0, 4.0]], 10).unwrap();
        let s = t.slice_hours(1..3).unwrap();
        assert_eq!(s.row(0), &[2.0, 3.0]);
        assert_eq!(s.start_hour(), 11);
        assert_eq!(t.column_of(13), Some(3));
        assert_eq!(t.column_of(14), None);
        assert_eq!(t.column_of(9), None);
    }

    #[test]
    fn synthesize_is_deterministic() {
        let cfg = SynthConfig {
            n_bs: 5,
            n_hours: 100,
            burst_probability: 0.5,
            ..SynthConfig::default()
        };
        assert_eq!(synthesize(&cfg).unwrap(), synthesize(&cfg).unwrap());
        let other = SynthConfig { seed: 2, ..cfg.clone() };
        assert_ne!(synthesize(&cfg).unwrap(), synthesize(&other).unwrap());
    }

    #[test]
    fn synthesize_without_randomness_is_daily_periodic() {
        let cfg = SynthConfig {
            n_bs: 4,
            n_hours: 24 * 5 + 7,
            noise_std: 0.0,
            day_intensity_std: 0.0,
            burst_probability: 0.0,
            ..SynthConfig::default()
        };
        let t = synthesize(&cfg).unwrap();
        for row in t.rows() {
            for j in 0..row.len() - 24 {
                assert_eq!(row[j], row[j + 24]);
            }
        }
    }

    #[test]
    fn synthesize_shape_and_sign() {
        let t = synthesize(&SynthConfig::default()).unwrap();
        assert_eq!((t.n_bs(), t.n_hours()), (200, 336));
        assert!(t.rows().flatten().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn synthesize_rejects_bad_config() {
        let base = SynthConfig::default();
        for cfg in [
            SynthConfig {
                n_bs: 0,
                ..base.clone()
            },
            SynthConfig {
                n_hours: 23,
                ..base.clone()
            },
            SynthConfig {
                noise_std: -0.1,
                ..base.clone()
            },
            SynthConfig {
                burst_probability: 1.5,
                ..base.clone()
            },
        ] {
            assert!(matches!(synthesize(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn synth_config_json_uses_field_names() {
        let cfg: SynthConfig = serde_json::from_str(
            r#"{"n_bs":3,"n_hours":48,"seed":9,"daily_profile_amplitude":1.0,
                "day_intensity_std":0.0,"noise_std":0.0,"burst_probability":0.0}"#,
        )
        .unwrap();
        assert_eq!(cfg.n_bs, 3);
        assert!(serde_json::from_str::<SynthConfig>(r#"{"n_bs":3}"#).is_err());
    }

    #[test]
    fn day_profile_peaks_in_daytime() {
        let night = day_shape(4, 0.8);
        let noon = day_shape(12, 0.8);
        let evening = day_shape(20, 0.8);
        assert!(noon > 5.0 * night && evening > 5.0 * night);
        assert!((0..24).all(|h| (0.0..=1.0).contains(&day_shape(h, 1.2))));
    }
}
