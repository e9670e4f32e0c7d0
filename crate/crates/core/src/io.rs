//! CSV telemetry, truth, estimate and report files.
//!
//! Numbers are written with the shortest round-trip representation, so a file
//! read back reproduces the in-memory stream exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::analysis::{ErrorSeries, SpectrumReport};
use crate::error::{Error, Result};
use crate::pipeline::{EstimateRecord, RollReference};
use crate::sensors::MeasurementFrame;
use crate::trajectory::TrajectoryTruth;

pub const TELEMETRY_COLUMNS: [&str; 10] = [
    "t", "ya_x", "ya_y", "ya_z", "yg_x", "yg_y", "yg_z", "ys_x", "ys_y", "ys_z",
];

/// Optional truth columns accepted in a telemetry file.
pub const TELEMETRY_TRUTH_COLUMNS: [&str; 2] = ["phi", "v_mag"];

pub const TRUTH_COLUMNS: [&str; 24] = [
    "t", "s", "phi", "theta", "psi", "omega_x", "omega_y", "omega_z", "v_x", "v_y", "v_z", "vdot_x", "vdot_y",
    "vdot_z", "v_mag", "gamma", "chi", "v_mag_dot", "gamma_dot", "chi_dot", "delta_phi", "fx", "fy", "fz",
];

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| io_err(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| io_err(path, e))
}

fn write_rows<W: Write>(out: W, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

/// Telemetry rows; with `truth`, the roll and speed columns are appended.
pub fn write_telemetry<W: Write>(out: W, frames: &[MeasurementFrame<f64>], truth: Option<&TrajectoryTruth>) -> Result<()> {
    if let Some(tr) = truth {
        if tr.samples.len() != frames.len() {
            return Err(Error::Data("truth and telemetry lengths differ".into()));
        }
    }
    let mut header = strings(&TELEMETRY_COLUMNS);
    if truth.is_some() {
        header.extend(strings(&TELEMETRY_TRUTH_COLUMNS));
    }
    let rows = frames.iter().enumerate().map(|(i, f)| {
        let mut r = vec![fmt(f.t)];
        r.extend(f.y_a.iter().map(|v| fmt(*v)));
        r.extend(f.y_g.iter().map(|v| fmt(*v)));
        match f.y_s {
            Some(v) => r.extend(v.iter().map(|x| fmt(*x))),
            None => r.extend([String::new(), String::new(), String::new()]),
        }
        if let Some(tr) = truth {
            let s = &tr.samples[i];
            r.push(fmt(s.phi));
            r.push(fmt(s.xi.v_mag));
        }
        r
    });
    write_rows(out, &header, rows)
}

struct Table {
    index: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read<R: Read>(input: R, required: &[&str]) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rd.headers().map_err(csv_err)?.clone();
        let index: HashMap<String, usize> = header.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
        if let Some(missing) = required.iter().find(|c| !index.contains_key(**c)) {
            return Err(Error::Data(format!("missing column '{missing}'")));
        }
        let rows = rd.records().collect::<std::result::Result<Vec<_>, _>>().map_err(csv_err)?;
        if rows.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        Ok(Self { index, rows })
    }

    fn has(&self, col: &str) -> bool {
        self.index.contains_key(col)
    }

    fn get(&self, row: usize, col: &str) -> Result<Option<f64>> {
        let field = self.rows[row].get(self.index[col]).unwrap_or("");
        if field.is_empty() {
            return Ok(None);
        }
        field
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Data(format!("row {}: column '{col}': '{field}' is not a number", row + 1)))
    }

    fn num(&self, row: usize, col: &str) -> Result<f64> {
        self.get(row, col)?
            .ok_or_else(|| Error::Data(format!("row {}: column '{col}' is empty", row + 1)))
    }

    fn column(&self, col: &str) -> Result<Vec<f64>> {
        (0..self.rows.len()).map(|i| self.num(i, col)).collect()
    }

    fn times(&self) -> Result<Vec<f64>> {
        let t = self.column("t")?;
        if let Some(i) = t.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!("time is not increasing at row {}", i + 2)));
        }
        Ok(t)
    }
}

/// Parsed telemetry, with the roll reference when the file carries truth columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub frames: Vec<MeasurementFrame<f64>>,
    pub reference: Option<RollReference>,
}

pub fn read_telemetry<R: Read>(input: R) -> Result<Telemetry> {
    let tb = Table::read(input, &TELEMETRY_COLUMNS)?;
    let t = tb.times()?;
    let v3 = |i: usize, p: &str| -> Result<Vector3<f64>> {
        Ok(Vector3::new(
            tb.num(i, &format!("{p}_x"))?,
            tb.num(i, &format!("{p}_y"))?,
            tb.num(i, &format!("{p}_z"))?,
        ))
    };
    let mut frames = Vec::with_capacity(t.len());
    for (i, &ti) in t.iter().enumerate() {
        let ys = [tb.get(i, "ys_x")?, tb.get(i, "ys_y")?, tb.get(i, "ys_z")?];
        let y_s = match ys {
            [Some(x), Some(y), Some(z)] => Some(Vector3::new(x, y, z)),
            [None, None, None] => None,
            _ => return Err(Error::Data(format!("row {}: partial GNSS sample", i + 1))),
        };
        frames.push(MeasurementFrame {
            t: ti,
            y_a: v3(i, "ya")?,
            y_g: v3(i, "yg")?,
            y_s,
        });
    }
    let reference = if TELEMETRY_TRUTH_COLUMNS.iter().all(|c| tb.has(c)) {
        Some(RollReference {
            phi: tb.column("phi")?,
            speed: tb.column("v_mag")?,
            t,
        })
    } else {
        None
    };
    Ok(Telemetry { frames, reference })
}

pub fn write_truth<W: Write>(out: W, truth: &TrajectoryTruth) -> Result<()> {
    let rows = truth.samples.iter().map(|s| {
        let f = s.specific_force(truth.g_mag);
        let mut r = vec![fmt(s.t), fmt(s.s), fmt(s.theta.phi), fmt(s.theta.theta), fmt(s.theta.psi)];
        r.extend(s.omega.iter().map(|v| fmt(*v)));
        r.extend(s.v.iter().map(|v| fmt(*v)));
        r.extend(s.v_dot.iter().map(|v| fmt(*v)));
        r.extend(s.xi.to_vector().iter().map(|v| fmt(*v)));
        r.push(fmt(s.delta_phi));
        r.push(fmt(f[0]));
        r.push(fmt(f[1]));
        r.push(fmt(f[2]));
        r
    });
    write_rows(out, &strings(&TRUTH_COLUMNS), rows)
}

/// Roll reference from a truth file.
pub fn read_reference<R: Read>(input: R) -> Result<RollReference> {
    let tb = Table::read(input, &["t", "phi", "v_mag"])?;
    Ok(RollReference {
        t: tb.times()?,
        phi: tb.column("phi")?,
        speed: tb.column("v_mag")?,
    })
}

pub fn estimate_header() -> Vec<String> {
    let mut h = strings(&["t", "phi_hat", "phi_av", "q0", "q1", "q2", "q3", "bg_x", "bg_y", "bg_z"]);
    h.extend((0..7).map(|k| format!("s{k}{k}")));
    h.extend(strings(&[
        "s_min", "s_max", "r_trace", "chi_av", "staleness", "held", "n_plus", "n_minus",
    ]));
    h
}

pub fn write_estimates<W: Write>(out: W, records: &[EstimateRecord<f64>]) -> Result<()> {
    let rows = records.iter().map(|r| {
        let mut row = vec![fmt(r.t)];
        let e = r.ekf.as_ref();
        let p = r.pre.as_ref();
        row.push(opt(e.map(|e| e.phi_hat)));
        row.push(opt(p.map(|p| p.theta_av.phi)));
        for k in 0..4 {
            row.push(opt(e.map(|e| e.q_hat.as_vector()[k])));
        }
        for k in 0..3 {
            row.push(opt(e.map(|e| e.b_g_hat[k])));
        }
        for k in 0..7 {
            row.push(opt(e.map(|e| e.s_diag[k])));
        }
        row.push(opt(e.map(|e| e.s_eigen_range.0)));
        row.push(opt(e.map(|e| e.s_eigen_range.1)));
        row.push(opt(e.map(|e| e.r_trace)));
        row.push(opt(p.map(|p| p.theta_av.psi)));
        row.push(p.map(|p| p.staleness.to_string()).unwrap_or_default());
        row.push(p.map(|p| u8::from(p.held).to_string()).unwrap_or_default());
        row.push(p.map(|p| p.laps.n_plus.to_string()).unwrap_or_default());
        row.push(p.map(|p| p.laps.n_minus.to_string()).unwrap_or_default());
        row
    });
    write_rows(out, &estimate_header(), rows)
}

/// Error series side by side; all must share the time base.
pub fn write_errors<W: Write>(out: W, series: &[ErrorSeries]) -> Result<()> {
    let Some(first) = series.first() else {
        return Err(Error::Data("no error series".into()));
    };
    if series.iter().any(|s| s.t != first.t) {
        return Err(Error::Data("error series do not share a time base".into()));
    }
    let mut header = vec!["t".to_string()];
    header.extend(series.iter().map(|s| format!("err_{}", s.label)));
    let rows = (0..first.t.len()).map(|i| {
        let mut r = vec![fmt(first.t[i])];
        r.extend(series.iter().map(|s| fmt(s.err[i])));
        r
    });
    write_rows(out, &header, rows)
}

/// Amplitude and periodogram of each series per frequency bin.
pub fn write_spectra<W: Write>(out: W, labels: &[&str], spectra: &[SpectrumReport]) -> Result<()> {
    let Some(first) = spectra.first() else {
        return Err(Error::Data("no spectra".into()));
    };
    if labels.len() != spectra.len() || spectra.iter().any(|s| s.freq.len() != first.freq.len()) {
        return Err(Error::Data("spectra are not aligned".into()));
    }
    let mut header = vec!["freq".to_string()];
    header.extend(labels.iter().map(|l| format!("amp_{l}")));
    header.extend(labels.iter().map(|l| format!("power_{l}")));
    let rows = (0..first.freq.len()).map(|k| {
        let mut r = vec![fmt(first.freq[k])];
        r.extend(spectra.iter().map(|s| fmt(s.amplitude[k])));
        r.extend(spectra.iter().map(|s| fmt(s.power[k])));
        r
    });
    write_rows(out, &header, rows)
}

pub fn save<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<File>) -> Result<()>,
{
    let mut w = std::io::BufWriter::new(create(path)?);
    write(&mut w)?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load<T, F>(path: &Path, read: F) -> Result<T>
where
    F: FnOnce(std::io::BufReader<File>) -> Result<T>,
{
    read(std::io::BufReader::new(open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames() -> Vec<MeasurementFrame<f64>> {
        (0..4)
            .map(|i| MeasurementFrame {
                t: i as f64 * 0.01,
                y_a: Vector3::new(0.1 * i as f64, -1.0 / 3.0, 9.81),
                y_g: Vector3::new(1e-17, 0.2, -0.3),
                y_s: (i % 2 == 0).then(|| Vector3::new(30.0, 0.1 + i as f64, -0.05)),
            })
            .collect()
    }

    #[test]
    fn telemetry_round_trips_exactly() {
        let mut buf = Vec::new();
        write_telemetry(&mut buf, &frames(), None).unwrap();
        let back = read_telemetry(buf.as_slice()).unwrap();
        assert_eq!(back.frames, frames());
        assert!(back.reference.is_none());
    }

    #[test]
    fn empty_and_malformed_telemetry_are_data_errors() {
        let header = TELEMETRY_COLUMNS.join(",");
        assert!(matches!(read_telemetry(format!("{header}\n").as_bytes()), Err(Error::Data(_))));
        assert!(matches!(read_telemetry("".as_bytes()), Err(Error::Data(_))));
        assert!(matches!(read_telemetry("t,ya_x\n0,1\n".as_bytes()), Err(Error::Data(_))));
        let rows = format!("{header}\n0.1,0,0,9.8,0,0,0,,,\n0.1,0,0,9.8,0,0,0,,,\n");
        assert!(matches!(read_telemetry(rows.as_bytes()), Err(Error::Data(_))));
        let partial = format!("{header}\n0,0,0,9.8,0,0,0,1,,\n");
        assert!(matches!(read_telemetry(partial.as_bytes()), Err(Error::Data(_))));
        let text = format!("{header}\n0,0,0,x,0,0,0,,,\n");
        assert!(matches!(read_telemetry(text.as_bytes()), Err(Error::Data(_))));
    }
}
