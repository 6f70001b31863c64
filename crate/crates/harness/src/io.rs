//! Iteration logs as CSV and run summaries as JSON.
//!
//! The iteration CSV has the fixed columns of [`COLUMNS`]. Floats are written
//! in shortest round-trip exponent form, vectors join their entries with
//! `;`, and an absent optional value is an empty field, so reading a written
//! log gives back the same records.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use trqda_core::{IterationRecord, VerifyOutcome};

use crate::HarnessError;

/// Column set and order of the iteration CSV.
pub const COLUMNS: [&str; 28] = [
    "k",
    "big_delta",
    "delta",
    "j",
    "rho",
    "successful",
    "dt_s",
    "dt_d",
    "f_old",
    "f_new",
    "f_acc",
    "f_old_acc",
    "f_old_recomputed",
    "step1_skipped",
    "step1_tightenings",
    "step2_tightenings",
    "step2_cap",
    "step2_outcome",
    "step2_absolute",
    "i_zeta",
    "zetas",
    "f_evals",
    "deriv_evals",
    "deriv_rounds",
    "x",
    "step",
    "step_norm",
    "big_delta_next",
];

fn float(v: f64) -> String {
    format!("{v:e}")
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| float(*x)).collect::<Vec<_>>().join(";")
}

fn record_fields(r: &IterationRecord) -> Vec<String> {
    vec![
        r.k.to_string(),
        float(r.big_delta),
        float(r.delta),
        r.j.to_string(),
        float(r.rho),
        r.successful.to_string(),
        float(r.dt_s),
        float(r.dt_d),
        float(r.f_old),
        float(r.f_new),
        float(r.f_acc),
        float(r.f_old_acc),
        r.f_old_recomputed.to_string(),
        r.step1_skipped.to_string(),
        r.step1_tightenings.to_string(),
        r.step2_tightenings.to_string(),
        r.step2_cap.map(|c| c.to_string()).unwrap_or_default(),
        r.step2_outcome.as_str().to_string(),
        r.step2_absolute.to_string(),
        r.i_zeta.to_string(),
        floats(&r.zetas),
        r.f_evals.to_string(),
        r.deriv_evals.to_string(),
        r.deriv_rounds.to_string(),
        floats(&r.x),
        floats(&r.step),
        float(r.step_norm),
        float(r.big_delta_next),
    ]
}

struct Fields<'a> {
    rec: &'a csv::StringRecord,
    line: u64,
}

impl Fields<'_> {
    fn raw(&self, i: usize) -> &str {
        self.rec.get(i).unwrap_or("")
    }

    fn bad(&self, i: usize) -> HarnessError {
        HarnessError::Parse(format!("line {}: bad {} '{}'", self.line, COLUMNS[i], self.raw(i)))
    }

    fn get<T: std::str::FromStr>(&self, i: usize) -> Result<T, HarnessError> {
        self.raw(i).parse().map_err(|_| self.bad(i))
    }

    fn opt<T: std::str::FromStr>(&self, i: usize) -> Result<Option<T>, HarnessError> {
        match self.raw(i) {
            "" => Ok(None),
            s => s.parse().map(Some).map_err(|_| self.bad(i)),
        }
    }

    fn list(&self, i: usize) -> Result<Vec<f64>, HarnessError> {
        match self.raw(i) {
            "" => Ok(Vec::new()),
            s => s.split(';').map(|v| v.parse().map_err(|_| self.bad(i))).collect(),
        }
    }

    fn outcome(&self, i: usize) -> Result<VerifyOutcome, HarnessError> {
        [VerifyOutcome::Relative, VerifyOutcome::Absolute, VerifyOutcome::Insufficient]
            .into_iter()
            .find(|o| o.as_str() == self.raw(i))
            .ok_or_else(|| self.bad(i))
    }
}

fn parse_record(f: &Fields) -> Result<IterationRecord, HarnessError> {
    Ok(IterationRecord {
        k: f.get(0)?,
        big_delta: f.get(1)?,
        delta: f.get(2)?,
        j: f.get(3)?,
        rho: f.get(4)?,
        successful: f.get(5)?,
        dt_s: f.get(6)?,
        dt_d: f.get(7)?,
        f_old: f.get(8)?,
        f_new: f.get(9)?,
        f_acc: f.get(10)?,
        f_old_acc: f.get(11)?,
        f_old_recomputed: f.get(12)?,
        step1_skipped: f.get(13)?,
        step1_tightenings: f.get(14)?,
        step2_tightenings: f.get(15)?,
        step2_cap: f.opt(16)?,
        step2_outcome: f.outcome(17)?,
        step2_absolute: f.get(18)?,
        i_zeta: f.get(19)?,
        zetas: f.list(20)?,
        f_evals: f.get(21)?,
        deriv_evals: f.get(22)?,
        deriv_rounds: f.get(23)?,
        x: f.list(24)?,
        step: f.list(25)?,
        step_norm: f.get(26)?,
        big_delta_next: f.get(27)?,
    })
}

pub fn write_history<W: Write>(out: W, history: &[IterationRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in history {
        w.write_record(record_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history<R: Read>(input: R) -> Result<Vec<IterationRecord>, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(HarnessError::Parse(format!(
            "unexpected CSV header: {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(parse_record(&Fields { rec: &rec, line })?);
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_history_file(path: &Path, history: &[IterationRecord]) -> Result<(), HarnessError> {
    write_history(create(path)?, history)
}

pub fn read_history_file(path: &Path) -> Result<Vec<IterationRecord>, HarnessError> {
    read_history(File::open(path)?)
}

/// Writes any serializable rows as a headed CSV.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize) -> IterationRecord {
        IterationRecord {
            k,
            big_delta: 1.0,
            delta: 0.5,
            j: 2,
            rho: 0.1 + 1e-17 * k as f64,
            successful: k.is_multiple_of(2),
            dt_s: 1.0 / 3.0,
            dt_d: 1e-300,
            f_old: -2.5e10,
            f_new: f64::MIN_POSITIVE,
            f_acc: 0.0225,
            f_old_acc: 1e-3,
            f_old_recomputed: true,
            step1_skipped: false,
            step1_tightenings: 3,
            step2_tightenings: 0,
            step2_cap: if k == 0 { None } else { Some(4) },
            step2_outcome: VerifyOutcome::Relative,
            step2_absolute: 0,
            i_zeta: 7,
            zetas: vec![1e-3, 1e-4],
            f_evals: 10,
            deriv_evals: 12,
            deriv_rounds: 6,
            x: vec![0.1, -0.2],
            step: vec![],
            step_norm: std::f64::consts::PI,
            big_delta_next: 2.0,
        }
    }

    #[test]
    fn round_trip() {
        let h: Vec<_> = (0..3).map(record).collect();
        let mut buf = Vec::new();
        write_history(&mut buf, &h).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,big_delta,delta,j,rho"));
        assert_eq!(read_history(buf.as_slice()).unwrap(), h);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(read_history("a,b\n1,2\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        write_history(&mut buf, &[record(1)]).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("relative", "sideways");
        assert!(read_history(text.as_bytes()).unwrap_err().to_string().contains("step2_outcome"));
    }
}
