//! CSV tables for experiment output.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::io::Write;

use crate::error::Result;
use crate::index::IndexBranch;
use crate::sim::{Estimate, ExperimentResult, HorizonPoint, MemoryPoint, PctGain};
use crate::subsidy::ThresholdClass;

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parses a float written by [`format_float`] (or any Rust float literal).
pub fn parse_float(s: &str) -> Option<f64> {
    s.parse().ok()
}

/// A CSV table held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
            .collect::<Result<_>>()?;
        Ok(Table { header, rows })
    }

    /// Column by name, parsed as floats (`None` for empty cells).
    pub fn float_column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let col = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| parse_float(&r[col])).collect())
    }
}

fn f(x: f64) -> String {
    format_float(x)
}

pub fn branch_name(b: IndexBranch) -> &'static str {
    match b {
        IndexBranch::PosHigh => "pos_high",
        IndexBranch::PosMid => "pos_mid",
        IndexBranch::PosLowMid => "pos_low_mid",
        IndexBranch::PosLow => "pos_low",
        IndexBranch::NegHigh => "neg_high",
        IndexBranch::NegUpper => "neg_upper",
        IndexBranch::NegMid => "neg_mid",
        IndexBranch::NegLowMid => "neg_low_mid",
        IndexBranch::NegLow => "neg_low",
    }
}

/// `pi,branch,index`
pub fn index_curve_table(rows: &[(f64, IndexBranch, f64)]) -> Table {
    let mut t = Table::new(&["pi", "branch", "index"]);
    for &(pi, b, w) in rows {
        t.push(vec![f(pi), branch_name(b).into(), f(w)]);
    }
    t
}

/// `omega,class,pi_star`; `pi_star` is empty unless the class is interior.
pub fn threshold_table(rows: &[(f64, ThresholdClass)]) -> Table {
    let mut t = Table::new(&["omega", "class", "pi_star"]);
    for &(omega, class) in rows {
        let (name, pi) = match class {
            ThresholdClass::AlwaysActive => ("always_active", String::new()),
            ThresholdClass::Interior(b) => ("interior", f(b.get())),
            ThresholdClass::AlwaysIdle => ("always_idle", String::new()),
        };
        t.push(vec![f(omega), name.into(), pi]);
    }
    t
}

/// `t,belief,index`
pub fn trace_table(rows: &[(usize, f64, f64)]) -> Table {
    let mut t = Table::new(&["t", "belief", "index"]);
    for &(step, pi, w) in rows {
        t.push(vec![step.to_string(), f(pi), f(w)]);
    }
    t
}

/// `horizon,v_opt,v_index,ratio`
pub fn horizon_table(rows: &[HorizonPoint]) -> Table {
    let mut t = Table::new(&["horizon", "v_opt", "v_index", "ratio"]);
    for p in rows {
        t.push(vec![
            p.horizon.to_string(),
            f(p.v_opt),
            f(p.v_index),
            f(p.v_index / p.v_opt),
        ]);
    }
    t
}

/// `p,r,v_opt,v_index,v_nofb,spread`
pub fn memory_table(rows: &[MemoryPoint]) -> Table {
    let mut t = Table::new(&["p", "r", "v_opt", "v_index", "v_nofb", "spread"]);
    for m in rows {
        t.push(vec![
            f(m.p),
            f(m.r),
            f(m.v_opt),
            f(m.v_index),
            f(m.v_nofb),
            f(m.v_opt - m.v_nofb),
        ]);
    }
    t
}

/// `instance,seed,n,beta,horizon_used,v_opt,v_index,v_greedy,v_nofb,pct_gain`;
/// `pct_gain` is empty when undefined.
pub fn experiment_table(rows: &[ExperimentResult]) -> Table {
    let mut t = Table::new(&[
        "instance",
        "seed",
        "n",
        "beta",
        "horizon_used",
        "v_opt",
        "v_index",
        "v_greedy",
        "v_nofb",
        "pct_gain",
    ]);
    for r in rows {
        let gain = match r.pct_gain {
            PctGain::Defined(g) => f(g),
            PctGain::Undefined => String::new(),
        };
        t.push(vec![
            r.instance.to_string(),
            r.seed.to_string(),
            r.channels.len().to_string(),
            f(r.beta),
            r.horizon_used.to_string(),
            f(r.v_opt),
            f(r.v_index),
            f(r.v_greedy),
            f(r.v_nofb),
            gain,
        ]);
    }
    t
}

/// `instance,user,p,r`
pub fn channel_table(rows: &[ExperimentResult]) -> Table {
    let mut t = Table::new(&["instance", "user", "p", "r"]);
    for r in rows {
        for (i, &(p, q)) in r.channels.iter().enumerate() {
            t.push(vec![r.instance.to_string(), i.to_string(), f(p), f(q)]);
        }
    }
    t
}

/// One evaluation of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub policy: String,
    pub mode: String,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub estimate: Estimate,
}

/// `policy,mode,horizon,runs,seed,mean,stderr`
pub fn evaluation_table(rows: &[EvaluationRow]) -> Table {
    let mut t = Table::new(&[
        "policy", "mode", "horizon", "runs", "seed", "mean", "stderr",
    ]);
    for r in rows {
        t.push(vec![
            r.policy.clone(),
            r.mode.clone(),
            r.horizon.to_string(),
            r.runs.to_string(),
            r.seed.to_string(),
            f(r.estimate.mean),
            f(r.estimate.stderr),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [
            0.1,
            1.0 / 3.0,
            2.0_f64.sqrt(),
            1e-300,
            5e-324,
            -7.25,
            0.0,
            1.6289,
        ] {
            let s = format_float(x);
            assert_eq!(parse_float(&s).unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn table_round_trip() {
        let t = memory_table(&[MemoryPoint {
            p: 0.6,
            r: 0.4,
            v_opt: 1.0 / 3.0,
            v_index: 0.3,
            v_nofb: 0.1 + 0.2,
        }]);
        let back = Table::read_csv(&t.to_csv_bytes().unwrap()[..]).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.float_column("v_opt").unwrap()[0], Some(1.0 / 3.0));
        assert_eq!(back.float_column("v_nofb").unwrap()[0], Some(0.1 + 0.2));
    }
}
