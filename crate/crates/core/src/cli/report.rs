use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::format_sig17;
use crate::sweep::TrialRecord;

use super::config::Format;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: u64,
    pub pass_count: u64,
    pub fail_count: u64,
    /// Largest finite gap over all trials.
    pub max_gap: f64,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub tolerance: f64,
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

impl RunReport {
    pub fn new(kind: &str, suite: Option<String>, master_seed: Option<u64>, tolerance: f64, records: Vec<TrialRecord>, wall: f64) -> Self {
        let pass_count = records.iter().filter(|r| r.holds).count() as u64;
        let max_gap = records.iter().map(|r| r.gap).filter(|g| g.is_finite()).fold(0.0, f64::max);
        let trials = records.len() as u64;
        let summary = Summary { trials, pass_count, fail_count: trials - pass_count, max_gap, wall_time_seconds: wall };
        Self { kind: kind.to_string(), suite, master_seed, tolerance, records, summary }
    }

    pub fn all_hold(&self) -> bool {
        self.summary.fail_count == 0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per trial: `trial,seed,kind,lhs,rhs,gap,holds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,seed,kind,lhs,rhs,gap,holds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.trial,
                r.seed,
                r.kind,
                format_sig17(r.lhs),
                format_sig17(r.rhs),
                format_sig17(r.gap),
                r.holds
            ));
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }
}

pub fn emit_report(report: &RunReport, format: Format, out: &mut dyn Write) -> std::io::Result<()> {
    out.write_all(report.render(format).as_bytes())?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(n: usize) -> RunReport {
        let records = (0..n)
            .map(|k| {
                let mut r = TrialRecord::new("jarzynski", 1.0 + 1e-13 * k as f64, 1.0, 1e-13 * k as f64, true);
                r.trial = k as u64;
                r.seed = 7 + k as u64;
                r
            })
            .collect();
        RunReport::new("randomsuite", Some("jarzynski".into()), Some(7), 1e-9, records, 0.25)
    }

    #[test]
    fn csv_shapes() {
        assert_eq!(report(0).to_csv(), "trial,seed,kind,lhs,rhs,gap,holds\n");
        let csv = report(1).to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "0,7,jarzynski,1.0000000000000000e0,1.0000000000000000e0,0.0000000000000000e0,true"
        );
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let r = report(3);
        let back: RunReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.summary.pass_count + r.summary.fail_count, r.summary.trials);
    }
}
