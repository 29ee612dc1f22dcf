use std::time::Instant;

use rayon::prelude::*;

use crate::error::Error;
use crate::fluctuation::{
    crooks_check, heat_exchange_check, jarzynski_check, tasaki_two_temperature, work_statistics, INEQUALITY_SLACK,
};
use crate::feedback::{jsu_check, jsu_error_check};
use crate::random::derive_seed;
use crate::sweep::{run_trial, TrialRecord};

use super::config::{ExperimentConfig, Kind};
use super::report::RunReport;

/// Failure that ends a run before a report exists.
#[derive(Debug)]
pub enum RunError {
    Io(std::io::Error),
    Pool(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Io(e) => write!(f, "I/O error: {e}"),
            RunError::Pool(e) => write!(f, "worker pool: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

/// Per-trial seed of a randomized suite; see [`derive_seed`].
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    derive_seed(master, trial)
}

fn single(cfg: &ExperimentConfig) -> std::result::Result<TrialRecord, Error> {
    let tol = cfg.tolerance();
    let kind = cfg.kind();
    match kind {
        Kind::Validate => {
            let ch = cfg.build_channel()?;
            let r = ch.validate(tol)?;
            Ok(TrialRecord::new("validate", r.tp_defect, 0.0, r.tp_defect, r.is_tp)
                .detail("is_unital", r.is_unital as u8 as f64)
                .detail("dim_in", ch.dim_in() as f64)
                .detail("dim_out", ch.dim_out() as f64)
                .with_channel(&ch))
        }
        Kind::Jarzynski => {
            let ch = cfg.build_channel()?;
            let (a, b) = cfg.build_observables()?;
            let (alpha, beta) = match (cfg.beta0, cfg.beta1) {
                (Some(b0), Some(b1)) => (b0, b1),
                _ => (cfg.alpha.expect("validated"), cfg.beta.expect("validated")),
            };
            let r = if cfg.beta0.is_some() {
                tasaki_two_temperature(&ch, &a, &b, alpha, beta, tol)?
            } else {
                jarzynski_check(&ch, &a, &b, alpha, beta, tol)?
            };
            let mut rec = TrialRecord::new("jarzynski", r.lhs, r.rhs, r.relative_gap, r.holds)
                .detail("alpha", alpha)
                .detail("beta", beta);
            if alpha == beta && alpha != 0.0 && ch.is_square() {
                let w = work_statistics(&ch, &a, &b, beta)?;
                rec = rec
                    .detail("mean_work", w.mean_work)
                    .detail("delta_f", w.delta_f)
                    .detail("second_law_gap", w.second_law_gap)
                    .detail("second_law_holds", w.second_law_holds(INEQUALITY_SLACK) as u8 as f64);
            }
            Ok(rec.with_channel(&ch))
        }
        Kind::Crooks => {
            let ch = cfg.build_channel()?;
            let (a, b) = cfg.build_observables()?;
            let r = crooks_check(&ch, &a, &b, cfg.alpha.expect("validated"), tol)?;
            Ok(TrialRecord::new("crooks", r.max_residual, 0.0, r.max_residual, r.holds)
                .detail("bins", r.bins.len() as f64)
                .detail("unmatched_mass", r.unmatched_mass)
                .with_channel(&ch))
        }
        Kind::Heat => {
            let ch = cfg.build_channel()?;
            let (a, b) = cfg.build_observables()?;
            let r = heat_exchange_check(&ch, &a, &b, cfg.alpha.expect("validated"), cfg.beta.expect("validated"), tol)?;
            let gap = (r.identity_average - 1.0).abs();
            let holds = gap <= tol && r.delta_s >= -INEQUALITY_SLACK;
            Ok(TrialRecord::new("heat", r.identity_average, 1.0, gap, holds)
                .detail("delta_s", r.delta_s)
                .detail("mean_change_a", r.mean_change_a)
                .detail("mean_change_b", r.mean_change_b)
                .with_channel(&ch))
        }
        Kind::Feedback => {
            let p = cfg.build_protocol()?;
            let r = if p.error_model.is_some() { jsu_error_check(&p, tol)? } else { jsu_check(&p, tol)? };
            let efficacy = r.efficacy_holds.ok_or_else(|| {
                Error::Contract("first channel is not unital, the efficacy relation does not apply".into())
            })?;
            let mut rec = TrialRecord::new("feedback", r.generalized_average, r.gamma_tilde, r.efficacy_gap(), efficacy)
                .detail("gamma", r.gamma)
                .detail("gamma_tilde", r.gamma_tilde)
                .detail("normalization", r.normalization)
                .detail("mutual_information", r.mutual_information.average)
                .detail("mi_equality_value", r.mi_equality_value);
            if let Some(mi) = r.mi_equality_holds {
                rec.holds &= mi;
                rec = rec.detail("mi_gap", r.mi_gap());
            }
            Ok(rec.with_channel(&p.first_channel))
        }
        Kind::Randomsuite => unreachable!("handled by the suite runner"),
    }
}

fn records(cfg: &ExperimentConfig) -> Vec<TrialRecord> {
    let tol = cfg.tolerance();
    match cfg.kind() {
        Kind::Randomsuite => {
            let suite = cfg.suite.expect("validated");
            let master = cfg.seed.expect("validated");
            (0..cfg.trials()).into_par_iter().map(|t| run_trial(suite, t, trial_seed(master, t), tol)).collect()
        }
        kind => {
            let mut rec = single(cfg).unwrap_or_else(|e| TrialRecord::failed(kind.name(), &e));
            rec.seed = cfg.seed.unwrap_or(0);
            vec![rec]
        }
    }
}

fn missing_input(cfg: &ExperimentConfig) -> Option<std::io::Error> {
    let path = match (&cfg.channel, &cfg.protocol) {
        (Some(super::config::ChannelSpec::File { path }), _) => path.clone(),
        (_, Some(super::config::ProtocolSource::File(path))) => path.clone(),
        _ => return None,
    };
    let full = if path.is_absolute() { path } else { cfg.base_dir.join(path) };
    std::fs::metadata(&full).err().map(|e| std::io::Error::new(e.kind(), format!("{}: {e}", full.display())))
}

/// Runs every trial of the config on `jobs` workers and assembles the report
/// in trial order.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunReport, RunError> {
    if let Some(e) = missing_input(cfg) {
        return Err(RunError::Io(e));
    }
    let start = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
    let recs = pool.install(|| records(cfg));
    let suite = (cfg.kind() == Kind::Randomsuite).then(|| cfg.suite.expect("validated").name().to_string());
    Ok(RunReport::new(cfg.kind().name(), suite, cfg.seed, cfg.tolerance(), recs, start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::super::config::parse_config_str;
    use super::*;

    #[test]
    fn parallel_and_serial_agree() {
        let cfg = parse_config_str(r#"{"seed": 42, "suite": "jarzynski", "trials": 16}"#, Some(Kind::Randomsuite), None).unwrap();
        let a = run_experiment(&cfg, Some(1)).unwrap();
        let b = run_experiment(&cfg, Some(4)).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.all_hold());
        assert!(a.records.iter().enumerate().all(|(k, r)| r.trial == k as u64 && r.seed == trial_seed(42, k as u64)));
    }

    #[test]
    fn amplitude_damping_fixture_fails() {
        let cfg = parse_config_str(
            r#"{"channel": {"type": "amplitude_damping", "gamma": 1.0},
                "a": {"diagonal": [0, 1]}, "b": {"diagonal": [0, 1]},
                "alpha": 1.0986122886681098, "beta": 1.0986122886681098}"#,
            Some(Kind::Jarzynski),
            None,
        )
        .unwrap();
        let r = run_experiment(&cfg, Some(1)).unwrap();
        assert!(!r.all_hold());
        assert!((r.records[0].lhs - 1.5).abs() < 1e-12);
    }

    #[test]
    fn contract_errors_are_recorded() {
        let cfg = parse_config_str(
            r#"{"channel": {"type": "amplitude_damping", "gamma": 0.3},
                "a": {"diagonal": [0, 1]}, "b": {"diagonal": [0, 1]}, "alpha": 1.0}"#,
            Some(Kind::Crooks),
            None,
        )
        .unwrap();
        let r = run_experiment(&cfg, None).unwrap();
        assert!(!r.all_hold());
        assert!(r.records[0].error.as_deref().unwrap().contains("bistochastic"));
        assert!(r.to_json().contains("\"lhs\": null"));
    }

    #[test]
    fn missing_file_is_io() {
        let cfg = parse_config_str(r#"{"channel": {"type": "file", "path": "/nonexistent/ch.json"}}"#, Some(Kind::Validate), None)
            .unwrap();
        assert!(matches!(run_experiment(&cfg, None), Err(RunError::Io(_))));
    }
}
