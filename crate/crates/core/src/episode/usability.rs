use crate::latency::LatencyEstimate;
use crate::protocol::RawSession;
use crate::report::UsabilityStats;
use crate::tactile::DEFAULT_CURATION_THRESHOLD;

use super::{build_episode, estimate_session_latency, PipelineConfig, SessionLatencyOptions};

/// Where a session's pose latency comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyChoice {
    Fixed(LatencyEstimate),
    /// Estimated from the session's own marker sweep.
    Auto(SessionLatencyOptions),
}

/// One session queued for processing. A session that failed to load is
/// carried as its error code and message so it still counts in the report.
#[derive(Debug, Clone)]
pub struct SessionJob {
    pub id: String,
    pub session: Result<RawSession, (String, String)>,
    pub config: PipelineConfig,
    pub latency: LatencyChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub id: String,
    pub usable: bool,
    /// `OK` for usable sessions, otherwise the error code.
    pub reason: String,
    pub detail: String,
    pub frames: usize,
    pub dropped_frames: usize,
    pub warnings: usize,
    pub active_tactile_fraction: f64,
    pub latency_s: Option<f64>,
}

impl SessionOutcome {
    fn rejected(id: &str, code: &str, detail: String) -> Self {
        Self {
            id: id.to_string(),
            usable: false,
            reason: code.to_string(),
            detail,
            frames: 0,
            dropped_frames: 0,
            warnings: 0,
            active_tactile_fraction: 0.0,
            latency_s: None,
        }
    }
}

fn process_job(job: &SessionJob) -> SessionOutcome {
    let session = match &job.session {
        Ok(s) => s,
        Err((code, msg)) => return SessionOutcome::rejected(&job.id, code, msg.clone()),
    };
    let latency = match job.latency {
        LatencyChoice::Fixed(l) => l,
        LatencyChoice::Auto(opts) => match estimate_session_latency(session, &job.config.controller_cal, &opts) {
            Ok(l) => l,
            Err(e) => return SessionOutcome::rejected(&job.id, e.code(), e.to_string()),
        },
    };
    let mut cfg = job.config.clone();
    cfg.latency = latency;
    match build_episode(session, &cfg) {
        Ok(ep) => SessionOutcome {
            id: job.id.clone(),
            usable: true,
            reason: "OK".into(),
            detail: String::new(),
            frames: ep.len(),
            dropped_frames: (ep.provenance.dropped_head + ep.provenance.dropped_tail) as usize,
            warnings: ep.provenance.warnings.len(),
            active_tactile_fraction: ep.active_tactile_fraction(DEFAULT_CURATION_THRESHOLD),
            latency_s: Some(latency.delta_star),
        },
        Err(e) => {
            let mut o = SessionOutcome::rejected(&job.id, e.code(), e.to_string());
            o.latency_s = Some(latency.delta_star);
            o
        }
    }
}

/// Processes every job, in parallel across sessions, and aggregates the
/// outcomes in job order.
pub fn usability_report(jobs: &[SessionJob]) -> UsabilityStats {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let mut outcomes: Vec<Option<SessionOutcome>> = vec![None; jobs.len()];
    std::thread::scope(|scope| {
        let chunk = jobs.len().div_ceil(workers).max(1);
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(process_job).collect::<Vec<_>>()))
            .collect();
        let mut i = 0;
        for h in handles {
            for o in h.join().expect("session worker panicked") {
                outcomes[i] = Some(o);
                i += 1;
            }
        }
    });
    UsabilityStats::from_outcomes(outcomes.into_iter().map(|o| o.expect("every job processed")).collect())
}
