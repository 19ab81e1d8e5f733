//! Sequential data-query trials against a provisioned network.

use std::time::Duration;

use blendmas_core::bench::{trial_rows, ScenarioConfig, TrialRecord};
use blendmas_core::contracts::Action;
use thiserror::Error;

use crate::client::ClientSession;
use crate::config::ServiceKind;
use crate::http::ApiError;
use crate::provision::QUERY_RESOURCE;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no frames to query")]
    NoFrames,
    #[error("trial {trial}: data query returned {status} ({reason})")]
    TrialFailed { trial: u32, status: u16, reason: String },
    #[error(transparent)]
    Api(#[from] ApiError),
}

/// Runs `config.trials` sequential queries over `frames` and returns one
/// row per reported stage plus a transport row per trial. AC and
/// throttling are switched for the run and restored afterwards.
pub async fn run_scenario(
    client: &ClientSession,
    config: &ScenarioConfig,
    frames: &[String],
) -> Result<Vec<TrialRecord>, HarnessError> {
    if config.trials == 0 {
        return Ok(Vec::new());
    }
    if frames.is_empty() {
        return Err(HarnessError::NoFrames);
    }
    let mut urls = client.urls().clone();
    if !config.target.is_empty() {
        urls.insert(ServiceKind::Data, config.target.trim_end_matches('/').to_string());
    }
    let session = ClientSession::new(client.account.clone(), urls);
    session.set_ac(config.ac_enabled).await?;
    session.set_throttle(config.cpu_throttle).await?;
    let result = trials(&session, config, frames).await;
    session.set_ac(true).await?;
    if config.cpu_throttle.is_some() {
        session.set_throttle(None).await?;
    }
    result
}

async fn trials(session: &ClientSession, config: &ScenarioConfig, frames: &[String]) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut rows = Vec::new();
    for trial in 0..config.trials {
        let frame = &frames[trial as usize % frames.len()];
        let out = session.query(frame, QUERY_RESOURCE, Action::Get).await?;
        if !out.granted() {
            return Err(HarnessError::TrialFailed {
                trial,
                status: out.status,
                reason: out.reason,
            });
        }
        let total = out.elapsed.as_micros() as u64;
        rows.extend(trial_rows(trial, config.mode, config.ac_enabled, &out.stage_timings.0, total));
        if config.think_time_ms > 0 {
            tokio::time::sleep(Duration::from_millis(config.think_time_ms)).await;
        }
    }
    Ok(rows)
}
