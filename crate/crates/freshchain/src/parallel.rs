//! Threaded worker execution for the cooperative trainer.

use std::sync::mpsc;
use std::thread;

use freshchain_core::agents::a3c::{
    collect_one, A3cTrainer, Executor, LocalAgent, LocalGradients, SequentialExecutor, Tier, TierReport, Trajectory,
};
use freshchain_core::agents::{AgentError, EpisodeSummary};
use freshchain_core::nn::MlpParams;

/// One scoped thread per worker; results come back in worker order, so a
/// synchronous epoch is identical to [`SequentialExecutor`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ThreadedExecutor;

impl Executor for ThreadedExecutor {
    fn collect(
        &mut self,
        workers: &mut [LocalAgent],
        n_steps: usize,
        peer: Option<&MlpParams>,
    ) -> Vec<Result<(Trajectory, LocalGradients), AgentError>> {
        if workers.len() < 2 {
            return SequentialExecutor.collect(workers, n_steps, peer);
        }
        thread::scope(|s| {
            let handles: Vec<_> = workers.iter_mut().map(|w| s.spawn(move || collect_one(w, n_steps, peer))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(AgentError::Config("worker thread panicked".into()))))
                .collect()
        })
    }
}

type Submission = (usize, u64, f64, Result<(Trajectory, LocalGradients), AgentError>);

/// Retailer tier without a barrier: each worker's submission is applied as soon as it
/// arrives, weighted by its staleness, and only that worker receives the result.
fn async_retail_epoch(tier: &mut Tier, n_steps: usize, peer: Option<&MlpParams>) -> Result<TierReport, AgentError> {
    let Tier { coordinator, workers, .. } = tier;
    let mut rewards: Vec<f64> = workers.iter().map(|w| w.mean_reward).collect();
    let mut report = TierReport::default();
    let mut fatal = None;
    let (sub_tx, sub_rx) = mpsc::channel::<Submission>();
    thread::scope(|s| {
        let mut replies = Vec::with_capacity(workers.len());
        for (k, w) in workers.iter_mut().enumerate() {
            let (tx, rx) = mpsc::channel::<(MlpParams, MlpParams, u64)>();
            replies.push(tx);
            let sub_tx = sub_tx.clone();
            s.spawn(move || {
                let res = collect_one(w, n_steps, peer);
                if sub_tx.send((k, w.last_sync, w.mean_reward, res)).is_err() {
                    return;
                }
                if let Ok((a, c, t)) = rx.recv() {
                    w.actor = a;
                    w.critic = c;
                    w.last_sync = t;
                }
            });
        }
        drop(sub_tx);
        for (k, t_k, mean, res) in sub_rx.iter() {
            match res {
                Ok((traj, grads)) if fatal.is_none() => {
                    rewards[k] = mean;
                    match coordinator.apply_submission(k, t_k, &rewards, &traj, &grads) {
                        Ok((u, w)) => {
                            report.update = u;
                            report.weights.push(w);
                        }
                        Err(e) => fatal = Some(e),
                    }
                }
                Ok(_) => {}
                Err(AgentError::NonFinite(_)) => report.failed_workers += 1,
                Err(e) => fatal = fatal.take().or(Some(e)),
            }
            let _ = replies[k].send((coordinator.actor.clone(), coordinator.critic.clone(), coordinator.updates));
        }
    });
    match fatal {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// One epoch with an asynchronous retailer tier; the DC tier stays synchronous.
pub fn train_epoch_async(trainer: &mut A3cTrainer) -> Result<EpisodeSummary, AgentError> {
    let n = trainer.steps_per_epoch();
    let (retail_actor, dc_actor) = trainer.begin_epoch();
    let r = async_retail_epoch(&mut trainer.retail, n, dc_actor.as_ref())?;
    let d = trainer.dc_epoch(&mut ThreadedExecutor, &retail_actor)?;
    Ok(trainer.end_epoch(r, d))
}
